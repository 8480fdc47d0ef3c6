"""Large deviations for semi-Markov processes: simulation, rate functions and tilts."""

__version__ = "0.1.0"
