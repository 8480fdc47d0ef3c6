"""Builders for explicit models and the countable example families."""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .laws import Dirac, Exponential, Gamma, Rayleigh, WaitingLaw
from .model import Family, ModelError, SemiMarkovModel, Truncation


def _law_rule(law) -> Callable:
    return law if callable(law) and not isinstance(law, WaitingLaw) else (lambda x: law)


def explicit(P, laws, labels: Sequence | None = None, name: str = "explicit") -> SemiMarkovModel:
    """Finite model from a dense matrix (or nested mapping) and a law list."""
    if isinstance(P, dict):
        transitions = P
        labels = list(labels) if labels is not None else list(laws.keys() if isinstance(laws, dict) else P.keys())
    else:
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        labels = list(labels) if labels is not None else list(range(n))
        transitions = {labels[i]: {labels[j]: float(P[i, j]) for j in range(n) if P[i, j] != 0} for i in range(n)}
    if isinstance(laws, WaitingLaw):
        laws = {x: laws for x in labels}
    elif not isinstance(laws, dict):
        laws = dict(zip(labels, laws))
    return SemiMarkovModel(transitions, {x: laws[x] for x in labels}, name=name)


def alternator(rate1: float = 1.0, rate2: float = 1.0) -> SemiMarkovModel:
    """Two states that always swap, with exponential waits."""
    return explicit([[0.0, 1.0], [1.0, 0.0]], [Exponential(rate1), Exponential(rate2)], labels=[1, 2], name="alternator")


def birth_death(up, law, radius: int, policy: str = "error") -> SemiMarkovModel:
    """Birth-death chain on {0, ..., radius}.

    ``p(0, 1) = 1``; for ``x >= 1`` the chain moves up with probability
    ``up(x)`` and down otherwise.  ``up`` may be a constant; ``law`` a law or
    a callable ``x -> law``.
    """
    up_fn = up if callable(up) else (lambda x, c=float(up): c)
    law_fn = _law_rule(law)
    radius = int(radius)
    if radius < 1:
        raise ModelError("birth-death radius must be at least 1")
    transitions: dict = {0: {1: 1.0}}
    for x in range(1, radius + 1):
        p = float(up_fn(x))
        row = {}
        if p != 0.0:
            row[x + 1] = p
        if 1.0 - p != 0.0:
            row[x - 1] = 1.0 - p
        transitions[x] = row
    if policy == "renormalize":
        row = transitions[radius]
        row.pop(radius + 1, None)
        if not row:
            raise ModelError("renormalized boundary row is empty")
        total = sum(row.values())
        transitions[radius] = {y: p / total for y, p in row.items()}
    laws = {x: law_fn(x) for x in range(radius + 1)}
    fam = Family("birth_death", {"up": up_fn, "law": law_fn, "policy": policy},
                 rebuild=lambda r: birth_death(up_fn, law_fn, int(r), policy))
    return SemiMarkovModel(transitions, laws, truncation=Truncation(radius, policy), family=fam, name="birth_death")


def lattice_random_walk(dimension: int, potential: Callable, law, radius: int, force: Sequence[float] | float = 0.0,
                        policy: str = "error") -> SemiMarkovModel:
    """Nearest-neighbour walk on the box ``|x|_inf <= radius`` of Z^d.

    ``p_xy`` is proportional to ``exp(-(U(y)-U(x))/2 + F(x,y)/2)`` where the
    force is a constant vector field: ``F(x, x +/- e_i) = +/- force[i]``.
    States are integer tuples.
    """
    d = int(dimension)
    f = np.broadcast_to(np.asarray(force, dtype=float), (d,)).copy()
    law_fn = _law_rule(law)
    radius = int(radius)
    states = list(itertools.product(range(-radius, radius + 1), repeat=d))
    steps = []
    for i in range(d):
        e = [0] * d
        e[i] = 1
        steps.append((tuple(e), f[i]))
        e = [0] * d
        e[i] = -1
        steps.append((tuple(e), -f[i]))
    transitions = {}
    for x in states:
        ux = potential(x)
        weights = {}
        for step, fv in steps:
            y = tuple(a + b for a, b in zip(x, step))
            weights[y] = math.exp(-(potential(y) - ux) / 2.0 + fv / 2.0)
        if policy == "renormalize":
            weights = {y: w for y, w in weights.items() if max(abs(c) for c in y) <= radius}
        total = sum(weights.values())
        transitions[x] = {y: w / total for y, w in weights.items()}
    laws = {x: law_fn(x) for x in states}
    fam = Family("lattice_rw", {"dimension": d, "potential": potential, "force": f, "law": law_fn, "policy": policy},
                 rebuild=lambda r: lattice_random_walk(d, potential, law_fn, int(r), f, policy))
    return SemiMarkovModel(transitions, laws, truncation=Truncation(radius, policy), family=fam, name="lattice_rw")


def builtin_examples() -> dict[str, SemiMarkovModel]:
    """Small closed models used throughout the docs and acceptance suite."""
    P3 = [[0.0, 0.6, 0.4], [0.3, 0.2, 0.5], [0.5, 0.5, 0.0]]
    return {
        "alternator": alternator(1.0, 1.0),
        "ctmc2": alternator(1.0, 2.0),
        "ctmc3": explicit(P3, [Exponential(1.0), Exponential(2.0), Exponential(0.5)], name="ctmc3"),
        "gamma3": explicit(P3, [Gamma(2.0, 3.0), Gamma(2.0, 1.0), Gamma(2.0, 5.0)], name="gamma3"),
        "mixed3": explicit(P3, [Exponential(1.5), Gamma(0.5, 1.0), Rayleigh(0.8)], name="mixed3"),
        "dtmc3": explicit(P3, [Dirac(1.0)] * 3, name="dtmc3"),
        "birth_death": birth_death(0.25, lambda x: Gamma(1.0, x + 1.0), radius=40, policy="renormalize"),
    }
