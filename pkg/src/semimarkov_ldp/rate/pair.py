"""Parametric measure-flow pairs and the joint rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from ..kernel.laws import INF, LawError, WaitingLaw, mixture, relative_entropy_waiting
from ..kernel.model import ModelError, SemiMarkovModel
from ..simulate import Flow

MASS_TOL = 1e-10
DIVERGENCE_TOL = 1e-12


@dataclass
class MeasureFlowPair:
    """A pair (mu, Q) with ``mu(x, ds) = Q_x s tilde_mu_x(ds) + atom_x delta_inf``.

    States with ``Q_x = 0`` default to ``tilde_mu_x = psi_x``; their only
    contribution to ``mu`` is the atom at infinity.
    """

    model: SemiMarkovModel
    flow: Flow
    tilde_mu: dict = field(default_factory=dict)
    atoms: dict = field(default_factory=dict)

    def __post_init__(self):
        for x, v in self.atoms.items():
            if v < 0:
                raise ValueError(f"atom at infinity for {x!r} is negative")
        for x in list(self.tilde_mu) + list(self.atoms):
            if x not in self.model.index:
                raise ModelError(f"{x!r} is not a retained state")

    # ---- constructors -----------------------------------------------------
    @classmethod
    def build(cls, model: SemiMarkovModel, flow: Flow, tilde_mu: Mapping | None = None,
              atoms: Mapping | None = None, normalize: bool = True) -> "MeasureFlowPair":
        """Pair from a flow shape; with ``normalize`` the flow is rescaled to unit total mass."""
        tilde_mu = dict(tilde_mu or {})
        atoms = {x: float(v) for x, v in (atoms or {}).items()}
        pair = cls(model, flow, tilde_mu, atoms)
        if normalize:
            time_mass = sum(q * pair.law(x).mean() for x, q in flow.exit_current().items())
            room = 1.0 - sum(atoms.values())
            if time_mass <= 0 or room < 0:
                raise ValueError("cannot normalize: no time mass or atoms exceed one")
            pair = cls(model, flow.scaled(room / time_mass), tilde_mu, atoms)
        return pair

    @classmethod
    def stationary(cls, model: SemiMarkovModel) -> "MeasureFlowPair":
        """The law-of-large-numbers point of a finite closed model."""
        return cls(model, Flow(model.stationary_flow()))

    # ---- queries ------------------------------------------------------------
    def law(self, x) -> WaitingLaw:
        return self.tilde_mu.get(x, self.model.law(x))

    def exit_current(self) -> dict:
        return self.flow.exit_current()

    def total_mass(self) -> float:
        out = self.flow.exit_current()
        return float(sum(q * self.law(x).mean() for x, q in out.items()) + sum(self.atoms.values()))

    def pi(self) -> dict:
        """State marginal ``mu(x, (0, inf])``."""
        out = self.flow.exit_current()
        return {x: out.get(x, 0.0) * self.law(x).mean() + self.atoms.get(x, 0.0) for x in self.model.states}

    def domain_violations(self) -> list[str]:
        """Reasons the pair lies outside the effective domain (empty when inside)."""
        reasons = []
        for x, d in self.flow.divergence().items():
            if abs(d) > DIVERGENCE_TOL:
                reasons.append(f"divergence {d:.3g} at {x!r}")
        mass = self.total_mass()
        if abs(mass - 1.0) > MASS_TOL:
            reasons.append(f"total mass {mass:.15g} differs from 1")
        return reasons

    def mix(self, other: "MeasureFlowPair", alpha: float) -> "MeasureFlowPair":
        """Convex combination ``alpha * self + (1 - alpha) * other`` of the measures and flows."""
        if other.model is not self.model:
            raise ModelError("pairs refer to different models")
        edges = set(self.flow.entries) | set(other.flow.entries)
        flow = Flow({e: alpha * self.flow.get(*e) + (1 - alpha) * other.flow.get(*e) for e in edges})
        qa, qb, q = self.exit_current(), other.exit_current(), flow.exit_current()
        tilde = {}
        for x, qx in q.items():
            wa, wb = alpha * qa.get(x, 0.0), (1 - alpha) * qb.get(x, 0.0)
            tilde[x] = mixture([self.law(x), other.law(x)], [wa / qx, wb / qx])
        atoms = {x: alpha * self.atoms.get(x, 0.0) + (1 - alpha) * other.atoms.get(x, 0.0)
                 for x in set(self.atoms) | set(other.atoms)}
        return MeasureFlowPair(self.model, flow, tilde, atoms)


@dataclass(frozen=True)
class RateBreakdown:
    """Per-state summands of the joint rate."""

    jump: dict
    waiting: dict
    atom: dict
    total: float
    violations: tuple = ()

    def as_records(self) -> list[dict]:
        states = list(dict.fromkeys(list(self.jump) + list(self.waiting) + list(self.atom)))
        return [{"state": x, "jump_entropy": self.jump.get(x, 0.0), "waiting_entropy": self.waiting.get(x, 0.0),
                 "atom_term": self.atom.get(x, 0.0)} for x in states]


def _row_kl(pair: MeasureFlowPair, x, qx: float) -> float:
    total = 0.0
    for (a, b), q in pair.flow.entries.items():
        if a != x:
            continue
        p = pair.model.p(a, b)
        if p <= 0:
            return INF
        total += q * math.log(q / (qx * p))
    return max(total, 0.0)


def joint_rate(pair: MeasureFlowPair) -> RateBreakdown:
    """Joint rate of a measure-flow pair.

    ``sum_x Q_x H(tilde Q_x | p_x) + Q_x H(tilde mu_x | psi_x) + zeta(x) mu(x, {inf})``
    on the effective domain (divergence-free, unit mass) and ``inf`` off it.
    A zero atom contributes zero even when ``zeta(x) = inf``.
    """
    violations = tuple(pair.domain_violations())
    if violations:
        return RateBreakdown({}, {}, {}, INF, violations)
    out = pair.exit_current()
    jump, waiting, atom = {}, {}, {}
    for x in pair.model.states:
        qx = out.get(x, 0.0)
        if qx > 0:
            jump[x] = _row_kl(pair, x, qx)
            law = pair.law(x)
            kl = 0.0 if law is pair.model.law(x) else relative_entropy_waiting(law, pair.model.law(x))
            waiting[x] = qx * kl
        a = pair.atoms.get(x, 0.0)
        if a > 0:
            atom[x] = pair.model.law(x).zeta * a
    total = sum(jump.values()) + sum(waiting.values()) + sum(atom.values())
    return RateBreakdown(jump, waiting, atom, float(total))


def optimal_measure(Q: Flow, model: SemiMarkovModel) -> MeasureFlowPair:
    """The measure minimizing the joint rate over pairs with flow ``Q``.

    Positive-weight states get their waiting law exponentially tilted by the
    optimal ``lam``; any remaining mass sits as an atom at infinity on an
    outside state of smallest abscissa.
    """
    from .legendre import LegendreError, flow_marginal_rate, weighted_laws

    res = flow_marginal_rate(Q, model, detail=True)
    if not math.isfinite(res.value):
        raise LegendreError(f"flow has infinite rate ({res.case}); no minimizing measure")
    out = Q.exit_current()
    if res.case == "empty support":
        x = min(model.states, key=lambda s: model.law(s).zeta)
        return MeasureFlowPair(model, Q, {}, {x: 1.0})
    if not math.isfinite(res.lam):
        # boundary cases: point masses at the essential bounds
        from ..kernel.laws import Dirac
        side = 0 if res.lam < 0 else 1
        tilde = {x: Dirac(model.law(x).ess_bounds()[side]) for x in out}
        if any(model.law(x).atom(model.law(x).ess_bounds()[side]) == 0 for x in out):
            raise LawError("boundary minimizer requires atoms at the essential bounds")
        return MeasureFlowPair(model, Q, tilde, {})
    tilde = {x: model.law(x).exp_tilt(res.lam) if res.lam != 0.0 else model.law(x) for x in out}
    pair = MeasureFlowPair(model, Q, tilde, {})
    deficit = 1.0 - pair.total_mass()
    if deficit > MASS_TOL:
        outside = [x for x in model.states if out.get(x, 0.0) <= 0]
        x = min(outside, key=lambda s: model.law(s).zeta)
        pair = MeasureFlowPair(model, Q, tilde, {x: deficit})
    return pair
