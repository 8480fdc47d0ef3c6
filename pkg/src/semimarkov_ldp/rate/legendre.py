"""Weighted log-MGF sums, their Legendre transform and the flow marginal rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import optimize

from ..kernel.laws import Gamma, WaitingLaw
from ..kernel.model import ModelError, SemiMarkovModel

INF = math.inf
BISECTION_STEPS = 200


class LegendreError(ValueError):
    """Legendre analysis outside its supported hypotheses."""


@dataclass(frozen=True)
class WeightedLaws:
    """The positive-weight states V+ with their laws and weights Q_x."""

    states: tuple
    laws: tuple
    weights: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.laws) == 0

    @property
    def m_q(self) -> float:
        return float(sum(w * law.ess_bounds()[0] for law, w in zip(self.laws, self.weights)))

    @property
    def big_m_q(self) -> float:
        return float(sum(w * law.ess_bounds()[1] for law, w in zip(self.laws, self.weights)))


def weighted_laws(weights, model: SemiMarkovModel | None = None) -> WeightedLaws:
    """Normalize the accepted weight formats.

    ``weights`` may be a :class:`~semimarkov_ldp.rate.pair.MeasureFlowPair`,
    a Flow (weights are exit currents), a mapping state -> Q_x, or a
    sequence of ``(law, weight)`` pairs.  Zero weights are dropped.
    """
    from ..simulate import Flow
    from .pair import MeasureFlowPair

    if isinstance(weights, WeightedLaws):
        return weights
    if isinstance(weights, MeasureFlowPair):
        model = weights.model
        weights = weights.flow
    if isinstance(weights, Flow):
        weights = weights.exit_current()
    if isinstance(weights, Mapping):
        if model is None:
            raise ModelError("state weights need a model to look up waiting laws")
        items = [(x, model.law(x), float(w)) for x, w in weights.items()]
    else:
        items = [(None, law, float(w)) for law, w in weights]
    for _, _, w in items:
        if w < 0 or math.isnan(w):
            raise ValueError(f"weights must be nonnegative, got {w!r}")
    items = [it for it in items if it[2] > 0]
    return WeightedLaws(tuple(it[0] for it in items), tuple(it[1] for it in items), np.array([it[2] for it in items]))


def gq(weights, lam: float, model: SemiMarkovModel | None = None) -> float:
    """G_Q(lam) = sum_x Q_x log E_x[exp(lam tau)], ``inf`` at or beyond zeta_Q."""
    w = weighted_laws(weights, model)
    return _gq(w, float(lam))


def _gq(w: WeightedLaws, lam: float) -> float:
    total = 0.0
    for law, q in zip(w.laws, w.weights):
        v = float(law.log_mgf(lam))
        if v == INF:
            return INF
        total += q * v
    return total


def fq(weights, lam: float, model: SemiMarkovModel | None = None) -> float:
    """F_Q(lam) = sum_x Q_x E_x[tau e^{lam tau}] / E_x[e^{lam tau}], for lam < zeta_Q."""
    w = weighted_laws(weights, model)
    z = _zeta_q(w)
    if not float(lam) < z:
        raise LegendreError(f"F_Q is only defined below zeta_Q={z:g}; got lam={lam:g}")
    return _fq(w, float(lam))


def _fq(w: WeightedLaws, lam: float) -> float:
    return float(sum(q * float(law.tilted_mean(lam)) for law, q in zip(w.laws, w.weights)))


def zeta_q(weights, model: SemiMarkovModel | None = None) -> float:
    """sup{lam : G_Q(lam) < inf}; for finitely many positive weights this is min_x zeta(x)."""
    w = weighted_laws(weights, model)
    if w.empty:
        raise LegendreError("zeta_Q needs a nonempty positive-weight set")
    return _zeta_q(w)


def _zeta_q(w: WeightedLaws) -> float:
    return min((law.zeta for law in w.laws), default=INF)


@dataclass(frozen=True)
class LegendrePoint:
    """Value of G*_Q at ``a`` together with the branch that produced it."""

    value: float
    branch: str  # "interior" | "lower boundary" | "upper boundary" | "outside"
    lam_star: float
    a: float
    m_q: float
    big_m_q: float
    zeta_q: float


def _require_divergence_at_zeta(w: WeightedLaws, z: float) -> None:
    if math.isfinite(z):
        for law, q in zip(w.laws, w.weights):
            if law.zeta == z and math.isfinite(law.mgf_at_zeta):
                raise LegendreError(
                    f"Legendre analysis unsupported: G_Q(zeta_Q) is finite ({law.describe()} has a finite MGF at zeta)"
                )


def _close(a: float, b: float) -> bool:
    return math.isfinite(b) and abs(a - b) <= 1e-12 * max(1.0, abs(b))


def solve_tilted_mean(w: WeightedLaws, a: float) -> float:
    """The unique lam < zeta_Q with F_Q(lam) = a, for m_Q < a < M_Q."""
    if len(w.laws) == 1 and isinstance(w.laws[0], Gamma):
        law, q = w.laws[0], float(w.weights[0])
        return law.tilted_mean_inverse(a / q)
    z = _zeta_q(w)
    lo = -1.0
    while _fq(w, lo) >= a:
        lo *= 2.0
        if lo < -1e300:
            raise LegendreError("F_Q(lam) = a: no left bracket")
    if math.isfinite(z):
        gap = 1e-10 * max(1.0, abs(z))
        hi = z - gap
        while _fq(w, hi) <= a:
            gap *= 1e-2
            if gap < 1e-300 or z - gap == z:
                return z - gap
            hi = z - gap
    else:
        hi = 1.0
        while _fq(w, hi) <= a:
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                raise LegendreError("F_Q(lam) = a: no right bracket")
    if not _fq(w, lo) < a < _fq(w, hi):
        return _bisect(w, a, lo, hi)
    return optimize.brentq(lambda t: _fq(w, t) - a, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _bisect(w: WeightedLaws, a: float, lo: float, hi: float) -> float:
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _fq(w, mid) < a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def legendre_point(weights, a: float, model: SemiMarkovModel | None = None) -> LegendrePoint:
    """G*_Q(a) = sup_lam {a lam - G_Q(lam)} with its branch and maximizer."""
    w = weighted_laws(weights, model)
    if w.empty:
        raise LegendreError("G*_Q needs a nonempty positive-weight set")
    a = float(a)
    z = _zeta_q(w)
    _require_divergence_at_zeta(w, z)
    m, big_m = w.m_q, w.big_m_q
    if _close(a, m):
        val = -sum(q * math.log(law.atom(law.ess_bounds()[0])) if law.atom(law.ess_bounds()[0]) > 0 else INF
                   for law, q in zip(w.laws, w.weights))
        return LegendrePoint(float(val) + 0.0, "lower boundary", -INF, a, m, big_m, z)
    if _close(a, big_m):
        val = -sum(q * math.log(law.atom(law.ess_bounds()[1])) if law.atom(law.ess_bounds()[1]) > 0 else INF
                   for law, q in zip(w.laws, w.weights))
        return LegendrePoint(float(val) + 0.0, "upper boundary", INF, a, m, big_m, z)
    if a < m or a > big_m:
        return LegendrePoint(INF, "outside", -INF if a < m else INF, a, m, big_m, z)
    lam = solve_tilted_mean(w, a)
    return LegendrePoint(a * lam - _gq(w, lam), "interior", lam, a, m, big_m, z)


def gq_star(weights, a: float, model: SemiMarkovModel | None = None) -> float:
    """Legendre transform G*_Q(a); see :func:`legendre_point` for diagnostics."""
    return legendre_point(weights, a, model).value


# ---------------------------------------------------------------------------
# flow marginal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowRate:
    """Flow marginal rate with its decomposition."""

    value: float
    jump_entropy: float
    waiting_part: float
    case: str
    lam: float
    zeta_outside: float

    def __float__(self) -> float:
        return self.value


def _row_entropy(model: SemiMarkovModel, flow) -> float:
    total = 0.0
    out = flow.exit_current()
    for (x, y), q in flow.entries.items():
        p = model.p(x, y) if x in model.index else 0.0
        if p <= 0:
            return INF
        total += q * math.log(q / (out[x] * p))
    return max(total, 0.0)


def condition4_certificate(model: SemiMarkovModel) -> tuple[bool, str]:
    """Whether the closed form of the flow marginal is licensed for ``model``."""
    from ..conditions import check_condition4

    report = check_condition4(model)
    if report.verdict == "holds-on-truncation":
        return True, "scale-family condition holds on the truncation"
    if model.is_closed and all(law.mgf_at_zeta == INF for law in model.laws):
        return True, "finite closed state set with every MGF infinite at its abscissa"
    return False, report.detail


def flow_marginal_rate(Q, model: SemiMarkovModel, *, detail: bool = False, tol: float = 1e-12):
    """Flow marginal rate I_2(Q).

    Zero off divergence-free flows; otherwise the row entropy plus
    ``sup_{lam < inf_V zeta} {lam - G_Q(lam)}``, evaluated in closed form
    through the Legendre transform of G_Q (five cases on the position of
    ``lam*(1)`` relative to ``inf_{x not in V+} zeta(x)``).

    Raises
    ------
    LegendreError
        When no scale-family certificate is available; use the joint rate
        with :func:`~semimarkov_ldp.rate.optimal_measure` instead.
    """
    ok, why = condition4_certificate(model)
    if not ok:
        raise LegendreError(f"closed form needs the scale-family condition ({why}); minimize the joint rate instead")
    div = Q.divergence()
    if any(abs(v) > tol for v in div.values()):
        res = FlowRate(INF, INF, INF, "not divergence-free", math.nan, math.nan)
        return res if detail else res.value
    jump = _row_entropy(model, Q)
    out = Q.exit_current()
    w = weighted_laws({x: v for x, v in out.items()}, model)
    outside = [model.laws[i].zeta for i, x in enumerate(model.states) if out.get(x, 0.0) <= 0]
    z_out = min(outside, default=INF)
    if w.empty:
        val = min(law.zeta for law in model.laws)
        res = FlowRate(val, 0.0, val, "empty support", math.nan, z_out)
        return res if detail else res.value
    z = _zeta_q(w)
    _require_divergence_at_zeta(w, z)
    m, big_m = w.m_q, w.big_m_q
    if m > 1 and not _close(1.0, m):
        case, lam, part = "m_Q > 1", -INF, INF
    elif _close(1.0, m):
        part = legendre_point(w, 1.0).value
        case, lam = "m_Q = 1", -INF
    elif 1.0 < big_m and not _close(1.0, big_m):
        lam_star = solve_tilted_mean(w, 1.0)
        if lam_star <= z_out:
            case, lam, part = "interior", lam_star, 1.0 * lam_star - _gq(w, lam_star)
        else:
            case, lam, part = "capped by outside abscissa", z_out, z_out - _gq(w, z_out)
    else:
        # F_Q <= 1 throughout: the objective increases up to the cap
        if math.isfinite(z_out):
            case, lam, part = "M_Q <= 1, capped", z_out, z_out - _gq(w, z_out)
        elif _close(1.0, big_m):
            case, lam, part = "M_Q = 1", INF, legendre_point(w, 1.0).value
        else:
            case, lam, part = "M_Q < 1", INF, INF
    part = max(part, 0.0) if math.isfinite(part) else part
    total = jump + part
    res = FlowRate(total, jump, part, case, lam, z_out)
    return res if detail else res.value
