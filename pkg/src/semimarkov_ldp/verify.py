"""Independent oracles and the Monte Carlo decay harness.

Each oracle recomputes a quantity from its definition along a code path
that does not go through the routine it checks: the Legendre transform by a
dense grid, the DTMC pair-chain entropy by array arithmetic, the CTMC
occupation rate by a conic program, and the constrained entropy minimum by
duality on a discretized measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import cvxpy as cp
import numpy as np
from scipy import optimize, special

from .kernel.laws import INF, Dirac, Exponential, WaitingLaw
from .kernel.model import ModelError, SemiMarkovModel
from .simulate import Event

GRID_STEP = 1e-4
GRID_REACH = 60.0


class OracleError(ValueError):
    """Oracle called outside its hypotheses."""


def _law_weights(weights, model: SemiMarkovModel | None) -> list[tuple[WaitingLaw, float]]:
    if hasattr(weights, "flow") and hasattr(weights, "model"):
        model, weights = weights.model, weights.flow
    if hasattr(weights, "exit_current"):
        weights = weights.exit_current()
    if isinstance(weights, Mapping):
        if model is None:
            raise OracleError("state weights need a model")
        return [(model.law(x), float(w)) for x, w in weights.items() if w > 0]
    return [(law, float(w)) for law, w in weights if w > 0]


# ---------------------------------------------------------------------------
# Legendre transform by grid search
# ---------------------------------------------------------------------------

def _objective(items, a, lam: np.ndarray) -> np.ndarray:
    total = a * lam
    for law, w in items:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            total = total - w * np.asarray(law.log_mgf(lam), dtype=float)
    return np.where(np.isnan(total), -INF, total)


def grid_legendre_oracle(weights, a: float, step: float = GRID_STEP, model: SemiMarkovModel | None = None,
                         reach: float = GRID_REACH) -> float:
    """``sup_lam {a lam - sum_x Q_x log E_x e^{lam tau}}`` over a grid of spacing ``step``.

    The grid covers ``[-reach, min(zeta, reach)]`` (scaled by the typical
    wait); the best grid point is polished by a bounded scalar search on its
    two neighbouring cells.
    """
    items = _law_weights(weights, model)
    if not items:
        raise OracleError("empty weight set")
    lo_b = sum(w * law.ess_bounds()[0] for law, w in items)
    hi_b = sum(w * law.ess_bounds()[1] for law, w in items)
    if a < lo_b * (1 - 1e-12) - 1e-300 or a > hi_b * (1 + 1e-12):
        return INF
    z = min(law.zeta for law, _ in items)
    scale = max(sum(w for _, w in items) / max(a, 1e-12), 1.0)
    lo = -reach * scale
    hi = min(z - 1e-12 * max(1.0, abs(z)), reach * scale) if math.isfinite(z) else reach * scale
    n = int(math.ceil((hi - lo) / step)) + 1
    best_val, best_lam = -INF, lo
    # chunked to bound memory
    for start in range(0, n, 1_000_000):
        lam = lo + step * np.arange(start, min(n, start + 1_000_000))
        lam = np.minimum(lam, hi)
        vals = _objective(items, a, lam)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_lam = float(vals[k]), float(lam[k])
    left, right = max(lo, best_lam - step), min(hi, best_lam + step)
    if right > left:
        res = optimize.minimize_scalar(lambda t: -float(_objective(items, a, np.array([t]))[0]),
                                       bounds=(left, right), method="bounded", options={"xatol": 1e-13})
        if res.success and -res.fun > best_val:
            best_val = float(-res.fun)
    # at the ends of the mean range the supremum is only reached as |lam| -> inf; the objective is concave,
    # so when the grid maximum sits on an end the sup is the limit along a geometric ray outward
    # (capped at |lam| = 1e6, beyond which rounding in a * lam dominates)
    ray = 2.0 ** np.arange(1, 60)
    ends = []
    if best_lam <= lo + step:
        ends.append(lo * ray[abs(lo) * ray <= 1e6])
    if best_lam >= hi - step and not math.isfinite(z):
        ends.append(hi * ray[abs(hi) * ray <= 1e6])
    for pts in ends:
        vals = _objective(items, a, pts)
        if np.isfinite(vals).any():
            best_val = max(best_val, float(np.max(vals[np.isfinite(vals)])))
    return best_val + 0.0


# ---------------------------------------------------------------------------
# DTMC pair chain
# ---------------------------------------------------------------------------

def pair_chain_oracle(model: SemiMarkovModel, pair_law) -> float:
    """Level-2 rate of the pair chain: ``H(rho | rho_1 (x) p)``.

    ``pair_law`` is a square array (or mapping ``(x, y) -> mass``) of total
    mass one whose two marginals agree.
    """
    if not all(isinstance(law, Dirac) and law.point == 1.0 for law in model.laws):
        raise OracleError("pair-chain oracle needs Dirac(1) waits")
    n = model.n_states
    P = np.zeros((n, n))
    P[model.src, model.dst] = model.prob
    if isinstance(pair_law, Mapping):
        rho = np.zeros((n, n))
        for (x, y), v in pair_law.items():
            rho[model.index[x], model.index[y]] = v
    else:
        rho = np.asarray(pair_law, dtype=float)
    if rho.shape != (n, n) or (rho < 0).any():
        raise OracleError("pair law must be a nonnegative square array")
    if abs(rho.sum() - 1.0) > 1e-10:
        raise OracleError(f"pair law has mass {rho.sum():.15g}")
    left, right = rho.sum(axis=1), rho.sum(axis=0)
    if np.max(np.abs(left - right)) > 1e-12:
        raise OracleError("pair law marginals differ")
    ref = left[:, None] * P
    if ((rho > 0) & (ref <= 0)).any():
        return INF
    return float(np.sum(special.rel_entr(rho, ref)))


# ---------------------------------------------------------------------------
# CTMC occupation rate
# ---------------------------------------------------------------------------

def ctmc_dv_oracle(model: SemiMarkovModel, pi, bound: float = 40.0) -> float:
    """``sup_u sum_x pi_x (-Lu/u)(x)`` for exponential waits, as a conic program.

    With ``u = e^phi`` the objective is
    ``sum_x pi_x q_x (1 - sum_y p_xy e^{phi_y - phi_x})``, concave in
    ``phi``; the box ``|phi| <= bound`` keeps the program bounded.
    """
    if not all(isinstance(law, Exponential) or (law.family == "gamma" and law.shape == 1.0) for law in model.laws):
        raise OracleError("not applicable: waits are not exponential")
    pi = np.asarray([pi[x] for x in model.states] if isinstance(pi, Mapping) else pi, dtype=float)
    if pi.shape != (model.n_states,) or abs(pi.sum() - 1) > 1e-9 or (pi < 0).any():
        raise OracleError("pi must be a probability vector on the states")
    q = np.array([law.rate for law in model.laws])
    phi = cp.Variable(model.n_states)
    terms = []
    for (i, j, p) in zip(model.src, model.dst, model.prob):
        c = pi[i] * q[i] * p
        if c > 0 and i != j:
            terms.append(c * cp.exp(phi[j] - phi[i]))
    self_loops = sum(pi[i] * q[i] * p for i, j, p in zip(model.src, model.dst, model.prob) if i == j)
    const = float(np.dot(pi, q)) - self_loops
    if not terms:
        return const
    prob = cp.Problem(cp.Minimize(cp.sum(cp.hstack(terms))), [cp.abs(phi) <= bound, phi[0] == 0])
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise OracleError(f"conic solver status {prob.status}")
    return float(const - prob.value)


# ---------------------------------------------------------------------------
# constrained generalized entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyMinimum:
    value: float
    status: str


def _quantile(law: WaitingLaw, level: float, upper: bool) -> float:
    """Point where the cdf (or survival, with ``upper``) crosses ``level``; found in log scale."""
    def f(u):
        c = float(law.cdf(math.exp(u)))
        return (level - (1.0 - c)) if upper else (c - level)
    return math.exp(optimize.brentq(f, -700.0, 700.0, xtol=1e-10))


def _discretize(law: WaitingLaw, target_mean: float, points: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(law, Dirac):
        return np.array([law.point]), np.array([1.0])
    lo = min(_quantile(law, 1e-12, upper=False), target_mean * 1e-6)
    hi = max(_quantile(law, 1e-14, upper=True), 30.0 * target_mean)
    edges = np.geomspace(lo, hi, points + 1)
    cdf = np.asarray(law.cdf(edges), dtype=float)
    mass = np.diff(cdf)
    mass[0] += cdf[0]
    mid = np.sqrt(edges[:-1] * edges[1:])
    keep = mass > 1e-300
    return mid[keep], mass[keep]


def _tilted_block(s: np.ndarray, m: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Normalized weights ``m e^{lam s}`` and ``log sum m e^{lam s}``."""
    e = lam * s + np.log(m)
    top = e.max()
    w = np.exp(e - top)
    z = w.sum()
    return w / z, float(top + math.log(z))


def entropy_min_oracle(weights, a: float, points: int = 2000, model: SemiMarkovModel | None = None,
                       detail: bool = False):
    """``inf H_g(mu | nu)`` over measures with total mass ``a`` and ``int mu(x, ds)/s = Q_x``.

    ``nu(x, ds) = s Q_x psi_x(ds)`` and ``H_g(mu|nu) = sum_x int (1/s) log(dmu/dnu) dmu``.
    Each law is discretized on a log-spaced grid; with ``rho = mu / s`` the
    problem becomes ``min sum_x H(rho_x | Q_x psi_x)`` subject to
    ``rho_x(total) = Q_x`` and ``sum_x int s rho_x(ds) = a``.  It is solved
    through its one-dimensional concave dual, and the value reported is the
    primal objective of the recovered feasible ``rho``.  Infeasible
    constraints give ``inf``.
    """
    items = _law_weights(weights, model)
    if not items:
        raise OracleError("empty weight set")
    total_q = sum(w for _, w in items)
    blocks = [(*_discretize(law, max(law.mean(), a / total_q), points), w) for law, w in items]
    low = sum(w * s.min() for s, _, w in blocks)
    high = sum(w * s.max() for s, _, w in blocks)
    tol = 1e-12 * max(1.0, a)
    if a < low - tol or a > high + tol:
        res = EntropyMinimum(INF, "infeasible")
        return res if detail else res.value
    if abs(a - low) <= tol or abs(a - high) <= tol:
        pick = np.argmin if abs(a - low) <= tol else np.argmax
        val = -sum(w * math.log(m[pick(s)]) for s, m, w in blocks)
        res = EntropyMinimum(val + 0.0, "boundary")
        return res if detail else res.value

    def moment(lam):
        return sum(w * float(_tilted_block(s, m, lam)[0] @ s) for s, m, w in blocks) - a

    lo, hi = -1.0, 1.0
    while moment(lo) > 0:
        lo *= 2.0
    while moment(hi) < 0:
        hi *= 2.0
    lam = optimize.brentq(moment, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    val = 0.0
    for s, m, w in blocks:
        r, _ = _tilted_block(s, m, lam)
        val += w * float(np.sum(special.rel_entr(r, m)))
    res = EntropyMinimum(val + 0.0, "optimal")
    return res if detail else res.value


# ---------------------------------------------------------------------------
# decay harness
# ---------------------------------------------------------------------------

CENSOR_HITS = 10


@dataclass(frozen=True)
class DecayRow:
    """One horizon of a decay table."""

    horizon: float
    estimator: str
    replicas: int
    hits: int
    probability: float
    stderr: float
    decay: float
    decay_stderr: float
    censored: bool
    bound: float

    def as_record(self) -> dict:
        return {"horizon": self.horizon, "estimator": self.estimator, "n": self.replicas, "hits": self.hits,
                "probability": self.probability, "stderr": self.stderr, "decay": self.decay,
                "decay_stderr": self.decay_stderr, "censored": self.censored, "rate_bound": self.bound}


@dataclass(frozen=True)
class DecayTable:
    rows: tuple
    intercept: float
    slope: float

    def records(self) -> list[dict]:
        return [r.as_record() for r in self.rows]


def _fit_in_inverse_t(rows: Sequence[DecayRow]) -> tuple[float, float]:
    pts = [(1.0 / r.horizon, r.decay) for r in rows if not r.censored and math.isfinite(r.decay)]
    if len(pts) < 2:
        return math.nan, math.nan
    x, y = np.array(pts).T
    slope, intercept = np.polyfit(x, y, 1)
    return float(intercept), float(slope)


def ldp_decay_estimate(model: SemiMarkovModel, event: Event, horizons: Sequence[float], replicas: int, seed: int,
                       *, tilt=None, bound: float = math.nan, start=None, workers: int = 1) -> DecayTable:
    """``-(1/t) log P(event)`` for each horizon, naive or importance-sampled.

    The delta-method error is ``stderr / (t P)``.  Naive runs with fewer
    than ten hits are censored: the row then carries the lower bound
    ``-(1/t) log(3/n)`` (about 95% one-sided) instead of an estimate.  The
    table also holds the least-squares fit ``decay ~ intercept + slope / t``.
    """
    from .tilt import TiltSpec, importance_estimate

    spec = tilt if tilt is not None else TiltSpec()
    name = "naive" if spec.is_identity else "tilted"
    rows = []
    for k, t in enumerate(horizons):
        est = importance_estimate(model, event, spec, float(t), replicas, seed + k, start=start, workers=workers)
        censored = name == "naive" and est.hits < CENSOR_HITS
        if censored:
            decay, dse = -math.log(min(1.0, 3.0 / replicas)) / t, math.nan
        elif est.estimate > 0:
            decay = -math.log(est.estimate) / t
            dse = est.stderr / (t * est.estimate)
        else:
            decay, dse, censored = INF, math.nan, True
        rows.append(DecayRow(float(t), name, est.replicas, est.hits, est.estimate, est.stderr, decay + 0.0, dse,
                             censored, bound))
    intercept, slope = _fit_in_inverse_t(rows)
    return DecayTable(tuple(rows), intercept, slope)


def occupation_bound(model: SemiMarkovModel, state, level: float) -> float:
    """``inf {I_1(pi) : pi(state) >= level}`` by convexity on the face ``pi(state) = level``."""
    from .rate.occupation import measure_marginal_rate

    stat = model.stationary_occupation()
    i = model.index[state]
    if stat[model.states[i]] >= level:
        return 0.0
    n = model.n_states
    if n == 2:
        pi = np.zeros(2)
        pi[i], pi[1 - i] = level, 1 - level
        return measure_marginal_rate(pi, model).value
    others = [j for j in range(n) if j != i]

    def value(z):
        w = np.exp(z - z.max())
        pi = np.zeros(n)
        pi[i] = level
        pi[others] = (1 - level) * w / w.sum()
        return measure_marginal_rate(pi, model).value

    res = optimize.minimize(value, np.zeros(len(others)), method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000})
    return float(res.fun)


def flow_norm_bound(model: SemiMarkovModel, level: float) -> float:
    """``inf {I_2(Q) : ||Q|| >= level}`` over divergence-free flows on the model's edges."""
    from .rate.legendre import flow_marginal_rate
    from .simulate import Flow

    stat = model.stationary_flow()
    if sum(stat.values()) >= level:
        return 0.0
    edges = list(model.edges)
    n_e = len(edges)
    x0 = np.array([stat.get(e, 0.0) for e in edges]) * level / sum(stat.values())
    div = np.zeros((model.n_states, n_e))
    for k, (x, y) in enumerate(edges):
        div[model.index[x], k] += 1
        div[model.index[y], k] -= 1

    def value(q):
        return flow_marginal_rate(Flow.from_array(model, np.maximum(q, 0.0)), model, tol=1e-9)

    cons = [{"type": "eq", "fun": lambda q: div[1:] @ q}, {"type": "eq", "fun": lambda q: q.sum() - level}]
    res = optimize.minimize(value, x0, method="SLSQP", bounds=[(1e-12, None)] * n_e, constraints=cons,
                            options={"ftol": 1e-13, "maxiter": 500})
    return float(min(res.fun, value(x0)))
