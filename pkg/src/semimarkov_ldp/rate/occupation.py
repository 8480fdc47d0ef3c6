"""Occupation-measure marginal: the Donsker-Varadhan functional and I_1."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ..kernel.laws import INF, Dirac, Gamma, WaitingLaw
from ..kernel.model import ModelError, SemiMarkovModel
from ..simulate import Flow

DIVERGENCE_THRESHOLD = 1e6


class OptimizationError(RuntimeError):
    """Optimizer failed to converge; carries the best incumbent."""

    def __init__(self, message: str, incumbent: float = math.nan, witness=None):
        super().__init__(message)
        self.incumbent = incumbent
        self.witness = witness


def _probability_vector(model: SemiMarkovModel, vec, name: str) -> np.ndarray:
    if isinstance(vec, dict):
        vec = [vec.get(x, 0.0) for x in model.states]
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (model.n_states,):
        raise ValueError(f"{name} must have one entry per retained state ({model.n_states})")
    if (vec < 0).any() or not np.isfinite(vec).all():
        raise ValueError(f"{name} must be nonnegative and finite")
    if abs(vec.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to one (got {vec.sum():.12g})")
    return vec


# ---------------------------------------------------------------------------
# Donsker-Varadhan functional
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DVResult:
    value: float
    log_u: np.ndarray
    certificate: str


def dv_functional(nu, model: SemiMarkovModel, *, detail: bool = False):
    """sup over positive u of sum_x nu_x log(u(x) / Pu(x)).

    Maximized in log-u coordinates (the objective is concave there) with
    box-bounded L-BFGS-B at growing boxes.  If the value keeps growing with
    the box, the maximizer direction is followed as a ray; a value above
    ``1e6`` along it certifies ``+inf`` and the ray point is returned as the
    witness.
    """
    nu = _probability_vector(model, nu, "nu")
    P = model.matrix()
    logP = np.log(np.where(P > 0, P, 1.0))
    mask = P > 0

    def neg(v):
        # log(Pu)(x) via log-sum-exp over out-neighbours
        z = np.where(mask, logP + v[None, :], -np.inf)
        zmax = z.max(axis=1)
        ez = np.where(mask, np.exp(z - zmax[:, None]), 0.0)
        s = ez.sum(axis=1)
        log_pu = zmax + np.log(s)
        val = float(nu @ (v - log_pu))
        grad = nu - (nu / s) @ ez
        return -val, -grad

    starts = [np.zeros(model.n_states), np.log(np.maximum(nu, 1e-12)), -np.log(np.maximum(nu, 1e-12))]
    history = []
    best = None
    for bound in (25.0, 50.0, 100.0, 200.0):
        cands = []
        for v0 in starts + ([best[1]] if best is not None else []):
            r = optimize.minimize(neg, np.clip(v0, -bound, bound), jac=True, method="L-BFGS-B",
                                  bounds=[(-bound, bound)] * model.n_states,
                                  options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
            cands.append((-float(r.fun), r.x))
        best = max(cands, key=lambda c: c[0])
        history.append(best)
        if len(history) >= 2 and abs(history[-1][0] - history[-2][0]) <= 1e-10 * max(1.0, abs(best[0])):
            res = DVResult(max(best[0], 0.0), best[1] - best[1].max(), "converged")
            return res if detail else res.value
    # still growing: follow the ray through the last two box optima
    v_a, v_b = history[-2][1], history[-1][1]
    d = v_b - v_a
    for k in range(1, 200):
        v = v_b + (2.0**k) * d
        val = -neg(v)[0]
        if val > DIVERGENCE_THRESHOLD:
            res = DVResult(INF, v, f"ray value {val:.6g} exceeds {DIVERGENCE_THRESHOLD:g}")
            return res if detail else res.value
    raise OptimizationError("Donsker-Varadhan ascent did not converge and no divergence certificate was found",
                            history[-1][0], history[-1][1])


# ---------------------------------------------------------------------------
# per-state Legendre transforms
# ---------------------------------------------------------------------------

def single_gstar(law: WaitingLaw, a: float) -> tuple[float, float]:
    """(G*(a), lam*) for one law; lam* = -inf/+inf on the boundary branches."""
    lo, hi = law.ess_bounds()
    if isinstance(law, Gamma) and a > 0:
        lam = law.tilted_mean_inverse(a)
        return float(a * lam - law.log_mgf(lam)), lam
    from .legendre import legendre_point
    pt = legendre_point([(law, 1.0)], a)
    return pt.value, pt.lam_star


class _StateCost:
    """m -> m G*(pi_x / m), extended by pi_x zeta(x) at m = 0."""

    def __init__(self, law: WaitingLaw, pi_x: float):
        self.law, self.pi = law, pi_x
        self.zeta = law.zeta

    def value_grad(self, m: float) -> tuple[float, float]:
        if m <= 0.0:
            return (self.pi * self.zeta if self.pi > 0 else 0.0), -INF
        a = self.pi / m
        if a <= 0:
            return INF, INF
        val, lam = single_gstar(self.law, a)
        if not math.isfinite(val):
            return INF, INF
        g = float(self.law.log_mgf(lam)) if math.isfinite(lam) else (-math.log(self.law.atom(self.law.ess_bounds()[0 if lam < 0 else 1])))
        return m * val, -g


# ---------------------------------------------------------------------------
# I_1
# ---------------------------------------------------------------------------

@dataclass
class OccupationRate:
    """Value of the occupation marginal with the achieving scale and jump measure."""

    value: float
    r: float
    nu: dict
    flow: Flow | None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


class _Inner:
    """Inner problem at fixed r over normalized balanced pair measures."""

    def __init__(self, model: SemiMarkovModel, pi: np.ndarray):
        self.model = model
        self.pi = pi
        support = pi > 0
        self.support = support
        keep = support[model.src] & support[model.dst] & (model.prob > 0)
        self.src = model.src[keep]
        self.dst = model.dst[keep]
        self.logp = np.log(model.prob[keep])
        self.edge_ids = np.flatnonzero(keep)
        n = model.n_states
        self.n_edges = int(keep.sum())
        self.costs = {i: _StateCost(model.laws[i], float(pi[i])) for i in range(n) if support[i]}
        self.dirac = {i: model.laws[i].point for i in self.costs if isinstance(model.laws[i], Dirac)}
        self.out_m = np.zeros((n, self.n_edges))
        self.out_m[self.src, np.arange(self.n_edges)] = 1.0
        self.in_m = np.zeros((n, self.n_edges))
        self.in_m[self.dst, np.arange(self.n_edges)] = 1.0
        self.active_states = sorted(set(self.src.tolist()) | set(self.dst.tolist()))
        # a Dirac state fixes r nu_x, hence a lower bound on r
        self.r_min = sum(pi[i] / m for i, m in self.dirac.items())
        self.all_dirac = bool(self.costs) and len(self.dirac) == len(self.costs)

    def objective(self, r: float, pe: np.ndarray) -> tuple[float, np.ndarray]:
        pe = np.maximum(pe, 0.0)
        nu = self.out_m @ pe
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pe > 0, np.log(pe) - np.log(np.maximum(nu[self.src], 1e-300)) - self.logp, 0.0)
        ent = float(np.sum(pe * ratio))
        grad = r * np.where(pe > 0, ratio, -50.0)
        total = r * ent
        dphi = np.zeros(self.model.n_states)
        for i, cost in self.costs.items():
            if i in self.dirac:
                continue  # handled by equality constraints, cost 0 when satisfied
            v, g = cost.value_grad(r * nu[i])
            total += v
            dphi[i] = g if math.isfinite(g) else -1e6
        grad = grad + r * dphi[self.src]
        return total, grad

    def solve(self, r: float, start: np.ndarray) -> tuple[float, np.ndarray, bool]:
        cons = []
        if not self.all_dirac:  # otherwise implied by the Dirac rows
            cons.append({"type": "eq", "fun": lambda pe: np.array([pe.sum() - 1.0]), "jac": lambda pe: np.ones((1, pe.size))})
        bal = (self.out_m - self.in_m)[self.active_states[1:]] if len(self.active_states) > 1 else None
        if bal is not None and bal.size:
            cons.append({"type": "eq", "fun": lambda pe, B=bal: B @ pe, "jac": lambda pe, B=bal: B})
        if self.dirac:
            idx = np.array(sorted(self.dirac))
            target = np.array([self.pi[i] / (r * self.dirac[i]) for i in idx])
            rows = self.out_m[idx]
            cons.append({"type": "eq", "fun": lambda pe, R=rows, t=target: R @ pe - t, "jac": lambda pe, R=rows: R})
        res = optimize.minimize(lambda pe: self.objective(r, pe), start, jac=True, method="SLSQP",
                                bounds=[(0.0, 1.0)] * self.n_edges, constraints=cons,
                                options={"maxiter": 1000, "ftol": 1e-15})
        pe = np.maximum(res.x, 0.0)
        feasible = abs(pe.sum() - 1.0) < 1e-7
        if bal is not None and bal.size:
            feasible &= bool(np.abs(bal @ pe).max() < 1e-7)
        if self.dirac:
            feasible &= bool(np.abs(self.out_m[np.array(sorted(self.dirac))] @ pe
                                    - np.array([self.pi[i] / (r * self.dirac[i]) for i in sorted(self.dirac)])).max() < 1e-7)
        if not feasible:
            return INF, pe, bool(res.success)
        return float(self.objective(r, pe)[0]), pe, bool(res.success)


def measure_marginal_rate(pi, model: SemiMarkovModel, *, grid: int = 29, golden_steps: int = 60) -> OccupationRate:
    """Occupation marginal rate I_1(pi) on a finite model.

    Minimizes ``r H(Pi | nu p) + sum_x Phi_x(r nu_x)`` where ``Pi`` ranges
    over normalized balanced edge measures with marginal ``nu`` supported
    on ``supp pi`` and ``Phi_x(m) = m G*_x(pi_x / m)``.  The inner infimum
    over ``Pi`` reproduces ``r`` times the Donsker-Varadhan functional; the
    outer search over ``r`` is a log grid refined by golden section
    (the partial minimum is convex in ``r``).  The all-atom candidate
    ``r -> 0`` (value ``sum_x pi_x zeta(x)``) and the law-of-large-numbers
    point are always evaluated.
    """
    if not model.is_closed:
        raise ModelError("the occupation marginal needs a closed finite state set")
    model.require_valid()
    pi = _probability_vector(model, pi, "pi")
    inner = _Inner(model, pi)
    support = pi > 0
    diag: dict = {"solves": 0, "failures": 0}

    # r -> 0: all mass as atoms at infinity
    zero_val = float(sum(pi[i] * model.laws[i].zeta for i in range(model.n_states) if support[i]))
    best = OccupationRate(zero_val, 0.0, {}, None, diag)

    # law-of-large-numbers point
    nu_st = model.stationary_jump_distribution()
    if inner.n_edges and np.all(support[nu_st > 0]):
        pe0 = nu_st[inner.src] * np.exp(inner.logp)
        if abs(pe0.sum() - 1.0) < 1e-9:
            r0 = 1.0 / float(nu_st @ model.means())
            val0 = _evaluate_fixed(inner, r0, pe0)
            if val0 < best.value:
                best = _incumbent(model, inner, val0, r0, pe0, diag)
            if best.value <= 1e-14:
                best.value = max(best.value, 0.0)
                return best
    if inner.n_edges == 0:
        return best

    start = _initial_edges(model, inner, nu_st)
    # scale: r nu_x m_x ~ pi_x gives r ~ sum_x pi_x / mean_x
    r_ref = float(sum(pi[i] / model.laws[i].mean() for i in range(model.n_states) if support[i]))
    cache: dict = {}

    def h(log_r: float) -> float:
        if log_r in cache:
            return cache[log_r][0]
        r = math.exp(log_r)
        if r < inner.r_min * (1 - 1e-12):
            cache[log_r] = (INF, None)
            return INF
        val, pe, ok = inner.solve(r, cache.get("warm", start))
        diag["solves"] += 1
        diag["failures"] += int(not ok)
        if math.isfinite(val):
            cache["warm"] = pe
        cache[log_r] = (val, pe)
        return val

    if inner.all_dirac:
        grid_pts = [math.log(inner.r_min)]
    else:
        lo = math.log(max(r_ref * 1e-4, inner.r_min * (1 + 1e-9))) if inner.r_min > 0 else math.log(r_ref * 1e-4)
        grid_pts = list(np.linspace(lo, math.log(r_ref * 1e3), grid))
        if inner.r_min > 0:
            grid_pts = [math.log(inner.r_min * (1 + 1e-9))] + grid_pts
    vals = [h(g) for g in grid_pts]
    k = int(np.argmin(vals))
    if len(grid_pts) > 1 and math.isfinite(vals[k]):
        a = grid_pts[max(k - 1, 0)]
        b = grid_pts[min(k + 1, len(grid_pts) - 1)]
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - gr * (b - a), a + gr * (b - a)
        fc, fd = h(c), h(d)
        for _ in range(golden_steps):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - gr * (b - a)
                fc = h(c)
            else:
                a, c, fc = c, d, fd
                d = a + gr * (b - a)
                fd = h(d)
            if b - a < 1e-10:
                break
    finite = [(v[0], key) for key, v in cache.items() if key != "warm" and math.isfinite(v[0])]
    if finite:
        v, key = min(finite)
        if v < best.value:
            best = _incumbent(model, inner, v, math.exp(key), cache[key][1], diag)
    best.value = max(best.value, 0.0)
    return best


def _evaluate_fixed(inner: _Inner, r: float, pe: np.ndarray) -> float:
    if inner.dirac:
        nu = inner.out_m @ pe
        for i, m in inner.dirac.items():
            if abs(r * nu[i] - inner.pi[i] / m) > 1e-12:
                return INF
    return float(inner.objective(r, pe)[0])


def _initial_edges(model, inner: _Inner, nu_st) -> np.ndarray:
    # restrict the stationary pair measure to the support, then renormalize
    pe = nu_st[inner.src] * np.exp(inner.logp)
    if pe.sum() <= 0:
        pe = np.ones(inner.n_edges)
    return pe / pe.sum()


def _incumbent(model, inner: _Inner, value, r, pe, diag) -> OccupationRate:
    nu = inner.out_m @ pe
    flow = Flow({model.edges[k]: r * v for k, v in zip(inner.edge_ids, pe) if v > 0})
    return OccupationRate(float(value), float(r), {x: float(v) for x, v in zip(model.states, nu)}, flow, diag)
