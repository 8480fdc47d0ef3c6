"""Checkers for the compactness, drift and scale conditions on concrete models.

All verdicts about countable families are relative to the retained
truncation.  Limits (liminf, limsup, divergence) are estimated from shell
statistics: a quantity "diverges" when its per-shell minima increase with
Spearman correlation at least 0.9, and verdicts on family models are
recomputed at half the radius; a disagreement downgrades the verdict to
``"inconclusive"``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
from scipy import stats

from .kernel.laws import INF, Dirac, Exponential, Gamma, Rayleigh, WaitingLaw
from .kernel.model import ModelError, SemiMarkovModel
from .simulate import replica_rng, _sampler

HOLDS = "holds-on-truncation"
FAILS = "fails"
NOT_APPLICABLE = "not-applicable"
INCONCLUSIVE = "inconclusive"
NOT_FOUND = "not found"

SPEARMAN_THRESHOLD = 0.9


@dataclass
class ConditionReport:
    """Verdict with its witnesses and the inequalities that were evaluated."""

    condition: str
    verdict: str
    detail: str = ""
    witnesses: dict = field(default_factory=dict)
    radius: float | None = None
    inequalities: list = field(default_factory=list)
    routes: dict = field(default_factory=dict)
    model: SemiMarkovModel | None = field(default=None, repr=False)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_text(self) -> str:
        lines = [f"condition: {self.condition}", f"verdict: {self.verdict}"]
        if self.radius is not None:
            lines.append(f"radius: {self.radius:g}")
        if self.detail:
            lines.append(f"detail: {self.detail}")
        for k, v in self.witnesses.items():
            lines.append(f"witness {k}: {_fmt(v)}")
        for ineq in self.inequalities:
            lines.append(f"checked: {ineq}")
        for name, sub in self.routes.items():
            lines.append(f"route {name}: {sub.verdict} ({sub.detail})")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, dict) and len(v) > 8:
        items = list(v.items())
        return "{" + ", ".join(f"{k!r}: {_fmt(x)}" for k, x in items[:4]) + ", ..., " + \
            ", ".join(f"{k!r}: {_fmt(x)}" for k, x in items[-2:]) + "}"
    return repr(v)


# ---------------------------------------------------------------------------
# shell statistics
# ---------------------------------------------------------------------------

def _shell_of(model: SemiMarkovModel) -> Callable | None:
    fam = model.family
    if fam is None:
        return None
    if fam.kind == "birth_death":
        return lambda x: int(x)
    if fam.kind == "lattice_rw":
        return lambda x: int(max(abs(c) for c in x))
    return None


def shell_minima(model: SemiMarkovModel, values: Mapping) -> tuple[np.ndarray, np.ndarray]:
    """Per-shell minima of ``values`` (keyed by state label)."""
    shell = _shell_of(model)
    if shell is None:
        raise ModelError("shell statistics need a countable-family model")
    mins: dict = {}
    for x, v in values.items():
        k = shell(x)
        mins[k] = min(mins.get(k, INF), v)
    ks = np.array(sorted(mins))
    return ks, np.array([mins[k] for k in ks])


def diverges(ks: np.ndarray, mins: np.ndarray) -> tuple[bool, float]:
    """Monotone-trend test for ``-> inf``: Spearman rho of shell minima vs shell index."""
    if len(ks) < 4:
        return False, math.nan
    vals = np.array([float(f"{v:.12g}") for v in mins])
    if np.all(vals == vals[0]):
        return False, 0.0
    rho = float(stats.spearmanr(ks, vals).statistic)
    ok = rho >= SPEARMAN_THRESHOLD and vals[-1] > vals[len(vals) // 2] > vals[0]
    return bool(ok), rho


def liminf_estimate(mins: np.ndarray) -> float:
    """Minimum of shell minima over the outer half of the shells."""
    return float(np.min(mins[len(mins) // 2:]))


def limsup_estimate(maxs: np.ndarray) -> float:
    return float(np.max(maxs[len(maxs) // 2:]))


def _radius(model: SemiMarkovModel):
    return model.truncation.radius if model.truncation else None


def _with_sensitivity(report: ConditionReport, model: SemiMarkovModel, rerun: Callable) -> ConditionReport:
    fam = model.family
    R = _radius(model)
    if fam is None or R is None or R < 8 or report.verdict not in (HOLDS, FAILS):
        return report
    half = rerun(fam.rebuild(int(R) // 2))
    report.witnesses["verdict at half radius"] = half.verdict
    if half.verdict != report.verdict:
        report.detail += f"; verdict at radius {int(R) // 2} is {half.verdict!r}"
        report.verdict = INCONCLUSIVE
    return report


def _as_function(u) -> Callable:
    if callable(u):
        return u
    if isinstance(u, Mapping):
        return lambda x: u[x] if x in u else None
    raise TypeError("u must be a callable or a mapping")


def _values(model: SemiMarkovModel, u) -> tuple[dict, dict]:
    """u and Pu on every retained state; errors on nonpositive u or unevaluable Pu."""
    f = _as_function(u)
    uv, puv = {}, {}
    for x in model.states:
        val = f(x)
        if val is None or not val > 0 or not math.isfinite(val):
            raise ValueError(f"u must be positive and finite on the truncation; u({x!r}) = {val!r}")
        uv[x] = float(val)
    for x in model.states:
        pu = model.apply(f if callable(u) else u, x)
        if not math.isfinite(pu):
            raise ValueError(f"Pu is infinite or unevaluable at state {x!r}")
        puv[x] = pu
    return uv, puv


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------

def check_drift(model: SemiMarkovModel, u, K: Iterable, *, sensitivity: bool = True) -> ConditionReport:
    """Geometric drift ``Pu <= lam u + b 1_K``.

    Computes ``lam = max_{x not in K} Pu/u`` and ``b = max_{x in K} (Pu - lam u)^+``;
    holds iff ``lam < 1``.  On success the level ``ell = -log(lam)/2`` for the
    embedded-chain level-set condition is reported as well.
    """
    K = set(K)
    uv, puv = _values(model, u)
    outside = [x for x in model.states if x not in K]
    if not outside:
        return ConditionReport("drift", NOT_APPLICABLE, "K covers every retained state", radius=_radius(model))
    ratios = {x: puv[x] / uv[x] for x in outside}
    worst = max(outside, key=lambda x: ratios[x])
    lam = ratios[worst]
    b = max((max(puv[x] - lam * uv[x], 0.0) for x in K if x in uv), default=0.0)
    f = _as_function(u)
    u_ext = dict(uv)
    for esc in model.escapes.values():
        for y, _ in esc:
            u_ext[y] = float(f(y))
    wit = {"lambda": lam, "b": b, "K": sorted(K, key=repr), "u": u_ext, "worst state": worst}
    ineq = [f"Pu(x) <= {lam:.12g} u(x) + {b:.12g} 1_K(x) on {model.n_states} states"]
    if lam < 1.0:
        ell = -math.log(lam) / 2.0
        wit["ell"] = ell
        wit["superlevel set {Pu > lam u}"] = sorted([x for x in model.states if puv[x] > lam * uv[x] * (1 + 1e-12)], key=repr)
        rep = ConditionReport("drift", HOLDS, f"lambda = {lam:.12g} < 1", wit, _radius(model), ineq, model=model)
    else:
        rep = ConditionReport("drift", FAILS, f"lambda = {lam:.12g} >= 1 at state {worst!r}", wit, _radius(model), ineq,
                              model=model)
    if sensitivity:
        rep = _with_sensitivity(rep, model, lambda m: check_drift(m, u, K & set(m.states), sensitivity=False))
    return rep


def return_times(model: SemiMarkovModel, K: Iterable, start, excursions: int, seed: int,
                 max_steps: int = 10**7) -> np.ndarray:
    """Embedded-chain return times to ``K`` for ``excursions`` independent excursions from ``start``."""
    K = set(K)
    in_k = np.zeros(model.n_states, dtype=bool)
    for x in K:
        in_k[model.index[x]] = True
    smp = _sampler(model)
    rng = replica_rng(seed, 0)
    cur = np.full(excursions, model.index[start], dtype=np.int64)
    times = np.zeros(excursions, dtype=np.int64)
    active = np.arange(excursions)
    steps = 0
    while active.size:
        steps += 1
        if steps > max_steps:
            raise RuntimeError("return-time simulation exceeded its step cap")
        y = smp.next_states(rng, cur[active])
        if (y < 0).any():
            raise smp.escape(int(y[y < 0][0]))
        cur[active] = y
        back = in_k[y]
        times[active[back]] = steps
        active = active[~back]
    return times


# ---------------------------------------------------------------------------
# scale-family condition on waiting laws
# ---------------------------------------------------------------------------

def _scale(law: WaitingLaw) -> tuple[tuple, float]:
    """(base-law key, scale q) with ``law = base / q``."""
    if isinstance(law, Exponential):
        return ("exponential",), law.rate
    if isinstance(law, Gamma):
        return ("gamma", law.shape), law.rate
    if isinstance(law, Dirac):
        return ("dirac",), 1.0 / law.point
    if isinstance(law, Rayleigh):
        return ("rayleigh",), 1.0 / law.scale
    raise TypeError(law.family)


def check_condition4(model: SemiMarkovModel, *, sensitivity: bool = True) -> ConditionReport:
    """One base law rescaled per state, divergent MGF at the abscissa, and ``q_x -> inf``."""
    R = _radius(model)
    families = {law.family for law in model.laws}
    if len(families) != 1 or not families <= {"exponential", "gamma", "dirac", "rayleigh"}:
        return ConditionReport("condition 4", NOT_APPLICABLE,
                               f"waiting laws do not share one named family ({sorted(families)})", radius=R)
    keys, q = zip(*(_scale(law) for law in model.laws))
    if len(set(keys)) != 1:
        bad = sorted({k for k in keys}, key=repr)
        return ConditionReport("condition 4", FAILS, f"gamma shapes differ across states: {bad[:4]}",
                               {"base laws": bad}, R, model=model)
    qmap = dict(zip(model.states, q))
    base = model.laws[int(np.argmin(q))]
    # base law psi = law_x rescaled by q_x; its MGF at zeta
    base_div = math.isinf(base.mgf_at_zeta)
    ineq = [f"psi(exp(zeta tau)) = inf for the base law {keys[0]}: {base_div}"]
    wit = {"q": qmap, "base family": keys[0]}
    if not base_div:
        return ConditionReport("condition 4", FAILS, "base law has a finite MGF at its abscissa", wit, R, ineq, model=model)
    shell = _shell_of(model)
    if shell is None:
        rep = ConditionReport("condition 4", HOLDS, "finite state set: every level set of q is finite", wit, R, ineq,
                              model=model)
        return rep
    ks, mins = shell_minima(model, qmap)
    ok, rho = diverges(ks, mins)
    ineq.append(f"shell minima of q increase (Spearman rho = {rho:.3f}, threshold {SPEARMAN_THRESHOLD})")
    wit["shell minima of q"] = dict(zip(ks.tolist(), mins.tolist()))
    rep = ConditionReport("condition 4", HOLDS if ok else FAILS,
                          "q_x grows along the truncation" if ok else "q_x does not grow along the truncation",
                          wit, R, ineq, model=model)
    if sensitivity:
        rep = _with_sensitivity(rep, model, lambda m: check_condition4(m, sensitivity=False))
    return rep


# ---------------------------------------------------------------------------
# embedded-chain level-set conditions
# ---------------------------------------------------------------------------

def check_condition2(model: SemiMarkovModel, u, *, sensitivity: bool = True) -> ConditionReport:
    """Level-set conditions on ``u_hat = u / Pu`` for a single witness ``u``.

    Reports whether the witness certifies the strong version (every level
    set of ``log u_hat`` finite, i.e. ``u_hat -> inf``) and the weak version
    (one positive level ``ell`` with a finite level set, i.e.
    ``liminf u_hat > 1``).  The top-level verdict refers to the strong
    version; ``witnesses["weak"]`` holds the other.
    """
    uv, puv = _values(model, u)
    R = _radius(model)
    u_hat = {x: uv[x] / puv[x] for x in model.states}
    c = min(uv.values())
    wit = {"u_hat": u_hat, "lower bound c": c}
    ineq = [f"u >= {c:.12g} > 0 on the truncation"]
    shell = _shell_of(model)
    if shell is None:
        wit["weak"] = HOLDS
        return ConditionReport("condition 2", HOLDS, "finite state set: every level set is finite", wit, R, ineq,
                               model=model)
    ks, mins = shell_minima(model, {x: math.log(v) for x, v in u_hat.items()})
    strong, rho = diverges(ks, mins)
    lim = liminf_estimate(mins)
    ineq.append(f"shell minima of log u_hat: Spearman rho = {rho:.3f}; liminf estimate {lim:.12g}")
    if lim > 0:
        ell = lim / 2.0
        level = sorted([x for x in model.states if math.log(u_hat[x]) <= ell], key=repr)
        outer = [x for x in level if shell(x) >= ks[len(ks) // 2]]
        weak = HOLDS if not outer else FAILS
        wit.update({"ell": ell, "level set": level})
        ineq.append(f"level set {{log u_hat <= {ell:.12g}}} has {len(level)} states, none in the outer half: {not outer}")
    else:
        weak = FAILS
    wit["weak"] = weak
    wit["shell minima of log u_hat"] = dict(zip(ks.tolist(), mins.tolist()))
    detail = ("log u_hat diverges along the truncation" if strong else "level sets of log u_hat are not all finite")
    detail += f"; weak (single-level) version: {weak}"
    rep = ConditionReport("condition 2", HOLDS if strong else FAILS, detail, wit, R, ineq, model=model)
    if sensitivity:
        rep = _with_sensitivity(rep, model, lambda m: check_condition2(m, u, sensitivity=False))
    return rep


def check_condition3(model: SemiMarkovModel, u) -> ConditionReport:
    """Single-level version of :func:`check_condition2`."""
    rep = check_condition2(model, u)
    weak = rep.witnesses.get("weak", FAILS)
    out = ConditionReport("condition 3", weak, f"witness liminf of log u_hat; strong version: {rep.verdict}",
                          dict(rep.witnesses), rep.radius, list(rep.inequalities), model=model)
    if rep.verdict == INCONCLUSIVE:
        out.verdict = INCONCLUSIVE
    return out


def check_condition1(model: SemiMarkovModel, u, *, etas: Sequence[float] = tuple(np.round(np.arange(0.1, 1.0, 0.1), 1)),
                     sigmas: Sequence[float] = tuple(np.geomspace(1e-3, 1e3, 25))) -> ConditionReport:
    """Items (e)-(f) of the waiting-time compactness condition with ``L u_hat = theta_x(u_hat(x))``.

    (e): ``L u_hat -> inf`` along the truncation.  (f): a grid search over
    ``(sigma, eta)`` for the smallest exceptional set
    ``K = {x : L u_hat(x) < -sigma theta_x(eta)}`` that avoids the outer half
    of the shells, with ``u_hat < psi_x(exp(zeta tau))`` off ``K``.
    """
    uv, puv = _values(model, u)
    R = _radius(model)
    u_hat = {x: uv[x] / puv[x] for x in model.states}
    lu = {x: model.law(x).theta(u_hat[x]) for x in model.states}
    wit: dict = {"L u_hat": lu}
    ineq = []
    shell = _shell_of(model)
    if shell is None:
        item_e = True
        ineq.append("item (e): finite state set")
    else:
        ks, mins = shell_minima(model, lu)
        item_e, rho = diverges(ks, mins)
        ineq.append(f"item (e): shell minima of L u_hat, Spearman rho = {rho:.3f}")
    best = None
    for eta in etas:
        th_eta = {x: model.law(x).theta(float(eta)) for x in model.states}
        for sigma in sigmas:
            K = [x for x in model.states if lu[x] < -sigma * th_eta[x]]
            if shell is not None and K:
                outer = ks[len(ks) // 2]
                if any(shell(x) >= outer for x in K):
                    continue
            if any(not u_hat[x] < model.law(x).mgf_at_zeta for x in model.states if x not in K):
                continue
            C = max((-sigma * th_eta[x] - lu[x] for x in K), default=0.0)
            if best is None or len(K) < len(best[3]):
                best = (float(sigma), float(eta), C, K)
    if best is None:
        verdict, detail = NOT_FOUND, "no (sigma, eta) on the search grid satisfies item (f)"
    else:
        sigma, eta, C, K = best
        wit.update({"sigma": sigma, "eta": eta, "C": C, "K": K})
        ineq.append(f"item (f): L u_hat >= -{sigma:.6g} theta(eta={eta:g}) - {C:.6g} 1_K with |K| = {len(K)}")
        verdict = HOLDS if item_e else FAILS
        detail = "items (e) and (f) hold" if item_e else "item (e) fails: L u_hat does not diverge"
    return ConditionReport("condition 1 (e)-(f)", verdict, detail, wit, R, ineq, model=model)


# ---------------------------------------------------------------------------
# birth-death family
# ---------------------------------------------------------------------------

def check_birth_death(model: SemiMarkovModel, topology: str = "bounded-weak*", *, sigma: float | None = None,
                      eta: float | None = None, sensitivity: bool = True) -> ConditionReport:
    """Sufficient conditions for the birth-death family.

    bounded-weak*: ``p = limsup p_x < 1/2`` and, for ``kappa`` between 1 and
    ``(4p(1-p))^{-1/2}`` (the midpoint ``kappa_0``), ``theta_x(kappa) -> inf``
    with ``theta_x(kappa) >= -sigma theta_x(eta)``.  strong: ``p = 0`` and the
    same with ``kappa_x = (9 p'_{x-1})^{-1/2}``, ``p'_x = sup_{k >= x} p_k``.
    Gamma laws use the closed form ``theta_x(t) = q_x (1 - t^{-1/alpha_x})``.
    """
    fam = model.family
    if fam is None or fam.kind != "birth_death":
        return ConditionReport(f"birth-death ({topology})", NOT_APPLICABLE, "model is not a birth-death chain")
    if topology not in ("bounded-weak*", "strong"):
        raise ValueError("topology must be 'bounded-weak*' or 'strong'")
    R = int(_radius(model))
    up = fam.params["up"]
    xs = list(range(1, R + 1))
    p = {x: float(up(x)) for x in xs}
    tail_sup = {}
    run = -INF
    for x in reversed(xs):
        run = max(run, p[x])
        tail_sup[x] = run
    p_hat = limsup_estimate(np.array([p[x] for x in xs]))
    laws = {x: model.law(x) for x in xs}
    gamma = all(isinstance(l, Gamma) for l in laws.values())
    wit: dict = {"p estimate": p_hat}
    ineq: list = []
    name = f"birth-death ({topology})"

    def theta(x, t):
        law = laws[x]
        if gamma:
            return law.rate * (1.0 - t ** (-1.0 / law.shape))
        return law.theta(t)

    if topology == "bounded-weak*":
        if not p_hat < 0.5:
            return ConditionReport(name, FAILS, f"p = limsup p_x estimated as {p_hat:.12g}, not below 1/2", wit, R,
                                   ["p < 1/2"], model=model)
        kappa_max = (4 * p_hat * (1 - p_hat)) ** -0.5 if p_hat > 0 else INF
        kappa = (1.0 + kappa_max) / 2.0 if math.isfinite(kappa_max) else 2.0
        wit.update({"kappa": kappa, "kappa bound": kappa_max})
        ineq.append(f"kappa = {kappa:.12g} < (4p(1-p))^(-1/2) = {kappa_max:.12g}")
        kap = {x: kappa for x in xs}
    else:
        ps = np.array([tail_sup[x] for x in xs])
        rho = float(stats.spearmanr(xs, ps).statistic) if len(set(ps.tolist())) > 1 else 0.0
        vanishing = rho <= -SPEARMAN_THRESHOLD and ps[-1] < ps[0] / 10.0
        ineq.append(f"p'_x decreases to 0 (Spearman rho = {rho:.3f}, p'_R = {ps[-1]:.3g})")
        wit["p' at radius"] = float(ps[-1])
        if not vanishing:
            return ConditionReport(name, FAILS, "p = limsup p_x does not vanish on the truncation", wit, R, ineq,
                                   model=model)
        kap = {x: (9.0 * tail_sup[x - 1]) ** -0.5 if x >= 2 else (9.0 * tail_sup[1]) ** -0.5 for x in xs}
    th = {x: theta(x, kap[x]) for x in xs}
    ks, mins = np.array(xs), np.array([th[x] for x in xs])
    div, rho = diverges(ks, mins)
    ineq.append(f"theta_x(kappa_x) -> inf: Spearman rho = {rho:.3f}")
    wit["theta_x(kappa_x)"] = th
    # sigma, eta: given or from the gamma closed form, else a grid search
    cands = []
    if sigma is not None and eta is not None:
        cands = [(sigma, eta)]
    else:
        if gamma and topology == "bounded-weak*":
            c = min(l.shape for l in laws.values())
            k0 = wit["kappa"]
            cands.append((k0 ** (-1.0 / c), 1.0 / k0))
        cands += [(float(s), float(e)) for e in np.arange(0.1, 1.0, 0.1) for s in np.geomspace(1e-3, 1e3, 25)]
    # finitely many states where kappa_x <= 1 are absorbed by the constant C on K
    exceptional = [x for x in xs if topology == "strong" and (x <= 1 or kap[x] <= 1.0)]
    checked = [x for x in xs if x not in exceptional]
    found = None
    for s_, e_ in cands:
        if all(th[x] >= -s_ * theta(x, e_) - 1e-12 * max(1.0, abs(th[x])) for x in checked):
            found = (s_, e_)
            break
    if found is None or not checked:
        return ConditionReport(name, NOT_FOUND, "no (sigma, eta) satisfies theta_x(kappa_x) >= -sigma theta_x(eta)",
                               wit, R, ineq, model=model)
    wit.update({"sigma": found[0], "eta": found[1]})
    if exceptional:
        wit["K"] = exceptional
        wit["C"] = max(-found[0] * theta(x, found[1]) - th[x] for x in exceptional)
        ineq.append(f"exceptional set K = {{{exceptional[0]}..{exceptional[-1]}}} absorbed by C = {wit['C']:.6g}")
    ineq.append(f"theta_x(kappa_x) >= -{found[0]:.6g} theta_x({found[1]:.6g}) for x = {checked[0]}..{R}")
    rep = ConditionReport(name, HOLDS if div else FAILS,
                          "both inequalities hold on the truncation" if div else "theta_x(kappa_x) does not diverge",
                          wit, R, ineq, model=model)
    if sensitivity:
        rep = _with_sensitivity(rep, model, lambda m: check_birth_death(m, topology, sigma=found[0], eta=found[1],
                                                                        sensitivity=False))
    return rep


# ---------------------------------------------------------------------------
# lattice random walk
# ---------------------------------------------------------------------------

def walk_strength(potential: Callable, x: tuple) -> float:
    """r(x) = sum over lattice neighbours y of exp(-(U(y) - U(x)) / 2)."""
    ux = potential(x)
    total = 0.0
    for i in range(len(x)):
        for s in (1, -1):
            y = tuple(c + (s if j == i else 0) for j, c in enumerate(x))
            total += math.exp(-(potential(y) - ux) / 2.0)
    return total


def check_random_walk(dimension: int, potential: Callable, force_bound: float, radius: int,
                      topology: str = "strong") -> ConditionReport:
    """Threshold and divergence criteria for the nearest-neighbour walk.

    Evaluates ``r(x)`` on the box ``|x|_inf <= radius``.  The bounded-weak*
    route needs ``liminf r > 2d exp(||F||)``; the strong route needs
    ``r -> inf``.  Both routes are reported in ``routes``; the top-level
    verdict is the one named by ``topology``.  The witness ``u_hat`` lower
    bound ``r(x) / (2d exp(||F||))`` is stored.
    """
    d = int(dimension)
    if d < 1:
        return ConditionReport("random walk", NOT_APPLICABLE, "dimension must be a positive integer")
    threshold = 2 * d * math.exp(abs(force_bound))

    def evaluate(rad):
        pts = list(itertools.product(range(-rad, rad + 1), repeat=d))
        r = {x: walk_strength(potential, x) for x in pts}
        mins: dict = {}
        for x, v in r.items():
            k = max(abs(c) for c in x)
            mins[k] = min(mins.get(k, INF), v)
        ks = np.array(sorted(mins))
        return r, ks, np.array([mins[k] for k in ks])

    r, ks, mins = evaluate(int(radius))
    _, ks2, mins2 = evaluate(max(int(radius) // 2, 4))
    lim, lim2 = liminf_estimate(mins), liminf_estimate(mins2)
    bw = HOLDS if lim > threshold else FAILS
    bw2 = HOLDS if lim2 > threshold else FAILS
    div, rho = diverges(ks, mins)
    div2, _ = diverges(ks2, mins2)
    st, st2 = (HOLDS if div else FAILS), (HOLDS if div2 else FAILS)
    u_hat_lb = {x: v / threshold for x, v in r.items()}
    wit = {"r": r, "threshold 2d exp(||F||)": threshold, "liminf r estimate": lim, "u_hat lower bound": u_hat_lb,
           "shell minima of r": dict(zip(ks.tolist(), mins.tolist()))}
    routes = {
        "bounded-weak*": ConditionReport("random walk (bounded-weak*)", bw if bw == bw2 else INCONCLUSIVE,
                                         f"liminf r estimate {lim:.6g} vs threshold {threshold:.6g}", radius=radius),
        "strong": ConditionReport("random walk (strong)", st if st == st2 else INCONCLUSIVE,
                                  f"shell minima of r: Spearman rho = {rho:.3f}", radius=radius),
    }
    top = routes[topology]
    ineq = [f"liminf r = {lim:.12g} > {threshold:.12g}: {lim > threshold}", f"r -> inf (Spearman rho {rho:.3f}): {div}"]
    return ConditionReport(f"random walk ({topology})", top.verdict, top.detail, wit, radius, ineq, routes)


# ---------------------------------------------------------------------------
# path-counting graph condition
# ---------------------------------------------------------------------------

def _graph_edges(graph) -> tuple[list, list, dict]:
    if isinstance(graph, SemiMarkovModel):
        nodes = list(graph.states)
        edges = [e for e, p in zip(graph.edges, graph.prob) if p > 0]
        probs = {e: float(p) for e, p in zip(graph.edges, graph.prob)}
        return nodes, edges, probs
    if isinstance(graph, nx.DiGraph):
        return list(graph.nodes), list(graph.edges), {(a, b): d.get("p") for a, b, d in graph.edges(data=True)}
    raise TypeError("graph must be a networkx DiGraph or a SemiMarkovModel")


def check_condition5(graph, E_hat: Iterable, W: Iterable, lam: float, root, *, a: float | None = None) -> ConditionReport:
    """Path-counting inequality from ``root`` on a finite directed graph.

    Every walk from ``root`` must satisfy ``#(E_hat & W) >= lam #W`` along
    it.  This holds iff no walk has negative total weight under
    ``w = 1_{E_hat & W} - lam 1_W``, which Bellman-Ford decides: a
    reachable negative cycle or a negative shortest distance is a
    counterexample, otherwise the distances are a potential certificate.
    Items (a) (every node has an ``E_hat`` successor) and, when transition
    probabilities and ``a`` are given, (ii) (``R(y) < a`` on ``W``) are
    checked as well.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    nodes, edges, probs = _graph_edges(graph)
    E_hat, W = set(map(tuple, E_hat)), set(map(tuple, W))
    edge_set = set(edges)
    for name, sub in (("E_hat", E_hat), ("W", W)):
        extra = sub - edge_set
        if extra:
            raise ValueError(f"{name} contains non-edges: {sorted(extra, key=repr)[:3]}")
    if root not in set(nodes):
        raise ValueError(f"root {root!r} is not a node")
    wit: dict = {"lambda": lam, "root": root}
    ineq = []
    no_succ = [y for y in nodes if not any(e[0] == y for e in E_hat)]
    ineq.append(f"item (a): every node has an E_hat successor: {not no_succ}")
    if no_succ:
        wit["nodes without E_hat successor"] = no_succ
        return ConditionReport("condition 5", FAILS, f"item (a) fails at {no_succ[:3]}", wit, inequalities=ineq)
    if a is not None and all(v is not None for v in probs.values()):
        R = {y: sum(probs[e] for e in E_hat if e[0] == y) for y in nodes}
        bad = [e for e in W if not R[e[0]] < a]
        wit["R"] = R
        ineq.append(f"item (ii): R(y) < {a:g} for (y, z) in W: {not bad}")
        if bad:
            return ConditionReport("condition 5", FAILS, f"item (ii) fails on {bad[:3]}", wit, inequalities=ineq)
    weight = {e: (1.0 if e in E_hat and e in W else 0.0) - (lam if e in W else 0.0) for e in edges}
    dist = {v: INF for v in nodes}
    pred: dict = {v: None for v in nodes}
    dist[root] = 0.0
    n = len(nodes)
    tol = 1e-12
    changed_node = None
    for it in range(n):
        changed_node = None
        for e in edges:
            u_, v_ = e
            if dist[u_] == INF:
                continue
            nd = dist[u_] + weight[e]
            if nd < dist[v_] - tol:
                dist[v_] = nd
                pred[v_] = u_
                changed_node = v_
        if changed_node is None:
            break
    if changed_node is not None:
        # walk back n steps to land on the negative cycle
        v = changed_node
        for _ in range(n):
            v = pred[v]
        cycle = [v]
        w = pred[v]
        while w != v:
            cycle.append(w)
            w = pred[w]
        cycle.append(v)
        cycle.reverse()
        prefix = _path_to(pred, root, cycle[0], nodes)
        wit["violating walk"] = prefix + cycle[1:]
        wit["negative cycle"] = cycle
        ineq.append("reachable cycle with negative total weight")
        return ConditionReport("condition 5", FAILS, "a reachable cycle has fewer E_hat edges than required", wit,
                               inequalities=ineq)
    neg = [v for v in nodes if dist[v] < -tol]
    if neg:
        v = min(neg, key=lambda x: dist[x])
        wit["violating walk"] = _path_to(pred, root, v, nodes)
        ineq.append(f"shortest walk weight {dist[v]:.6g} < 0")
        return ConditionReport("condition 5", FAILS, "a walk from the root violates the inequality", wit,
                               inequalities=ineq)
    wit["potential"] = {v: d for v, d in dist.items() if d < INF}
    ineq.append("potential phi with phi(root) = 0, phi >= 0 and phi(z) <= phi(y) + w(y, z) on reachable edges")
    return ConditionReport("condition 5", HOLDS, "no walk from the root has negative weight", wit, inequalities=ineq)


def _path_to(pred, root, target, nodes) -> list:
    path = [target]
    seen = {target}
    v = target
    while v != root and pred.get(v) is not None and len(path) <= len(nodes):
        v = pred[v]
        if v in seen:
            break
        seen.add(v)
        path.append(v)
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# re-validation
# ---------------------------------------------------------------------------

def recheck(report: ConditionReport, *, graph=None, E_hat=None, W=None) -> bool:
    """Plug the stored witness of a ``holds`` report back into its inequalities."""
    if not report.holds:
        raise ValueError("only holding reports carry a certificate")
    wit = report.witnesses
    name = report.condition
    if name == "drift":
        m = report.model
        u = wit["u"]
        K = set(wit["K"])
        lam, b = wit["lambda"], wit["b"]
        return lam < 1 and all(
            m.apply(u, x) <= lam * u[x] + b * (x in K) + 1e-12 * max(1.0, u[x])
            for x in m.states)
    if name == "condition 5":
        nodes, edges, _ = _graph_edges(graph)
        lam, phi = wit["lambda"], wit["potential"]
        E_hat, W = set(map(tuple, E_hat)), set(map(tuple, W))
        w = {e: (1.0 if e in E_hat and e in W else 0.0) - (lam if e in W else 0.0) for e in edges}
        return phi[wit["root"]] == 0.0 and all(v >= -1e-12 for v in phi.values()) and all(
            phi[z] <= phi[y] + w[(y, z)] + 1e-12 for (y, z) in edges if y in phi)
    if name == "condition 4":
        m = report.model
        keys = {_scale(l)[0] for l in m.laws}
        return len(keys) == 1
    if name in ("condition 2", "condition 3"):
        u_hat = wit["u_hat"]
        return wit["lower bound c"] > 0 and (name == "condition 2" or all(
            math.log(v) > wit["ell"] for x, v in u_hat.items() if x not in set(wit["level set"])))
    if name.startswith("condition 1"):
        m = report.model
        lu, s, e, C, K = wit["L u_hat"], wit["sigma"], wit["eta"], wit["C"], set(wit["K"])
        return all(lu[x] >= -s * m.law(x).theta(e) - C * (x in K) - 1e-12 for x in m.states)
    if name.startswith("birth-death"):
        th, s, e = wit["theta_x(kappa_x)"], wit["sigma"], wit["eta"]
        m = report.model
        return all(th[x] >= -s * m.law(x).theta(e) - 1e-9 * max(1.0, abs(th[x])) for x in th)
    if name.startswith("random walk"):
        r, thr = wit["r"], wit["threshold 2d exp(||F||)"]
        return all(abs(wit["u_hat lower bound"][x] - r[x] / thr) <= 1e-12 * max(1.0, r[x]) for x in r)
    raise ValueError(f"no re-validation rule for {name!r}")
