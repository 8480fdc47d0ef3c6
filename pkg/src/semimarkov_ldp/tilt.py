"""Exponential change of measure: tilted kernels, likelihood ratios and importance sampling.

A tilt is a pair ``(F, h)``: ``F`` reweights edge ``(x, y)`` by
``exp(F(x, y))`` and ``h`` reweights a wait ``s`` at ``x`` by
``exp(s h(x, s))``.  Waiting tilts are kept in the closed form
``h(x, s) = beta + gamma / s + c 1{s > cutoff}`` whenever possible so that
tilted laws stay in their named families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .kernel.laws import INF, Dirac, Gamma, LawError, NumericDensity, WaitingLaw, integrate_half_line, tilt_normalizer
from .kernel.model import ModelError, SemiMarkovModel
from .simulate import (BatchStatistics, Event, Trajectory, corrected_average, per_state_accumulator,
                       simulate_batch)


class TiltError(ValueError):
    """A tilt outside the admissible set, or a target outside the tiltable domain."""


# ---------------------------------------------------------------------------
# waiting-time tilts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaitTilt:
    """``h(s) = beta + gamma / s + c 1{s > cutoff}``."""

    beta: float = 0.0
    gamma: float = 0.0
    c: float = 0.0
    cutoff: float = INF

    @property
    def is_zero(self) -> bool:
        return self.beta == 0.0 and self.gamma == 0.0 and (self.c == 0.0 or not math.isfinite(self.cutoff))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.beta + self.gamma / s + self.c * (s > self.cutoff)

    def weight(self, s):
        """``s h(s)``, finite also at small ``s``."""
        s = np.asarray(s, dtype=float)
        return self.beta * s + self.gamma + self.c * s * (s > self.cutoff)

    def log_normalizer(self, law: WaitingLaw) -> float:
        z = tilt_normalizer(law, self.beta, self.c, self.cutoff)
        return self.gamma + math.log(z) if 0 < z < INF else (INF if z >= INF else -INF)

    def tilted_law(self, law: WaitingLaw) -> WaitingLaw:
        if self.beta == 0.0 and (self.c == 0.0 or not math.isfinite(self.cutoff)):
            return law
        return law.tilt(self.beta, self.c, self.cutoff)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma, "c": self.c,
                "cutoff": self.cutoff if math.isfinite(self.cutoff) else "inf"}

    @classmethod
    def from_dict(cls, d: Mapping) -> "WaitTilt":
        cut = d.get("cutoff", INF)
        return cls(float(d.get("beta", 0.0)), float(d.get("gamma", 0.0)), float(d.get("c", 0.0)),
                   INF if cut in ("inf", None) else float(cut))


@dataclass(frozen=True)
class DensityRatioTilt:
    """``s h(s) = log(d target / d base)(s)``: reweights ``base`` into ``target``."""

    target: WaitingLaw
    base: WaitingLaw

    def weight(self, s):
        s = np.asarray(s, dtype=float)
        if isinstance(self.base, Dirac):
            return np.zeros_like(s)
        with np.errstate(divide="ignore"):
            return np.asarray(self.target.logpdf(s), dtype=float) - np.asarray(self.base.logpdf(s), dtype=float)

    def __call__(self, s):
        return self.weight(s) / np.asarray(s, dtype=float)

    def log_normalizer(self, law: WaitingLaw) -> float:
        return 0.0

    def tilted_law(self, law: WaitingLaw) -> WaitingLaw:
        return self.target


@dataclass(frozen=True)
class CallableTilt:
    """Arbitrary ``h(s)``; tilted laws are tabulated numerically."""

    func: Callable

    def weight(self, s):
        s = np.asarray(s, dtype=float)
        return s * np.asarray(self.func(s), dtype=float)

    def __call__(self, s):
        return np.asarray(self.func(np.asarray(s, dtype=float)), dtype=float)

    def log_normalizer(self, law: WaitingLaw) -> float:
        if isinstance(law, Dirac):
            return float(self.weight(law.point))
        z = integrate_half_line(lambda s: math.exp(float(self.weight(s))) * float(law.pdf(s)), 0.0, INF)
        return math.log(z) if 0 < z < INF else INF

    def tilted_law(self, law: WaitingLaw) -> WaitingLaw:
        if isinstance(law, Dirac):
            return law
        lz = self.log_normalizer(law)
        if not math.isfinite(lz):
            raise LawError("tilt normalizer diverges")
        weight = self.weight

        def density(s, lz=lz):
            s = np.asarray(s, dtype=float)
            with np.errstate(over="ignore"):
                return np.asarray(law.pdf(s), dtype=float) * np.exp(np.asarray(weight(s), dtype=float) - lz)

        return NumericDensity(density=density, label="callable tilt", check_mass=False)


_ZERO = WaitTilt()


# ---------------------------------------------------------------------------
# tilt parameters
# ---------------------------------------------------------------------------

@dataclass
class TiltSpec:
    """Edge weights ``F`` and per-state waiting tilts ``h``; missing entries are zero."""

    edge: dict = field(default_factory=dict)
    wait: dict = field(default_factory=dict)

    def F(self, x, y) -> float:
        return float(self.edge.get((x, y), 0.0))

    def h_of(self, x):
        return self.wait.get(x, _ZERO)

    def h(self, x, s):
        return self.h_of(x)(s)

    @property
    def is_identity(self) -> bool:
        return all(v == 0.0 for v in self.edge.values()) and all(
            isinstance(w, WaitTilt) and w.is_zero for w in self.wait.values())

    def row_log_normalizer(self, model: SemiMarkovModel, x) -> float:
        total = 0.0
        for y, p in model.transition_dict()[x].items():
            total += p * math.exp(self.F(x, y))
        return math.log(total)

    def g(self, model: SemiMarkovModel) -> dict:
        """``g(x) = log sum_z p_xz e^{F(x,z)} + log int e^{s h(x,s)} psi_x(ds)``."""
        rows = model.transition_dict()
        out = {}
        for x in model.states:
            row = sum(p * math.exp(self.F(x, y)) for y, p in rows[x].items())
            out[x] = math.log(row) + self.h_of(x).log_normalizer(model.law(x))
        return out

    def admissible(self, model: SemiMarkovModel) -> list[str]:
        """States where a normalizer diverges (empty when the tilt is admissible)."""
        bad = []
        for x, v in self.g(model).items():
            if not math.isfinite(v):
                bad.append(x)
        return bad

    def to_dict(self) -> dict:
        waits = {}
        for x, w in self.wait.items():
            if not isinstance(w, WaitTilt):
                raise TiltError(f"waiting tilt at {x!r} has no closed form and cannot be serialized")
            waits[x] = w.to_dict()
        return {"edge": [[x, y, v] for (x, y), v in self.edge.items()],
                "wait": [[x, d] for x, d in waits.items()]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TiltSpec":
        edge = {(_key(x), _key(y)): float(v) for x, y, v in d.get("edge", [])}
        wait = {_key(x): WaitTilt.from_dict(w) for x, w in d.get("wait", [])}
        return cls(edge, wait)


def _key(x):
    return tuple(x) if isinstance(x, list) else x


# ---------------------------------------------------------------------------
# tilted kernels
# ---------------------------------------------------------------------------

def tilted_kernel(model: SemiMarkovModel, spec: TiltSpec) -> SemiMarkovModel:
    """The kernel ``(p^F, psi^h)``.

    Named families stay closed under pure exponential tilts (Exp and Gamma
    shift their rate); other tilts give a numeric density.
    """
    if spec.is_identity:
        return model
    rows = model.transition_dict()
    transitions = {}
    for x in model.states:
        w = {y: p * math.exp(spec.F(x, y)) for y, p in rows[x].items()}
        total = sum(w.values())
        if not (0 < total < INF):
            raise TiltError(f"edge tilt normalizer at {x!r} is {total!r}")
        transitions[x] = {y: v / total for y, v in w.items() if v > 0}
    laws = {}
    for x in model.states:
        ht = spec.h_of(x)
        law = model.law(x)
        if not math.isfinite(ht.log_normalizer(law)):
            raise TiltError(f"waiting tilt normalizer diverges at {x!r}")
        try:
            laws[x] = ht.tilted_law(law)
        except LawError as exc:
            raise TiltError(f"waiting tilt at {x!r}: {exc}") from exc
    return model.with_transitions(transitions, laws, name=f"{model.name}-tilted")


def _wait_tilt_between(target: WaitingLaw, base: WaitingLaw):
    """Closed-form ``h`` with ``psi^h = target`` when both laws allow it."""
    if target is base:
        return _ZERO
    if isinstance(target, Gamma) and isinstance(base, Gamma) and target.shape == base.shape:
        beta = base.rate - target.rate
        return WaitTilt(beta=beta, gamma=target.shape * math.log(target.rate / base.rate))
    if isinstance(target, Dirac) and isinstance(base, Dirac):
        if target.point != base.point:
            raise TiltError("a Dirac law can only be tilted into itself")
        return _ZERO
    return DensityRatioTilt(target, base)


def tilt_from_target(model: SemiMarkovModel, pair) -> tuple[TiltSpec, SemiMarkovModel]:
    """Tilt whose kernel is ``(tilde Q, tilde mu)`` for a pair without atoms at infinity.

    ``F(x, y) = log(Q(x, y) / (Q_x p_xy))`` and
    ``s h(x, s) = log(d tilde mu_x / d psi_x)(s)``.  Under the tilted kernel
    the embedded chain has invariant law ``Q_x / ||Q||`` and the stationary
    mean wait is ``1 / ||Q||``.
    """
    if any(v > 0 for v in pair.atoms.values()):
        raise TiltError("target has mass at infinity")
    viol = pair.domain_violations()
    if viol:
        raise TiltError("target is off the effective domain: " + "; ".join(viol))
    out = pair.exit_current()
    missing = [x for x in model.states if out.get(x, 0.0) <= 0]
    if missing:
        raise TiltError(f"target gives zero exit current at {missing[:3]}")
    edge = {}
    for (x, y), q in pair.flow.entries.items():
        p = model.p(x, y)
        if p <= 0:
            raise TiltError(f"target charges {(x, y)!r}, which the model cannot jump along")
        f = math.log(q / (out[x] * p))
        edge[(x, y)] = 0.0 if abs(f) <= 1e-12 else f
    # edges the target leaves empty get weight zero in the tilted kernel
    for (x, y) in model.edges:
        if (x, y) not in edge:
            edge[(x, y)] = -INF
    for i, esc in model.escapes.items():
        for y, _ in esc:
            edge[(model.states[i], y)] = -INF
    import networkx as nx

    g = nx.DiGraph()
    g.add_nodes_from(model.states)
    g.add_edges_from(pair.flow.entries)
    if not nx.is_strongly_connected(g):
        raise TiltError("target transition matrix tilde Q is not irreducible")
    wait = {}
    for x in model.states:
        w = _wait_tilt_between(pair.law(x), model.law(x))
        if not (isinstance(w, WaitTilt) and w.is_zero):
            wait[x] = w
    spec = TiltSpec(edge, wait)
    return spec, tilted_kernel(model, spec)


def spec_from_u_A(model: SemiMarkovModel, u, A: Iterable) -> TiltSpec:
    """``F = log u(y)/u(x)`` and ``h = h^{u,A}``, for which ``g_{F,h} = 0``.

    On ``A`` the waiting tilt is ``log(u/Pu)(x) / s``; off ``A`` it is the
    constant ``theta_x(u/Pu(x))``, which requires ``u/Pu <= psi_x(e^{zeta tau})``.
    """
    A = set(A)
    uf = u if callable(u) else (lambda x: u[x])
    rows = model.transition_dict()
    edge, wait = {}, {}
    for x in model.states:
        ux = float(uf(x))
        if not ux > 0:
            raise TiltError(f"u must be positive; u({x!r}) = {ux!r}")
        pu = 0.0
        for y, p in rows[x].items():
            uy = float(uf(y))
            if not uy > 0:
                raise TiltError(f"u must be positive; u({y!r}) = {uy!r}")
            edge[(x, y)] = math.log(uy / ux)
            pu += p * uy
        ratio = ux / pu
        if x in A:
            wait[x] = WaitTilt(gamma=math.log(ratio))
        else:
            law = model.law(x)
            if ratio > law.mgf_at_zeta:
                raise TiltError(f"u/Pu({x!r}) = {ratio:.6g} exceeds the MGF at the abscissa; add {x!r} to A")
            wait[x] = WaitTilt(beta=float(law.theta(ratio)))
    return TiltSpec(edge, wait)


# ---------------------------------------------------------------------------
# likelihood ratios and martingales
# ---------------------------------------------------------------------------

def _traj_edges(traj: Trajectory):
    lab = traj.labels
    return [(lab[a], lab[b]) for a, b in zip(traj.states[:-1], traj.states[1:])]


def loglik_ratio(traj: Trajectory, spec: TiltSpec, model: SemiMarkovModel) -> float:
    """``(1/t) log dP^{F,h}/dP`` on the path up to ``S_{N_t+1}``.

    Equals ``<Q_t, F - g> + <mu-hat_t, h>`` where ``g`` is paired with the
    source state of each edge.
    """
    g = spec.g(model)
    t = traj.horizon
    edge_part = sum(spec.F(x, y) - g[x] for x, y in _traj_edges(traj))
    wait_part = _wait_sum(traj, spec)
    val = (edge_part + wait_part) / t
    if math.isnan(val):
        raise TiltError("log-likelihood is undefined on this trajectory")
    return val


def _wait_sum(traj: Trajectory, spec: TiltSpec) -> float:
    lab = traj.labels
    total = 0.0
    for i, tau in zip(traj.states[:-1], traj.waits):
        total += float(spec.h_of(lab[i]).weight(tau))
    return total


def martingale_value(traj: Trajectory, spec: TiltSpec, model: SemiMarkovModel) -> float:
    """``M^{F,h}_t = exp(t [<Q_t, F - g> + <mu-hat_t, h>])``."""
    return math.exp(traj.horizon * loglik_ratio(traj, spec, model))


def martingale_value_uA(traj: Trajectory, u, A: Iterable, model: SemiMarkovModel) -> float:
    """``M^{u,A}_t = u(X_{N_t+1}) / u(X_0) exp(t <mu-hat_t, h^{u,A}>)``."""
    spec = spec_from_u_A(model, u, A)
    uf = u if callable(u) else (lambda x: u[x])
    lab = traj.labels
    ratio = float(uf(lab[traj.states[-1]])) / float(uf(lab[traj.states[0]]))
    avg = corrected_average(traj, lambda x, s: spec.h(x, s))
    return ratio * math.exp(traj.horizon * avg)


def batch_log_likelihood(stats: BatchStatistics, spec: TiltSpec, model: SemiMarkovModel,
                         wait_column: int | None = None) -> np.ndarray:
    """``log dP^{F,h}/dP`` for every replica of a batch.

    ``stats`` may come from the tilted or the untilted model (same states).
    Closed-form waiting tilts use per-state time and visit counts; other
    tilts need the hat-sum of ``s h(x, s)`` in accumulator ``wait_column``.
    """
    g = spec.g(model)
    F = np.array([spec.F(x, y) - g[x] for x, y in stats.edges])
    counts = stats.edge_counts
    with np.errstate(invalid="ignore"):
        finite = np.isfinite(F)
        edge_part = counts[:, finite] @ F[finite]
        if (~finite).any():
            # edges of weight -inf cannot be traversed under the tilted law
            hit = counts[:, ~finite].sum(axis=1) > 0
            edge_part = np.where(hit, -INF, edge_part)
    closed = all(isinstance(spec.h_of(x), WaitTilt) and spec.h_of(x).c == 0.0 for x in stats.labels)
    if closed:
        beta = np.array([spec.h_of(x).beta for x in stats.labels])
        gamma = np.array([spec.h_of(x).gamma for x in stats.labels])
        wait_part = stats.hat_time @ beta + stats.visits @ gamma
    else:
        if wait_column is None:
            raise TiltError("waiting tilt needs an accumulator column; use wait_accumulator")
        wait_part = stats.accum[:, wait_column]
    return edge_part + wait_part


def wait_accumulator(model: SemiMarkovModel, spec: TiltSpec):
    """Accumulator of ``s h(x, s)`` for :func:`simulate_batch`."""
    return per_state_accumulator(model, {x: spec.h_of(x).weight for x in model.states})


def _needs_accumulator(spec: TiltSpec, model: SemiMarkovModel) -> bool:
    return not all(isinstance(spec.h_of(x), WaitTilt) and spec.h_of(x).c == 0.0 for x in model.states)


@dataclass(frozen=True)
class MartingaleSample:
    """Monte Carlo values of ``M^{F,h}_t`` under the untilted law."""

    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        return float(np.std(self.values, ddof=1) / math.sqrt(self.values.size))


def martingale_sample(model: SemiMarkovModel, spec: TiltSpec, start, horizon: float, replicas: int, seed: int,
                      *, workers: int = 1) -> MartingaleSample:
    """Simulate under ``model`` and evaluate ``M^{F,h}_t`` on each replica."""
    acc = [wait_accumulator(model, spec)] if _needs_accumulator(spec, model) else []
    stats = simulate_batch(model, start, horizon, replicas, seed, accumulators=acc, workers=workers)
    ll = batch_log_likelihood(stats, spec, model, 0 if acc else None)
    return MartingaleSample(np.exp(ll))


# ---------------------------------------------------------------------------
# importance sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    """Probability estimate with its standard error."""

    estimate: float
    stderr: float
    replicas: int
    hits: int

    @property
    def relative_stderr(self) -> float:
        return self.stderr / self.estimate if self.estimate > 0 else INF

    def decay_rate(self, horizon: float) -> float:
        """``-(1/t) log estimate``."""
        return -math.log(self.estimate) / horizon if self.estimate > 0 else INF


def importance_estimate(model: SemiMarkovModel, event: Event, spec: TiltSpec, horizon: float, replicas: int,
                        seed: int, *, start=None, workers: int = 1, max_jumps: int | None = None) -> Estimate:
    """Estimate ``P(event)`` from samples of the tilted kernel.

    Each replica contributes ``1_event exp(-log dP^{F,h}/dP)``; the identity
    tilt gives the plain Monte Carlo mean.  Replicas are reduced in index
    order so the result does not depend on ``workers``.
    """
    if start is None:
        start = model.states[0]
    tilted = tilted_kernel(model, spec)
    acc = [wait_accumulator(tilted, spec)] if _needs_accumulator(spec, model) else []
    kw = {} if max_jumps is None else {"max_jumps": max_jumps}
    stats = simulate_batch(tilted, start, horizon, replicas, seed, accumulators=acc, workers=workers, **kw)
    hit = np.asarray(event(stats), dtype=bool)
    if spec.is_identity:
        vals = hit.astype(float)
    else:
        ll = batch_log_likelihood(stats, spec, model, 0 if acc else None)
        vals = np.where(hit, np.exp(-ll), 0.0)
    mean = float(math.fsum(vals) / vals.size)
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else INF
    return Estimate(mean, sd / math.sqrt(vals.size), int(vals.size), int(hit.sum()))


def occupation_tilt(model: SemiMarkovModel, pi, rate=None):
    """Tilt toward the minimizer of the occupation rate at ``pi``.

    Returns ``(spec, tilted_model, pair)``.  Each state's wait is
    exponentially tilted so that its mean becomes ``pi_x / Q_x``, where ``Q``
    is the optimal flow.
    """
    from .rate.occupation import measure_marginal_rate, single_gstar
    from .rate.pair import MeasureFlowPair

    if rate is None:
        rate = measure_marginal_rate(pi, model)
    if rate.flow is None or not math.isfinite(rate.value):
        raise TiltError("occupation target has infinite rate")
    pi_map = dict(zip(model.states, np.asarray(pi, dtype=float))) if not isinstance(pi, Mapping) else dict(pi)
    out = rate.flow.exit_current()
    tilde, wait = {}, {}
    for x in model.states:
        qx = out.get(x, 0.0)
        if qx <= 0:
            raise TiltError(f"optimal flow vanishes at {x!r}; no tilt reaches this target")
        law = model.law(x)
        a = pi_map.get(x, 0.0) / qx
        if isinstance(law, Dirac):
            tilde[x] = law
            continue
        lam = float(single_gstar(law, a)[1])
        if not math.isfinite(lam):
            raise TiltError(f"no exponential tilt of the wait at {x!r} has mean {a:.6g}")
        tilde[x] = law.exp_tilt(lam) if lam != 0.0 else law
        wait[x] = WaitTilt(beta=lam, gamma=-float(law.log_mgf(lam)))
    pair = MeasureFlowPair.build(model, rate.flow, tilde, normalize=True)
    edge = {}
    for (x, y), q in pair.flow.entries.items():
        edge[(x, y)] = math.log(q / (pair.exit_current()[x] * model.p(x, y)))
    for e in model.edges:
        edge.setdefault(e, -INF)
    spec = TiltSpec(edge, wait)
    return spec, tilted_kernel(model, spec), pair
