"""Trajectory sampling and empirical statistics.

Two sampling paths share one RNG convention:

* :func:`sample_trajectory` records a full trajectory (states, waits, jump
  times) for a single ``(seed, index)`` key;
* :func:`simulate_batch` steps many replicas in lockstep and keeps only the
  sufficient statistics (edge counts, per-state time, last wait, ...).
  Replicas are grouped in fixed-size blocks; block ``b`` draws from the
  stream keyed by ``(seed, b)``, so results do not depend on how blocks are
  scheduled over workers.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .kernel.laws import Dirac, Exponential, Gamma, Rayleigh, WaitingLaw
from .kernel.model import ModelError, SemiMarkovModel, TruncationEscape

State = Hashable

MAX_JUMPS = 100_000_000
BLOCK_SIZE = 2048


class ExplosionError(RuntimeError):
    """Jump-count cap reached; the (tilted) process may be explosive."""

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


def replica_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Generator keyed by ``(seed, index)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)])))


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """A sampled path up to a horizon.

    ``states`` holds ``X_0 .. X_{N+1}``: the last entry is the state entered
    at ``S_{N+1}``, after the in-progress wait.  ``waits`` holds
    ``tau_1 .. tau_{N+1}`` and ``jump_times`` holds ``S_0 = 0 .. S_{N+1}``.
    """

    states: np.ndarray
    waits: np.ndarray
    jump_times: np.ndarray
    horizon: float
    labels: tuple

    @property
    def n_jumps(self) -> int:
        """The counter N_t."""
        return len(self.waits) - 1

    def state_labels(self) -> list:
        return [self.labels[i] for i in self.states]

    def dump_rows(self) -> list[tuple]:
        """One row per jump: ``(k, X_{k-1}, X_k, tau_k, S_k)`` for k = 1..N+1."""
        return [(k, self.labels[self.states[k - 1]], self.labels[self.states[k]], float(self.waits[k - 1]),
                 float(self.jump_times[k])) for k in range(1, len(self.waits) + 1)]


class Flow:
    """Sparse nonnegative function on edges (events per unit time)."""

    def __init__(self, entries: Mapping[tuple, float]):
        self.entries: dict = {tuple(e): float(v) for e, v in entries.items() if v != 0.0}
        for e, v in self.entries.items():
            if v < 0 or math.isnan(v):
                raise ValueError(f"flow entry on {e!r} is {v!r}; flows are nonnegative")

    @classmethod
    def from_array(cls, model: SemiMarkovModel, values) -> "Flow":
        values = np.asarray(values, dtype=float)
        return cls({e: float(v) for e, v in zip(model.edges, values)})

    def to_array(self, model: SemiMarkovModel) -> np.ndarray:
        out = np.zeros(model.n_edges)
        for e, v in self.entries.items():
            k = model.edge_index.get(e)
            if k is None:
                raise ModelError(f"flow charges {e!r}, which is not a retained edge of the model")
            out[k] = v
        return out

    def get(self, x, y) -> float:
        return self.entries.get((x, y), 0.0)

    @property
    def norm(self) -> float:
        return float(sum(self.entries.values()))

    def exit_current(self) -> dict:
        out: dict = {}
        for (x, _), v in self.entries.items():
            out[x] = out.get(x, 0.0) + v
        return out

    def entrance_current(self) -> dict:
        out: dict = {}
        for (_, y), v in self.entries.items():
            out[y] = out.get(y, 0.0) + v
        return out

    def divergence(self) -> dict:
        """Exit minus entrance current at every touched state."""
        plus, minus = self.exit_current(), self.entrance_current()
        return {x: plus.get(x, 0.0) - minus.get(x, 0.0) for x in set(plus) | set(minus)}

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return all(abs(v) <= tol for v in self.divergence().values())

    def scaled(self, c: float) -> "Flow":
        return Flow({e: c * v for e, v in self.entries.items()})

    def __repr__(self) -> str:
        return f"Flow({self.entries!r})"


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted (state, duration) sample representing mu_t.

    Segment ``k`` (k = 1..N+1) carries state ``X_{k-1}``, duration
    ``tau_k`` and weight ``tau_k / t``; the in-progress segment carries the
    residual weight ``(t - S_N) / t``.
    """

    segment_states: np.ndarray
    durations: np.ndarray
    weights: np.ndarray
    labels: tuple

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def residual_weight(self) -> float:
        return float(self.weights[-1])

    def pi(self) -> dict:
        mass = np.bincount(self.segment_states, weights=self.weights, minlength=len(self.labels))
        return {x: float(m) for x, m in zip(self.labels, mass)}

    def integrate(self, f: Callable) -> float:
        """<mu_t, f> for ``f(x, s)``; ``f`` may be vectorized in ``s``."""
        return float(np.sum(self.weights * _evaluate_segments(f, self.segment_states, self.durations, self.labels)))

    def atom_at_infinity(self, x) -> float:
        return 0.0


def _evaluate_segments(f, states, durations, labels) -> np.ndarray:
    out = np.empty(len(durations))
    for i in np.unique(states):
        mask = states == i
        s = durations[mask]
        try:
            vals = np.broadcast_to(np.asarray(f(labels[i], s), dtype=float), s.shape)
        except (TypeError, ValueError):
            vals = np.array([float(f(labels[i], v)) for v in s])
        out[mask] = vals
    return out


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

class _Sampler:
    """Precomputed transition tables and family-vectorized wait sampling."""

    def __init__(self, model: SemiMarkovModel):
        n = model.n_states
        self.model = model
        deg = []
        targets, cums = [], []
        self.escape_labels: list = []
        for i in range(n):
            a, b = model.row_start[i], model.row_start[i + 1]
            tg = list(model.dst[a:b])
            pr = list(model.prob[a:b])
            for y, p in model.escapes.get(i, []):
                self.escape_labels.append((model.states[i], y))
                tg.append(-len(self.escape_labels))
                pr.append(p)
            if not tg or sum(pr) <= 0:
                raise ModelError(f"state {model.states[i]!r} has no outgoing edge")
            c = np.cumsum(pr)
            c /= c[-1]
            targets.append(tg)
            cums.append(c)
            deg.append(len(tg))
        self.deg = np.asarray(deg)
        width = int(self.deg.max())
        self.cum = np.full((n, width), np.inf)
        self.tgt = np.zeros((n, width), dtype=np.int64)
        for i in range(n):
            self.cum[i, :deg[i]] = cums[i]
            self.cum[i, deg[i] - 1] = np.inf  # guard against rounding at the top
            self.tgt[i, :deg[i]] = targets[i]
        self.cum_lists = [list(c[:-1]) for c in cums]
        self.tgt_lists = targets

        # wait-family codes: 0 exp, 1 gamma, 2 dirac, 3 rayleigh, 4 generic
        codes = np.empty(n, dtype=np.int64)
        a_par = np.ones(n)
        b_par = np.ones(n)
        for i, law in enumerate(model.laws):
            if isinstance(law, Exponential):
                codes[i], b_par[i] = 0, law.rate
            elif isinstance(law, Gamma):
                codes[i], a_par[i], b_par[i] = 1, law.shape, law.rate
            elif isinstance(law, Dirac):
                codes[i], b_par[i] = 2, law.point
            elif isinstance(law, Rayleigh):
                codes[i], b_par[i] = 3, law.scale
            else:
                codes[i] = 4
        self.codes, self.a_par, self.b_par = codes, a_par, b_par
        self.uniform_code = int(codes[0]) if (codes == codes[0]).all() and codes[0] != 4 else None

    def next_states(self, rng, cur: np.ndarray) -> np.ndarray:
        u = rng.random(cur.size)
        k = (self.cum[cur] <= u[:, None]).sum(axis=1)
        return self.tgt[cur, k]

    def waits(self, rng, cur: np.ndarray) -> np.ndarray:
        code = self.uniform_code
        if code is not None:
            return self._draw(code, rng, cur)
        out = np.empty(cur.size)
        codes = self.codes[cur]
        for c in np.unique(codes):
            mask = codes == c
            if c == 4:
                sub = cur[mask]
                vals = np.empty(sub.size)
                for i in np.unique(sub):
                    m = sub == i
                    vals[m] = self.model.laws[i].sample(rng, int(m.sum()))
                out[mask] = vals
            else:
                out[mask] = self._draw(int(c), rng, cur[mask])
        return out

    def _draw(self, code, rng, cur):
        if code == 0:
            return -np.log1p(-rng.random(cur.size)) / self.b_par[cur]
        if code == 1:
            return rng.standard_gamma(self.a_par[cur]) / self.b_par[cur]
        if code == 2:
            return self.b_par[cur].copy()
        if code == 3:
            return self.b_par[cur] * np.sqrt(-2.0 * np.log1p(-rng.random(cur.size)))
        raise AssertionError(code)

    def escape(self, code: int) -> TruncationEscape:
        src, dst = self.escape_labels[-code - 1]
        return TruncationEscape(src, dst)


def _sampler(model: SemiMarkovModel) -> _Sampler:
    if model._sampler is None:
        model.require_valid()
        model._sampler = _Sampler(model)
    return model._sampler


def _draw_start(model: SemiMarkovModel, start, rng, size: int) -> np.ndarray:
    if isinstance(start, Mapping):
        labels = list(start.keys())
        probs = np.asarray([start[x] for x in labels], dtype=float)
        idx = np.asarray([model.index[x] for x in labels])
        return idx[rng.choice(len(labels), size=size, p=probs / probs.sum())]
    if start not in model.index:
        raise ModelError(f"start state {start!r} is not a retained state")
    return np.full(size, model.index[start], dtype=np.int64)


# ---------------------------------------------------------------------------
# single trajectories
# ---------------------------------------------------------------------------

def sample_trajectory(model: SemiMarkovModel, start, horizon: float, seed: int, index: int = 0,
                      max_jumps: int = MAX_JUMPS) -> Trajectory:
    """Sample one path until the first jump after ``horizon``.

    Parameters
    ----------
    model : SemiMarkovModel
    start : state label or mapping label -> probability
    horizon : float
        Positive time horizon ``t``.
    seed, index : int
        RNG key; identical keys give bitwise-identical trajectories.
    max_jumps : int
        Explosion guard.

    Returns
    -------
    Trajectory
        With ``S_N <= t < S_{N+1}`` and the overshoot wait retained.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    smp = _sampler(model)
    rng = replica_rng(seed, index)
    x = int(_draw_start(model, start, rng, 1)[0])
    states = [x]
    waits: list[float] = []
    times = [0.0]
    s = 0.0
    laws = model.laws
    cum, tgt = smp.cum_lists, smp.tgt_lists
    chunk = rng.random(4096)
    pos = 0
    while True:
        if len(waits) >= max_jumps:
            raise ExplosionError(f"possible explosion: {max_jumps} jumps before t={horizon}",
                                 {"jumps": len(waits), "time": s})
        tau = float(laws[x].sample(rng, 1)[0])
        if pos == chunk.size:
            chunk = rng.random(4096)
            pos = 0
        u = chunk[pos]
        pos += 1
        y = tgt[x][bisect.bisect_right(cum[x], u)]
        if y < 0:
            raise smp.escape(y)
        s += tau
        waits.append(tau)
        times.append(s)
        states.append(y)
        x = y
        if s > horizon:
            break
    return Trajectory(np.asarray(states, dtype=np.int64), np.asarray(waits), np.asarray(times), float(horizon), model.states)


def empirical_flow(traj: Trajectory) -> Flow:
    """Q_t(x, y) = #{k <= N+1 : (X_{k-1}, X_k) = (x, y)} / t."""
    counts: dict = {}
    lab = traj.labels
    for a, b in zip(traj.states[:-1], traj.states[1:]):
        e = (lab[a], lab[b])
        counts[e] = counts.get(e, 0) + 1
    return Flow({e: c / traj.horizon for e, c in counts.items()})


def empirical_measure(traj: Trajectory) -> EmpiricalMeasure:
    """mu_t as weighted (state, duration) segments."""
    t = traj.horizon
    weights = traj.waits / t
    weights = weights.copy()
    weights[-1] = (t - traj.jump_times[-2]) / t
    return EmpiricalMeasure(traj.states[:-1].copy(), traj.waits.copy(), weights, traj.labels)


def corrected_average(traj: Trajectory, f: Callable) -> float:
    """<mu-hat_t, f> = (1/t) sum_{k=1}^{N+1} tau_k f(X_{k-1}, tau_k)."""
    vals = _evaluate_segments(f, traj.states[:-1], traj.waits, traj.labels)
    return float(np.sum(traj.waits * vals) / traj.horizon)


# ---------------------------------------------------------------------------
# batch engine
# ---------------------------------------------------------------------------

Accumulator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BatchStatistics:
    """Sufficient statistics of ``n`` replicas at horizon ``t``.

    Attributes
    ----------
    edge_counts : (n, E) int array
        Traversals of each retained edge for k = 1..N+1.
    hat_time : (n, V) array
        Sum of tau_k over k = 1..N+1 with X_{k-1} = x.
    visits : (n, V) array
        Number of k = 1..N+1 with X_{k-1} = x.
    accum : (n, m) array
        Sum over k = 1..N+1 of each accumulator at (X_{k-1}, tau_k).
    accum_last : (n, m) array
        The accumulator term of the in-progress segment.
    """

    horizon: float
    labels: tuple
    edges: tuple
    first_state: np.ndarray
    last_state: np.ndarray
    final_state: np.ndarray
    last_wait: np.ndarray
    overshoot: np.ndarray
    n_jumps: np.ndarray
    edge_counts: np.ndarray
    hat_time: np.ndarray
    visits: np.ndarray
    accum: np.ndarray
    accum_last: np.ndarray

    @property
    def n(self) -> int:
        return self.first_state.size

    def occupation(self) -> np.ndarray:
        """pi_t for every replica, shape (n, V)."""
        occ = self.hat_time.copy()
        occ[np.arange(self.n), self.last_state] -= self.overshoot
        return occ / self.horizon

    def flow(self) -> np.ndarray:
        """Q_t for every replica, shape (n, E)."""
        return self.edge_counts / self.horizon

    def flow_norm(self) -> np.ndarray:
        return (self.n_jumps + 1) / self.horizon

    @staticmethod
    def concatenate(parts: Sequence["BatchStatistics"]) -> "BatchStatistics":
        p0 = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)  # noqa: E731
        return BatchStatistics(
            p0.horizon, p0.labels, p0.edges,
            *(cat(name) for name in ("first_state", "last_state", "final_state", "last_wait", "overshoot",
                                     "n_jumps", "edge_counts", "hat_time", "visits", "accum", "accum_last")),
        )


def _simulate_block(model, smp, start, horizon, size, seed, block, accumulators, max_jumps):
    rng = replica_rng(seed, block)
    n_states, n_edges = model.n_states, model.n_edges
    m = len(accumulators)
    cur = _draw_start(model, start, rng, size)
    first = cur.copy()
    # edge lookup: dense (src, dst) -> edge id
    eid = np.full((n_states, n_states), -1, dtype=np.int64) if n_states <= 4096 else None
    if eid is not None:
        eid[model.src, model.dst] = np.arange(n_edges)
    edge_counts = np.zeros((size, n_edges), dtype=np.int64)
    hat_time = np.zeros((size, n_states))
    visits = np.zeros((size, n_states))
    accum = np.zeros((size, m))
    accum_last = np.zeros((size, m))
    last_state = np.zeros(size, dtype=np.int64)
    final_state = np.zeros(size, dtype=np.int64)
    last_wait = np.zeros(size)
    overshoot = np.zeros(size)
    n_jumps = np.zeros(size, dtype=np.int64)
    clock = np.zeros(size)
    active = np.arange(size)
    steps = 0
    while active.size:
        if steps >= max_jumps:
            raise ExplosionError(f"possible explosion: {max_jumps} jumps before t={horizon}",
                                 {"active_replicas": int(active.size), "jumps": steps})
        x = cur[active]
        tau = smp.waits(rng, x)
        y = smp.next_states(rng, x)
        if (y < 0).any():
            raise smp.escape(int(y[y < 0][0]))
        if eid is not None:
            e = eid[x, y]
        else:
            e = np.array([model.edge_index[(model.states[a], model.states[b])] for a, b in zip(x, y)])
        np.add.at(edge_counts, (active, e), 1)
        np.add.at(hat_time, (active, x), tau)
        np.add.at(visits, (active, x), 1.0)
        terms = np.empty((active.size, m))
        for j, acc in enumerate(accumulators):
            terms[:, j] = acc(x, tau)
        accum[active] += terms
        clock[active] += tau
        cur[active] = y
        done = clock[active] > horizon
        fin = active[done]
        last_state[fin] = x[done]
        final_state[fin] = y[done]
        last_wait[fin] = tau[done]
        overshoot[fin] = clock[fin] - horizon
        n_jumps[fin] = steps
        accum_last[fin] = terms[done]
        active = active[~done]
        steps += 1
    return BatchStatistics(float(horizon), model.states, model.edges, first, last_state, final_state, last_wait,
                           overshoot, n_jumps, edge_counts, hat_time, visits, accum, accum_last)


def simulate_batch(model: SemiMarkovModel, start, horizon: float, replicas: int, seed: int, *,
                   accumulators: Sequence[Accumulator] = (), workers: int = 1, block_size: int = BLOCK_SIZE,
                   max_jumps: int = MAX_JUMPS) -> BatchStatistics:
    """Simulate ``replicas`` independent paths and keep sufficient statistics.

    ``accumulators`` are vectorized functions ``g(state_index, tau)``; the
    result holds their hat-sums over k = 1..N+1.  Replica ``i`` lives in
    block ``i // block_size``, whose stream is keyed by ``(seed, block)``;
    the output is identical for every ``workers`` value.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if replicas < 1:
        raise ValueError("replicas must be positive")
    smp = _sampler(model)
    sizes = [min(block_size, replicas - b * block_size) for b in range((replicas + block_size - 1) // block_size)]
    job = lambda b: _simulate_block(model, smp, start, horizon, sizes[b], seed, b, list(accumulators), max_jumps)  # noqa: E731
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    return BatchStatistics.concatenate(parts)


def per_state_accumulator(model: SemiMarkovModel, funcs: Mapping[State, Callable]) -> Accumulator:
    """Wrap per-state callables ``f_x(tau)`` as a batch accumulator (missing states give 0)."""
    table = {model.index[x]: f for x, f in funcs.items()}

    def acc(x: np.ndarray, tau: np.ndarray) -> np.ndarray:
        out = np.zeros(tau.size)
        for i in np.unique(x):
            f = table.get(int(i))
            if f is not None:
                mask = x == i
                out[mask] = np.broadcast_to(np.asarray(f(tau[mask]), dtype=float), (int(mask.sum()),))
        return out

    return acc


# ---------------------------------------------------------------------------
# events on (pi_t, Q_t)
# ---------------------------------------------------------------------------

class Event:
    """Predicate on (pi_t, Q_t), evaluated on batch statistics."""

    def __call__(self, stats: BatchStatistics) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class FullSpace(Event):
    def __call__(self, stats):
        return np.ones(stats.n, dtype=bool)

    def describe(self):
        return "full space"


@dataclass(frozen=True)
class OccupationAtLeast(Event):
    """{pi_t(state) >= level}."""

    state: object
    level: float

    def __call__(self, stats):
        i = stats.labels.index(self.state)
        return stats.occupation()[:, i] >= self.level

    def describe(self):
        return f"pi_t({self.state}) >= {self.level:g}"


@dataclass(frozen=True)
class FlowNormAtLeast(Event):
    """{||Q_t|| >= level}."""

    level: float

    def __call__(self, stats):
        return stats.flow_norm() >= self.level

    def describe(self):
        return f"||Q_t|| >= {self.level:g}"
