"""Semi-Markov model definition and structural validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping

import numpy as np
import networkx as nx

from .laws import WaitingLaw

State = Hashable


class ModelError(ValueError):
    """Structurally invalid model or an operation outside its truncation."""


class TruncationEscape(ModelError):
    """A trajectory tried to leave the retained state set."""

    def __init__(self, source: State, target: State):
        super().__init__(f"truncation boundary reached: transition {source!r} -> {target!r} leaves the retained states")
        self.source = source
        self.target = target


@dataclass(frozen=True)
class Truncation:
    """Radius of the retained state set and what happens at its boundary.

    ``policy`` is ``"error"`` (edges leaving the retained set are kept in
    the rows; simulation raises if one is taken) or ``"renormalize"``
    (such edges are dropped and boundary rows renormalized).
    """

    radius: float | None = None
    policy: str = "error"

    def __post_init__(self):
        if self.policy not in ("error", "renormalize"):
            raise ModelError(f"unknown truncation policy {self.policy!r}")


@dataclass(frozen=True)
class Family:
    """Provenance of a model built from a countable family.

    ``rebuild(radius)`` regenerates the model at a different truncation,
    which the condition checkers use for boundary-sensitivity tests.
    """

    kind: str
    params: dict
    rebuild: Callable[[float], "SemiMarkovModel"] = field(repr=False, compare=False)


class SemiMarkovModel:
    """Embedded transition probabilities plus one waiting law per state.

    Parameters
    ----------
    transitions : mapping
        ``transitions[x][y] = p_xy``.  Targets outside ``laws`` are escape
        edges and require a truncation.
    laws : mapping
        ``laws[x]`` is the waiting law at ``x``; its key order fixes the
        canonical integer labeling of states.
    truncation : Truncation, optional
    family : Family, optional
    name : str, optional

    Notes
    -----
    Construction is lenient so that :func:`validate_model` can report
    problems in structured form; operations that need a valid chain call
    :meth:`require_valid`.
    """

    def __init__(
        self,
        transitions: Mapping[State, Mapping[State, float]],
        laws: Mapping[State, WaitingLaw],
        *,
        truncation: Truncation | None = None,
        family: Family | None = None,
        name: str = "model",
    ):
        self.states: tuple = tuple(laws.keys())
        self.index: dict = {x: i for i, x in enumerate(self.states)}
        self.laws: tuple = tuple(laws[x] for x in self.states)
        self.truncation = truncation
        self.family = family
        self.name = name
        self.malformed: list[str] = []

        src, dst, prob = [], [], []
        self.escapes: dict[int, list[tuple[State, float]]] = {}
        for x, row in transitions.items():
            if x not in self.index:
                self.malformed.append(f"row for unknown state {x!r}")
                continue
            i = self.index[x]
            for y, p in row.items():
                p = float(p)
                if y in self.index:
                    src.append(i)
                    dst.append(self.index[y])
                    prob.append(p)
                elif truncation is not None:
                    self.escapes.setdefault(i, []).append((y, p))
                else:
                    self.malformed.append(f"edge {x!r} -> {y!r} targets an unknown state")
        order = np.lexsort((np.asarray(dst, dtype=int), np.asarray(src, dtype=int))) if src else np.array([], dtype=int)
        self.src = np.asarray(src, dtype=np.int64)[order]
        self.dst = np.asarray(dst, dtype=np.int64)[order]
        self.prob = np.asarray(prob, dtype=float)[order]
        self.edges: tuple = tuple((self.states[a], self.states[b]) for a, b in zip(self.src, self.dst))
        self.edge_index: dict = {e: k for k, e in enumerate(self.edges)}
        n = len(self.states)
        self.row_start = np.searchsorted(self.src, np.arange(n + 1))
        self._valid: bool | None = None
        self._sampler = None

    # ---- basic queries ------------------------------------------------------
    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def law(self, x: State) -> WaitingLaw:
        return self.laws[self.index[x]]

    def p(self, x: State, y: State) -> float:
        k = self.edge_index.get((x, y))
        if k is not None:
            return float(self.prob[k])
        for target, p in self.escapes.get(self.index[x], []):
            if target == y:
                return p
        return 0.0

    def neighbors_out(self, x: State) -> list[State]:
        i = self.index[x]
        a, b = self.row_start[i], self.row_start[i + 1]
        return [self.states[j] for j in self.dst[a:b]] + [y for y, _ in self.escapes.get(i, [])]

    def neighbors_in(self, x: State) -> list[State]:
        j = self.index[x]
        return [self.states[i] for i in self.src[self.dst == j]]

    def row_sums(self) -> np.ndarray:
        sums = np.bincount(self.src, weights=self.prob, minlength=self.n_states)
        for i, esc in self.escapes.items():
            sums[i] += sum(p for _, p in esc)
        return sums

    @property
    def is_closed(self) -> bool:
        """True when no retained state has an edge leaving the retained set."""
        return not any(p > 0 for esc in self.escapes.values() for _, p in esc)

    def matrix(self) -> np.ndarray:
        """Dense transition matrix on the retained states (escape mass dropped)."""
        P = np.zeros((self.n_states, self.n_states))
        np.add.at(P, (self.src, self.dst), self.prob)
        return P

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n_states))
        g.add_edges_from((int(a), int(b)) for a, b, p in zip(self.src, self.dst, self.prob) if p > 0)
        return g

    def apply(self, u: Callable[[State], float] | Mapping[State, float], x: State) -> float:
        """(Pu)(x) including escape edges; ``nan`` if an escape target is unevaluable."""
        i = self.index[x]
        a, b = self.row_start[i], self.row_start[i + 1]
        total = 0.0
        for j, p in zip(self.dst[a:b], self.prob[a:b]):
            total += p * _evaluate(u, self.states[j])
        for y, p in self.escapes.get(i, []):
            val = _evaluate(u, y)
            if val is None:
                return math.nan
            total += p * val
        return total

    def means(self) -> np.ndarray:
        return np.array([law.mean() for law in self.laws])

    def stationary_jump_distribution(self) -> np.ndarray:
        """Invariant law of the embedded chain on a closed irreducible truncation."""
        P = self.matrix()
        n = self.n_states
        A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        nu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        nu = np.clip(nu, 0.0, None)
        return nu / nu.sum()

    def stationary_occupation(self) -> np.ndarray:
        """Long-run fraction of time in each state."""
        nu = self.stationary_jump_distribution()
        w = nu * self.means()
        return w / w.sum()

    def stationary_flow(self) -> dict:
        """LLN limit of the empirical flow, ``nu_x p_xy / E_nu[tau]``."""
        nu = self.stationary_jump_distribution()
        scale = float(nu @ self.means())
        return {e: float(nu[self.src[k]] * self.prob[k] / scale) for k, e in enumerate(self.edges)}

    # ---- validity ---------------------------------------------------------
    def require_valid(self) -> None:
        if self._valid is None:
            report = validate_model(self)
            self._valid = report.ok
            self._failures = [c for c in report.checks if c.verdict == "fails"]
        if not self._valid:
            details = "; ".join(f"{c.name}: {c.detail}" for c in self._failures)
            raise ModelError(f"model {self.name!r} failed validation: {details}")

    def with_laws(self, laws: Mapping[State, WaitingLaw] | Iterable[WaitingLaw], name: str | None = None) -> "SemiMarkovModel":
        if not isinstance(laws, Mapping):
            laws = dict(zip(self.states, laws))
        return SemiMarkovModel(self.transition_dict(), {x: laws[x] for x in self.states},
                               truncation=self.truncation, family=None, name=name or self.name)

    def with_transitions(self, transitions: Mapping, laws: Mapping | None = None, name: str | None = None) -> "SemiMarkovModel":
        laws = laws if laws is not None else dict(zip(self.states, self.laws))
        return SemiMarkovModel(transitions, laws, truncation=self.truncation, family=None, name=name or self.name)

    def transition_dict(self) -> dict:
        out: dict = {x: {} for x in self.states}
        for (x, y), p in zip(self.edges, self.prob):
            out[x][y] = float(p)
        for i, esc in self.escapes.items():
            for y, p in esc:
                out[self.states[i]][y] = p
        return out

    def __repr__(self) -> str:
        return f"SemiMarkovModel(name={self.name!r}, states={self.n_states}, edges={self.n_edges})"


def _evaluate(u, x):
    if callable(u):
        return float(u(x))
    if x in u:
        return float(u[x])
    return None


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    verdict: str  # "holds" | "fails" | "not checked" | "recurrent (heuristic)" | ...
    detail: str = ""


@dataclass
class ValidationReport:
    model: str
    radius: float | None
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.verdict != "fails" for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_records(self) -> list[dict]:
        return [{"check": c.name, "verdict": c.verdict, "detail": c.detail, "radius": self.radius} for c in self.checks]


def validate_model(model: SemiMarkovModel) -> ValidationReport:
    """Check the standing structural assumptions on the retained states.

    Reported checks: well-formedness, nonnegative probabilities, row
    stochasticity (1e-12), irreducibility (strong connectivity of the
    retained graph), local finiteness, state-only waiting laws and, for the
    built-in birth-death family, a partial-sum recurrence heuristic.
    """
    checks: list[Check] = []
    radius = model.truncation.radius if model.truncation else None

    checks.append(Check("well-formed edges", "fails" if model.malformed else "holds", "; ".join(model.malformed)))

    negative = [(model.edges[k], float(p)) for k, p in enumerate(model.prob) if p < 0]
    negative += [((model.states[i], y), p) for i, esc in model.escapes.items() for y, p in esc if p < 0]
    checks.append(Check("nonnegative probabilities", "fails" if negative else "holds",
                        "; ".join(f"p{e}={p:g}" for e, p in negative)))

    sums = model.row_sums()
    bad = [(model.states[i], float(s)) for i, s in enumerate(sums) if abs(s - 1.0) > 1e-12]
    checks.append(Check("row stochasticity", "fails" if bad else "holds",
                        "; ".join(f"row {x!r} sums to {s:.15g}" for x, s in bad)))

    g = model.graph()
    if model.n_states == 0:
        checks.append(Check("irreducibility", "fails", "empty state space"))
    elif nx.is_strongly_connected(g):
        checks.append(Check("irreducibility", "holds", f"strongly connected on {model.n_states} retained states"))
    else:
        comps = list(nx.strongly_connected_components(g))
        first = sorted(comps, key=min)[0]
        checks.append(Check("irreducibility", "fails",
                            f"{len(comps)} strongly connected components; e.g. {[model.states[i] for i in sorted(first)][:5]}"))

    outdeg = np.diff(model.row_start)
    indeg = np.bincount(model.dst, minlength=model.n_states)
    checks.append(Check("local finiteness", "holds", f"max out-degree {int(outdeg.max(initial=0))}, max in-degree {int(indeg.max(initial=0))}"))
    checks.append(Check("state-only waiting laws", "holds", "one law per state by construction"))

    dead = [model.states[i] for i in range(model.n_states) if outdeg[i] == 0 and not model.escapes.get(i)]
    if dead:
        checks.append(Check("outgoing edges", "fails", f"states without outgoing edges: {dead[:5]}"))

    checks.append(_recurrence_check(model))
    return ValidationReport(model.name, radius, checks)


def _recurrence_check(model: SemiMarkovModel) -> Check:
    if model.family is not None and model.family.kind == "birth_death":
        up = model.family.params["up"]
        kmax = int(min(50, (model.truncation.radius or 50) - 1)) if model.truncation else 50
        terms, prod = [], 1.0
        for k in range(1, kmax + 1):
            p = float(up(k))
            prod *= (1.0 - p) / p if p > 0 else math.inf
            terms.append(prod)
        partial = np.cumsum(terms)
        tail = terms[-1]
        detail = f"partial sums of prod (1-p_k)/p_k up to k={kmax}: last term {tail:.6g}, partial sum {partial[-1]:.6g}"
        if tail >= 1.0:
            return Check("recurrence", "recurrent (heuristic)", detail)
        ratios = np.asarray(terms[kmax // 2 + 1:]) / np.asarray(terms[kmax // 2:-1])
        if ratios.size and float(ratios.max()) < 0.99:
            return Check("recurrence", "transient (heuristic)", detail)
        return Check("recurrence", "inconclusive", detail)
    if model.is_closed and nx.is_strongly_connected(model.graph()):
        return Check("recurrence", "holds", "finite irreducible chain")
    return Check("recurrence", "not checked", "assumed; no criterion for this model class")
