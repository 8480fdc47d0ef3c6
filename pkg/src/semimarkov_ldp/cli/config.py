"""Run configuration: YAML documents validated into typed blocks.

Numeric law parameters and family rules may be written as expressions in
the state (``x`` for birth-death chains, ``x1 .. xd`` for lattice walks);
they are parsed with sympy and compiled to plain callables.
"""

from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import sympy
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..kernel import families
from ..kernel.laws import Dirac, Exponential, Gamma, Rayleigh, WaitingLaw, mixture
from ..kernel.model import SemiMarkovModel

Number = Union[float, int, str]
Label = Union[int, str, list]


class ConfigError(ValueError):
    """Configuration could not be read or validated; ``diagnostics`` name each field."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or [message]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_SYMBOLS = {name: sympy.Symbol(name, real=True) for name in ("x", "x1", "x2", "x3")}


@lru_cache(maxsize=None)
def _compile(text: str, names: tuple):
    expr = sympy.sympify(text, locals=dict(_SYMBOLS), rational=False)
    free = {s.name for s in expr.free_symbols}
    if not free <= set(names):
        raise ValueError(f"expression {text!r} uses {sorted(free - set(names))}; allowed: {list(names)}")
    return sympy.lambdify([_SYMBOLS[n] for n in names], expr, modules="math"), expr


def expression(value: Number, names: tuple = ("x",)):
    """Compile a number or expression string to a function of the named state coordinates."""
    if isinstance(value, (int, float)):
        v = float(value)
        return lambda *args: v
    fn, _ = _compile(str(value), tuple(names))
    return lambda *args: float(fn(*args))


def _check_expression(value: Number, names: tuple) -> Number:
    if isinstance(value, str):
        try:
            _compile(value, names)
        except (sympy.SympifyError, ValueError, TypeError, SyntaxError) as exc:
            raise ValueError(f"cannot parse expression {value!r}: {exc}") from exc
    elif isinstance(value, float) and math.isnan(value):
        raise ValueError("NaN is not a valid parameter")
    return value


# ---------------------------------------------------------------------------
# law blocks
# ---------------------------------------------------------------------------

class ExponentialLaw(Strict):
    family: Literal["exponential"]
    rate: Number


class GammaLaw(Strict):
    family: Literal["gamma"]
    shape: Number
    rate: Number


class DiracLaw(Strict):
    family: Literal["dirac"]
    point: Number


class RayleighLaw(Strict):
    family: Literal["rayleigh"]
    scale: Number


class MixtureLaw(Strict):
    family: Literal["mixture"]
    components: list[Annotated[Union[ExponentialLaw, GammaLaw, DiracLaw, RayleighLaw, "MixtureLaw"],
                                Field(discriminator="family")]]
    weights: list[float]

    @model_validator(mode="after")
    def _weights(self):
        if len(self.components) != len(self.weights) or not self.components:
            raise ValueError("mixture needs one weight per component")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        return self


LawSpec = Annotated[Union[ExponentialLaw, GammaLaw, DiracLaw, RayleighLaw, MixtureLaw], Field(discriminator="family")]
MixtureLaw.model_rebuild()

_LAW_FIELDS = {"exponential": ("rate",), "gamma": ("shape", "rate"), "dirac": ("point",), "rayleigh": ("scale",)}


def _law_expressions_ok(spec, names: tuple) -> None:
    if isinstance(spec, MixtureLaw):
        for c in spec.components:
            _law_expressions_ok(c, names)
        return
    for f in _LAW_FIELDS[spec.family]:
        _check_expression(getattr(spec, f), names)


def build_law(spec, coords: tuple = (), names: tuple = ("x",)) -> WaitingLaw:
    """Instantiate a law block, evaluating expression parameters at ``coords``."""
    if isinstance(spec, MixtureLaw):
        return mixture([build_law(c, coords, names) for c in spec.components], spec.weights)
    vals = [expression(getattr(spec, f), names)(*coords) if coords or isinstance(getattr(spec, f), str)
            else float(getattr(spec, f)) for f in _LAW_FIELDS[spec.family]]
    if spec.family == "exponential":
        return Exponential(*vals)
    if spec.family == "gamma":
        return Gamma(*vals)
    if spec.family == "dirac":
        return Dirac(*vals)
    return Rayleigh(*vals)


# ---------------------------------------------------------------------------
# model blocks
# ---------------------------------------------------------------------------

def _label(v):
    return tuple(v) if isinstance(v, list) else v


class ExplicitModel(Strict):
    kind: Literal["explicit"]
    name: str = "explicit"
    states: list[Label] = Field(min_length=1)
    transitions: list[tuple[Label, Label, float]]
    laws: dict[str, LawSpec]

    @model_validator(mode="after")
    def _consistent(self):
        keys = {str(_label(s)) for s in self.states}
        extra = set(self.laws) - keys
        missing = keys - set(self.laws)
        if extra:
            raise ValueError(f"laws given for unknown states {sorted(extra)}")
        if missing:
            raise ValueError(f"no law for states {sorted(missing)}")
        for spec in self.laws.values():
            _law_expressions_ok(spec, ())
        return self

    def build(self) -> SemiMarkovModel:
        states = [_label(s) for s in self.states]
        rows: dict = {s: {} for s in states}
        for a, b, p in self.transitions:
            a, b = _label(a), _label(b)
            if a not in rows:
                rows[a] = {}
            rows[a][b] = rows[a].get(b, 0.0) + float(p)
        laws = {s: build_law(self.laws[str(s)]) for s in states}
        return SemiMarkovModel(rows, laws, name=self.name)


class BirthDeathModel(Strict):
    kind: Literal["birth_death"]
    up: Number
    law: LawSpec
    radius: int = Field(ge=1, le=100_000)
    policy: Literal["error", "renormalize"] = "error"

    @field_validator("up")
    @classmethod
    def _up(cls, v):
        return _check_expression(v, ("x",))

    @model_validator(mode="after")
    def _law(self):
        _law_expressions_ok(self.law, ("x",))
        return self

    def build(self) -> SemiMarkovModel:
        up = expression(self.up, ("x",))
        return families.birth_death(up, lambda x: build_law(self.law, (x,), ("x",)), self.radius, self.policy)


class LatticeModel(Strict):
    kind: Literal["lattice_rw"]
    dimension: int = Field(ge=1, le=3)
    potential: Number
    force: Union[float, list[float]] = 0.0
    law: LawSpec
    radius: int = Field(ge=1, le=1000)
    policy: Literal["error", "renormalize"] = "error"

    @model_validator(mode="after")
    def _exprs(self):
        names = tuple(f"x{i + 1}" for i in range(self.dimension))
        _check_expression(self.potential, names)
        _law_expressions_ok(self.law, names)
        if isinstance(self.force, list) and len(self.force) != self.dimension:
            raise ValueError("force needs one component per dimension")
        return self

    def names(self) -> tuple:
        return tuple(f"x{i + 1}" for i in range(self.dimension))

    def potential_fn(self):
        f = expression(self.potential, self.names())
        return lambda x: f(*x)

    def build(self) -> SemiMarkovModel:
        names = self.names()
        return families.lattice_random_walk(self.dimension, self.potential_fn(),
                                           lambda x: build_law(self.law, tuple(x), names), self.radius,
                                           self.force, self.policy)


ModelSpec = Union[ExplicitModel, BirthDeathModel, LatticeModel]


# ---------------------------------------------------------------------------
# run and task blocks
# ---------------------------------------------------------------------------

class RunBlock(Strict):
    horizon: float = Field(default=10.0, gt=0, le=1e9)
    replicas: int = Field(default=1000, ge=1, le=100_000_000)
    seed: int = Field(default=0, ge=0, lt=2**63)
    start: Label | None = None
    out: str | None = None
    format: Literal["csv", "records"] = "csv"


class PairBlock(Strict):
    stationary: bool = False
    flow: list[tuple[Label, Label, float]] = []
    laws: dict[str, LawSpec] = {}
    atoms: dict[str, float] = {}
    normalize: bool = True


class SimulateTask(Strict):
    mode: Literal["trajectory", "statistics"] = "statistics"


class RateTask(Strict):
    pair: PairBlock


class FlowRateTask(Strict):
    flow: list[tuple[Label, Label, float]] = []
    stationary: bool = False
    scale: float = Field(default=1.0, gt=0)


class GraphBlock(Strict):
    edges: list[tuple[Label, Label]]
    e_hat: list[tuple[Label, Label]]
    w: list[tuple[Label, Label]] = []
    lam: float = Field(gt=0, lt=1)
    root: Label


class CheckTask(Strict):
    condition: Literal["drift", "1", "2", "3", "4", "5", "birth-death", "random-walk"]
    u: Number | None = None
    K: list[Label] = []
    topology: Literal["bounded-weak*", "strong"] = "bounded-weak*"
    sigma: float | None = None
    eta: float | None = None
    force_bound: float = 0.0
    graph: GraphBlock | None = None

    @field_validator("condition", mode="before")
    @classmethod
    def _cond(cls, v):
        return str(v)


class EventBlock(Strict):
    kind: Literal["occupation_at_least", "flow_norm_at_least", "full_space"]
    state: Label | None = None
    level: float = 0.0


class TiltBlock(Strict):
    edge: list[tuple[Label, Label, float]] = []
    wait: dict[str, dict[str, Number]] = {}


class TiltSampleTask(Strict):
    event: EventBlock
    tilt: TiltBlock | None = None
    target_occupation: list[float] | None = None
    compare_naive: bool = True


class VerifyTask(Strict):
    suite: Literal["legendre", "pair-chain", "ctmc", "entropy", "decay"]
    a_values: list[float] = []
    flow: list[tuple[Label, Label, float]] = []
    pi_values: list[list[float]] = []
    pair_laws: list[list[list[float]]] = []
    event: EventBlock | None = None
    horizons: list[float] = []
    target_occupation: list[float] | None = None


class Config(Strict):
    model: ModelSpec = Field(discriminator="kind")
    run: RunBlock = RunBlock()
    task: dict[str, Any] = {}


TASKS = {"simulate": SimulateTask, "rate": RateTask, "flow-rate": FlowRateTask, "check": CheckTask,
         "tilt-sample": TiltSampleTask, "verify": VerifyTask}


# ---------------------------------------------------------------------------
# loading with line diagnostics
# ---------------------------------------------------------------------------

def _line_of(root, loc: tuple) -> int | None:
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _diagnostics(exc: ValidationError, root, prefix: tuple = ()) -> list[str]:
    out = []
    for err in exc.errors():
        loc = prefix + tuple(err["loc"])
        # drop union-member tags that pydantic inserts into locations
        path = [str(p) for p in loc if not (isinstance(p, str) and ("[" in p or p in _UNION_TAGS))]
        line = _line_of(root, tuple(p for p in loc if not (isinstance(p, str) and ("[" in p or p in _UNION_TAGS))))
        where = f"line {line}: " if line else ""
        out.append(f"{where}{'.'.join(path) or '<root>'}: {err['msg']}")
    return out


_UNION_TAGS = {"explicit", "birth_death", "lattice_rw", "exponential", "gamma", "dirac", "rayleigh", "mixture",
               "float", "int", "str", "list"}


def load_config(path: str | Path, command: str):
    """Read and validate ``path`` for ``command``; returns ``(config, task)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with model, run and task blocks")
    try:
        cfg = Config.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid config", _diagnostics(exc, root)) from exc
    try:
        task = TASKS[command].model_validate(cfg.task)
    except ValidationError as exc:
        raise ConfigError("invalid task block", _diagnostics(exc, root, ("task",))) from exc
    return cfg, task
