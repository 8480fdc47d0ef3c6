"""Subcommand implementations; each returns a list of output rows."""

from __future__ import annotations

import math

import networkx as nx
import numpy as np

from .. import conditions as cond
from ..kernel.model import ModelError, SemiMarkovModel
from ..rate import MeasureFlowPair, flow_marginal_rate, joint_rate, legendre_point, measure_marginal_rate
from ..simulate import Flow, FlowNormAtLeast, FullSpace, OccupationAtLeast, sample_trajectory, simulate_batch
from ..tilt import TiltSpec, WaitTilt, importance_estimate, occupation_tilt
from .. import verify as vf
from .config import (BirthDeathModel, CheckTask, Config, EventBlock, LatticeModel, TiltBlock, _label, build_law,
                     expression)


def state_of(model: SemiMarkovModel, value):
    x = _label(value)
    if x not in model.index:
        raise ModelError(f"{value!r} is not a state of model {model.name!r}")
    return x


def _by_name(model: SemiMarkovModel, key: str):
    for x in model.states:
        if str(x) == key or str(list(x) if isinstance(x, tuple) else x) == key:
            return x
    raise ModelError(f"{key!r} is not a state of model {model.name!r}")


def flow_from(model: SemiMarkovModel, entries) -> Flow:
    out: dict = {}
    for a, b, q in entries:
        e = (state_of(model, a), state_of(model, b))
        out[e] = out.get(e, 0.0) + float(q)
    return Flow(out)


def _start(cfg: Config, model: SemiMarkovModel):
    return model.states[0] if cfg.run.start is None else state_of(model, cfg.run.start)


def _edge_name(e) -> str:
    from .output import format_label
    return f"{format_label(e[0])}->{format_label(e[1])}"


# ---------------------------------------------------------------------------

def cmd_simulate(cfg: Config, task, model: SemiMarkovModel, seed: int, workers: int) -> list[dict]:
    run = cfg.run
    start = _start(cfg, model)
    if task.mode == "trajectory":
        rows = []
        for r in range(run.replicas):
            traj = sample_trajectory(model, start, run.horizon, seed, index=r)
            rows += [{"replica": r, "k": k, "from": a, "to": b, "wait": w, "jump_time": s}
                     for k, a, b, w, s in traj.dump_rows()]
        return rows
    stats = simulate_batch(model, start, run.horizon, run.replicas, seed, workers=workers)
    target_occ, target_flow = {}, {}
    if model.is_closed:
        try:
            target_occ = dict(zip(model.states, model.stationary_occupation()))
            target_flow = model.stationary_flow()
        except (ModelError, np.linalg.LinAlgError, ValueError):
            pass
    n = stats.n

    def row(quantity, key, vals, target):
        sd = float(np.std(vals, ddof=1)) / math.sqrt(n) if n > 1 else math.inf
        return {"quantity": quantity, "key": key, "mean": float(math.fsum(vals) / n), "stderr": sd,
                "target": target, "estimator": "monte-carlo", "n": n}

    occ, fl = stats.occupation(), stats.flow()
    rows = [row("occupation", x, occ[:, i], target_occ.get(x, math.nan)) for i, x in enumerate(model.states)]
    rows += [row("flow", _edge_name(e), fl[:, k], target_flow.get(e, math.nan)) for k, e in enumerate(model.edges)]
    rows.append(row("flow_norm", "", stats.flow_norm(), sum(target_flow.values()) if target_flow else math.nan))
    return rows


def cmd_rate(cfg: Config, task, model: SemiMarkovModel, seed: int, workers: int) -> list[dict]:
    spec = task.pair
    if spec.stationary:
        pair = MeasureFlowPair.stationary(model)
    else:
        laws = {_by_name(model, k): build_law(v) for k, v in spec.laws.items()}
        atoms = {_by_name(model, k): v for k, v in spec.atoms.items()}
        pair = MeasureFlowPair.build(model, flow_from(model, spec.flow), laws, atoms, normalize=spec.normalize)
    res = joint_rate(pair)
    rows = []
    for r in res.as_records():
        r = dict(r)
        r["total"] = r["jump_entropy"] + r["waiting_entropy"] + r["atom_term"]
        rows.append(r)
    rows.append({"state": "total", "jump_entropy": sum(res.jump.values()), "waiting_entropy": sum(res.waiting.values()),
                 "atom_term": sum(res.atom.values()), "total": res.total, "note": "; ".join(res.violations)})
    cols = ["state", "jump_entropy", "waiting_entropy", "atom_term", "total", "note"]
    return [{c: r.get(c, "") for c in cols} for r in rows]


def cmd_flow_rate(cfg: Config, task, model: SemiMarkovModel, seed: int, workers: int) -> list[dict]:
    if task.stationary or not task.flow:
        flow = Flow(model.stationary_flow())
    else:
        flow = flow_from(model, task.flow)
    flow = flow.scaled(task.scale) if task.scale != 1.0 else flow
    res = flow_marginal_rate(flow, model, detail=True)
    return [{"value": res.value, "jump_entropy": res.jump_entropy, "waiting_part": res.waiting_part,
             "case": res.case, "lam": res.lam, "zeta_outside": res.zeta_outside, "flow_norm": flow.norm,
             "estimator": "closed-form"}]


def _u_function(cfg: Config, task: CheckTask):
    if task.u is None:
        raise ModelError(f"condition {task.condition} needs a witness u")
    if isinstance(cfg.model, LatticeModel):
        f = expression(task.u, cfg.model.names())
        return lambda x: f(*x)
    f = expression(task.u, ("x",))
    return lambda x: f(x)


def _report_rows(rep) -> list[dict]:
    rows = [{"field": "condition", "value": rep.condition}, {"field": "verdict", "value": rep.verdict}]
    if rep.radius is not None:
        rows.append({"field": "radius", "value": rep.radius})
    if rep.detail:
        rows.append({"field": "detail", "value": rep.detail})
    rows += [{"field": f"witness.{k}", "value": v} for k, v in rep.witnesses.items()]
    rows += [{"field": "checked", "value": ineq} for ineq in rep.inequalities]
    rows += [{"field": f"route.{k}", "value": f"{sub.verdict} ({sub.detail})"} for k, sub in rep.routes.items()]
    return rows


def cmd_check(cfg: Config, task: CheckTask, model: SemiMarkovModel | None, seed: int, workers: int) -> list[dict]:
    c = task.condition
    if c == "5":
        g = task.graph
        if g is None:
            raise ModelError("condition 5 needs a graph block")
        graph = nx.DiGraph()
        graph.add_edges_from((_label(a), _label(b)) for a, b in g.edges)
        e_hat = [(_label(a), _label(b)) for a, b in g.e_hat]
        w = [(_label(a), _label(b)) for a, b in g.w]
        return _report_rows(cond.check_condition5(graph, e_hat, w, g.lam, _label(g.root)))
    if c == "random-walk":
        spec = cfg.model
        if not isinstance(spec, LatticeModel):
            raise ModelError("the random-walk check needs a lattice_rw model block")
        return _report_rows(cond.check_random_walk(spec.dimension, spec.potential_fn(), task.force_bound, spec.radius,
                                                   task.topology))
    if c == "birth-death":
        if not isinstance(cfg.model, BirthDeathModel):
            raise ModelError("the birth-death check needs a birth_death model block")
        return _report_rows(cond.check_birth_death(model, task.topology, sigma=task.sigma, eta=task.eta))
    if c == "4":
        return _report_rows(cond.check_condition4(model))
    u = _u_function(cfg, task)
    if c == "drift":
        K = [state_of(model, k) for k in task.K]
        return _report_rows(cond.check_drift(model, u, K))
    fn = {"1": cond.check_condition1, "2": cond.check_condition2, "3": cond.check_condition3}[c]
    return _report_rows(fn(model, u))


def event_from(model: SemiMarkovModel, block: EventBlock):
    if block.kind == "full_space":
        return FullSpace()
    if block.kind == "flow_norm_at_least":
        return FlowNormAtLeast(block.level)
    if block.state is None:
        raise ModelError("occupation_at_least needs a state")
    return OccupationAtLeast(state_of(model, block.state), block.level)


def tilt_from(model: SemiMarkovModel, block: TiltBlock) -> TiltSpec:
    edge = {}
    for a, b, v in block.edge:
        e = (state_of(model, a), state_of(model, b))
        if model.p(*e) <= 0:
            raise ModelError(f"tilt names {e!r}, which is not an edge")
        edge[e] = float(v)
    wait = {_by_name(model, k): WaitTilt.from_dict(v) for k, v in block.wait.items()}
    return TiltSpec(edge, wait)


def _estimate_row(name, est, horizon) -> dict:
    return {"estimator": name, "horizon": horizon, "n": est.replicas, "hits": est.hits, "estimate": est.estimate,
            "stderr": est.stderr, "relative_stderr": est.relative_stderr, "decay": est.decay_rate(horizon)}


def cmd_tilt_sample(cfg: Config, task, model: SemiMarkovModel, seed: int, workers: int) -> list[dict]:
    run = cfg.run
    event = event_from(model, task.event)
    start = _start(cfg, model)
    if task.target_occupation is not None:
        spec = occupation_tilt(model, task.target_occupation)[0]
    elif task.tilt is not None:
        spec = tilt_from(model, task.tilt)
    else:
        spec = TiltSpec()
    est = importance_estimate(model, event, spec, run.horizon, run.replicas, seed, start=start, workers=workers)
    rows = [_estimate_row("naive" if spec.is_identity else "importance", est, run.horizon)]
    if task.compare_naive and not spec.is_identity:
        naive = importance_estimate(model, event, TiltSpec(), run.horizon, run.replicas, seed + 1, start=start,
                                    workers=workers)
        rows.append(_estimate_row("naive", naive, run.horizon))
    return rows


def _weights(model: SemiMarkovModel, entries):
    flow = Flow(model.stationary_flow()) if not entries else flow_from(model, entries)
    return flow.exit_current()


def cmd_verify(cfg: Config, task, model: SemiMarkovModel, seed: int, workers: int) -> list[dict]:
    s = task.suite
    rows = []
    if s in ("legendre", "entropy"):
        w = _weights(model, task.flow)
        for a in task.a_values:
            pt = legendre_point(w, a, model)
            if s == "legendre":
                ref, name = vf.grid_legendre_oracle(w, a, model=model), "grid"
            else:
                ref, name = vf.entropy_min_oracle(w, a, model=model), "entropy-minimization"
            rows.append({"a": a, "value": pt.value, "branch": pt.branch, "lam_star": pt.lam_star, "oracle": ref,
                         "abs_diff": _diff(pt.value, ref), "estimator": "closed-form", "oracle_kind": name})
    elif s == "ctmc":
        for pi in task.pi_values:
            val = measure_marginal_rate(pi, model).value
            ref = vf.ctmc_dv_oracle(model, pi)
            rows.append({"pi": ";".join(f"{p:.12g}" for p in pi), "value": val, "oracle": ref,
                         "abs_diff": _diff(val, ref), "estimator": "variational", "oracle_kind": "conic"})
    elif s == "pair-chain":
        for k, rho in enumerate(task.pair_laws):
            rho = np.asarray(rho, dtype=float)
            entries = {(x, y): float(rho[i, j]) for i, x in enumerate(model.states)
                       for j, y in enumerate(model.states) if rho[i, j] > 0}
            val = joint_rate(MeasureFlowPair(model, Flow(entries))).total
            ref = vf.pair_chain_oracle(model, rho)
            rows.append({"instance": k, "value": val, "oracle": ref, "abs_diff": _diff(val, ref),
                         "estimator": "joint-rate", "oracle_kind": "pair-chain"})
    else:
        if task.event is None or not task.horizons:
            raise ModelError("the decay suite needs an event and horizons")
        event = event_from(model, task.event)
        if isinstance(event, OccupationAtLeast):
            bound = vf.occupation_bound(model, event.state, event.level)
        elif isinstance(event, FlowNormAtLeast):
            bound = vf.flow_norm_bound(model, event.level)
        else:
            bound = 0.0
        start = _start(cfg, model)
        tables = [vf.ldp_decay_estimate(model, event, task.horizons, cfg.run.replicas, seed, bound=bound,
                                        start=start, workers=workers)]
        if task.target_occupation is not None:
            spec = occupation_tilt(model, task.target_occupation)[0]
            tables.append(vf.ldp_decay_estimate(model, event, task.horizons, cfg.run.replicas, seed, tilt=spec,
                                                bound=bound, start=start, workers=workers))
        for tab in tables:
            for r in tab.records():
                r.update({"fit_intercept": tab.intercept, "fit_slope": tab.slope})
                rows.append(r)
    return rows


def _diff(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b)


COMMANDS = {"simulate": cmd_simulate, "rate": cmd_rate, "flow-rate": cmd_flow_rate, "check": cmd_check,
            "tilt-sample": cmd_tilt_sample, "verify": cmd_verify}
