"""End-to-end experiment plumbing shared by the command line and the acceptance tests.

Every random stream is derived from ``(seed, placement, purpose)`` so that
collection, discovery and evaluation never share draws and reruns are exact.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .density import GridSpec, KernelConfig
from .discovery import CausalGraph, DiscoveryConfig, discover
from .errors import SchemaViolation
from .infotheory import SoftEventConfig
from .memory import MemoryUnit
from .planner import AugmentedStateIndex, PolicyTable, TabularModel, ValueTable, fit_model, value_iteration
from .sim import (
    GridTask,
    HistoryIndex,
    PaintingConfig,
    TireConfig,
    collect_random,
    evaluate_policy,
    history_stacking_model,
    painting_placement,
    reward_metrics,
    tire_placement,
)
from .trajectory import AttributeSchema, Dataset

log = logging.getLogger(__name__)

COLLECT, TEST, EVAL, DISCOVER = 0, 1, 2, 3

EVAL_COLUMNS = [
    "task", "seed", "placement", "episodes", "mean_reward", "success_rate",
    "recall0", "precision0", "recall1", "precision1", "method",
]
CURVE_COLUMNS = [
    "task", "method", "window", "train_episodes", "train_steps", "runs",
    "mean_reward", "std_reward", "success_rate", "recall1", "precision1",
]


def stream_seed(seed: int, placement: int, purpose: int) -> int:
    return int(np.random.SeedSequence([seed, placement, purpose]).generate_state(1, np.uint64)[0] >> 1)


def _cells(v) -> tuple:
    return tuple(tuple(int(x) for x in c) for c in v)


def task_config(cfg: RunConfig, placement: int | None = None):
    """Environment for the configured task and placement, with geometry overrides."""
    r, e = cfg.run, cfg.env
    placement = r.placement if placement is None else placement
    if r.task == "painting":
        dims = tuple(e.dims) if e.dims else PaintingConfig().dims
        base = painting_placement(placement, r.horizon, dims)
        upd = {}
        if e.bucket_cell:
            upd["bucket_cell"] = tuple(e.bucket_cell)
        if e.canvas_cell:
            upd["canvas_cell"] = tuple(e.canvas_cell)
        if e.canvas_region:
            upd["canvas_region"] = _cells(e.canvas_region)
        return replace(base, **upd) if upd else base
    if r.task == "tire":
        dims = tuple(e.dims) if e.dims else TireConfig().dims
        base = tire_placement(placement, r.horizon, dims)
        upd = {"terminal_on_success": e.terminal_on_success}
        if e.lug_cells:
            upd["lug_cells"] = _cells(e.lug_cells)
        if e.center_cell:
            upd["center_cell"] = tuple(e.center_cell)
        return replace(base, **upd)
    dims = tuple(int(x) for x in e.dims)
    if len(dims) != 3:
        raise SchemaViolation("env.dims must have three entries")
    return GridTask(dims, _cells(e.triggers), _cells(e.goals), e.terminal_on_success, r.horizon)


def ground_truth_units(task) -> list:
    task = task if isinstance(task, GridTask) else task.task
    return task.trigger_units()


def discovery_config(cfg: RunConfig, schema: AttributeSchema | None = None, seed: int | None = None) -> DiscoveryConfig:
    s = cfg.discovery
    grid = None
    if schema is not None and s.bins != 16:
        grid = GridSpec.default(schema, s.bins)
    return DiscoveryConfig(
        epsilon=s.epsilon,
        max_var=s.max_var or None,
        restarts=s.restarts,
        eps_grad_center=s.eps_grad_center,
        eps_grad_radius=s.eps_grad_radius,
        step_center=s.step_center,
        step_radius=s.step_radius,
        max_grad_iters=s.max_grad_iters,
        kernel=KernelConfig(s.kernel_w, s.kernel_alpha),
        soft=SoftEventConfig(s.soft_w_e, s.soft_form),
        grid=grid,
        seed=cfg.run.seed if seed is None else seed,
        min_gain=s.min_gain,
        min_gain_frac=s.min_gain_frac,
        r_min=s.r_min,
        polish_rounds=s.polish_rounds,
        polish_slack=s.polish_slack,
        polish_centers=s.polish_centers,
        polish_points=s.polish_points,
        event_on_reward=s.event_on_reward,
    )


def collect(cfg: RunConfig, episodes: int | None = None, placement: int | None = None) -> Dataset:
    placement = cfg.run.placement if placement is None else placement
    env = task_config(cfg, placement)
    d = collect_random(env, episodes or cfg.run.episodes, stream_seed(cfg.run.seed, placement, COLLECT))
    meta = {"task": cfg.run.task, "seed": cfg.run.seed, "placement": placement, "config": cfg.echo()}
    return Dataset(d.schema, d.obs, d.actions, meta)


def heldout_dataset(cfg: RunConfig, placement: int | None = None) -> Dataset:
    placement = cfg.run.placement if placement is None else placement
    env = task_config(cfg, placement)
    return collect_random(env, cfg.eval.test_episodes, stream_seed(cfg.run.seed, placement, TEST))


def run_discovery(cfg: RunConfig, d: Dataset, placement: int | None = None):
    placement = cfg.run.placement if placement is None else placement
    seed = stream_seed(cfg.run.seed, placement, DISCOVER)
    return discover(d, discovery_config(cfg, d.schema, seed))


@dataclass
class Trained:
    method: str
    window: int
    model: TabularModel
    values: ValueTable
    policy: PolicyTable
    units: list


def train(cfg: RunConfig, d: Dataset, method: str, graph: CausalGraph | None = None, window: int | None = None,
          placement: int | None = None) -> Trained:
    """Fit the model for ``method`` and plan on it.

    ``full`` runs discovery unless a graph is given; ``markov`` has no memory;
    ``stacking`` conditions on the last ``window`` cells and actions.
    """
    p = cfg.planner
    window = p.window if window is None else window
    units: list = []
    if method == "full":
        if graph is None:
            graph, _ = run_discovery(cfg, d, placement)
        units = list(graph.units)
        mdl = fit_model(d, AugmentedStateIndex(d.schema, units), graph)
    elif method == "markov":
        mdl = fit_model(d, AugmentedStateIndex(d.schema))
        window = 0
    elif method == "stacking":
        mdl = history_stacking_model(d, window)
    else:
        raise ValueError(f"unknown method {method!r}")
    vt, pt = value_iteration(mdl, p.gamma, p.tol, p.max_sweeps)
    return Trained(method, window if method == "stacking" else 0, mdl, vt, pt, units)


def evaluate(cfg: RunConfig, trained: Trained, placement: int | None = None, test: Dataset | None = None) -> dict:
    """One metrics row: policy performance plus next-reward recall/precision."""
    placement = cfg.run.placement if placement is None else placement
    env = task_config(cfg, placement)
    if test is None:
        test = heldout_dataset(cfg, placement)
    res = evaluate_policy(env, trained.policy, None, cfg.eval.episodes, stream_seed(cfg.run.seed, placement, EVAL),
                          idx=trained.model.index)
    pr = reward_metrics(trained.model, None, test, idx=trained.model.index)
    return {
        "task": cfg.run.task,
        "seed": cfg.run.seed,
        "placement": placement,
        "episodes": cfg.eval.episodes,
        "mean_reward": res.total_reward,
        "success_rate": res.success,
        "recall0": pr[0][0],
        "precision0": pr[0][1],
        "recall1": pr[1][0],
        "precision1": pr[1][1],
        "method": trained.method,
    }


# --- serialization ---------------------------------------------------------------


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def index_from_json(obj: dict, schema: AttributeSchema):
    base_schema = AttributeSchema(
        tuple(a for a in schema.attributes if not a.name.startswith("mem_")), schema.action_count, schema.reward_attr
    )
    if obj["kind"] == "augmented":
        return AugmentedStateIndex(base_schema, [MemoryUnit.from_json(u) for u in obj["units"]])
    if obj["kind"] == "history":
        return HistoryIndex(AugmentedStateIndex(base_schema), int(obj["window"]), [tuple(h) for h in obj["histories"]])
    raise SchemaViolation(f"unknown state index kind {obj['kind']!r}")


def model_document(trained: Trained, schema: AttributeSchema, cfg: RunConfig) -> dict:
    return {
        "kind": "model",
        "method": trained.method,
        "window": trained.window,
        "schema": schema.to_json(),
        "index": trained.model.index.to_json(),
        "model": trained.model.to_json(),
        "config": cfg.echo(),
    }


def policy_document(trained: Trained, schema: AttributeSchema, cfg: RunConfig) -> dict:
    doc = trained.policy.to_json(trained.values)
    doc.update(kind="policy", method=trained.method, window=trained.window, schema=schema.to_json(),
               config=cfg.echo())
    return doc


def load_trained(model_doc: dict, policy_doc: dict) -> Trained:
    schema = AttributeSchema.from_json(model_doc["schema"])
    idx = index_from_json(model_doc["index"], schema)
    mdl = TabularModel.from_json(model_doc["model"], idx)
    pi = np.asarray(policy_doc["pi"], dtype=np.int64)
    if len(pi) != mdl.n_states:
        raise SchemaViolation(f"policy has {len(pi)} states, model has {mdl.n_states}")
    pt = PolicyTable(pi, None, idx)
    vt = ValueTable(np.asarray(policy_doc.get("V", [])), policy_doc.get("gamma", 0.0), policy_doc.get("residual", 0.0))
    units = list(idx.units) if isinstance(idx, AugmentedStateIndex) else []
    return Trained(model_doc["method"], int(model_doc.get("window", 0)), mdl, vt, pt, units)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(round(v, 10))
    return str(v)


def write_csv(rows, columns, cfg: RunConfig | None = None) -> str:
    """CSV text; the producing config is echoed on ``#`` comment lines first."""
    buf = io.StringIO()
    if cfg is not None:
        buf.write("# config " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> list:
    """Rows of a CSV written by :func:`write_csv`, comment lines skipped."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- learning curves -------------------------------------------------------------


def _variants(cfg: RunConfig) -> list:
    out = []
    for m in cfg.report.methods:
        if m == "stacking":
            out.extend(("stacking", int(w)) for w in cfg.report.windows)
        else:
            out.append((m, 0))
    return out


def learning_curve(cfg: RunConfig, progress=None) -> list:
    """Average test reward against training size, over placements and seeds.

    Training sets are nested prefixes of one collection per (placement, seed),
    so larger sizes extend the smaller ones.
    """
    sizes = sorted(int(s) for s in cfg.report.sizes)
    variants = _variants(cfg)
    per = {(m, w, L): [] for m, w in variants for L in sizes}
    for placement in cfg.report.placements:
        for seed in cfg.report.seeds:
            run_cfg = replace(cfg, run=replace(cfg.run, seed=int(seed), placement=int(placement)))
            full = collect(run_cfg, sizes[-1], int(placement))
            test = heldout_dataset(run_cfg, int(placement))
            for L in sizes:
                d = full.subset(np.arange(L))
                for m, w in variants:
                    tr = train(run_cfg, d, m, window=w or None, placement=int(placement))
                    row = evaluate(run_cfg, tr, int(placement), test)
                    per[(m, w, L)].append(row)
                    if progress is not None:
                        progress(placement, seed, L, m, w, row)
    rows = []
    h = cfg.run.horizon
    for m, w in variants:
        for L in sizes:
            rs = per[(m, w, L)]
            rew = np.array([r["mean_reward"] for r in rs])
            rows.append({
                "task": cfg.run.task,
                "method": m,
                "window": w,
                "train_episodes": L,
                "train_steps": L * h,
                "runs": len(rs),
                "mean_reward": float(rew.mean()),
                "std_reward": float(rew.std()),
                "success_rate": float(np.mean([r["success_rate"] for r in rs])),
                "recall1": float(np.nanmean([r["recall1"] for r in rs])) if any(
                    not np.isnan(r["recall1"]) for r in rs) else float("nan"),
                "precision1": float(np.nanmean([r["precision1"] for r in rs])) if any(
                    not np.isnan(r["precision1"]) for r in rs) else float("nan"),
            })
    return rows
