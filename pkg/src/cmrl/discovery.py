"""Greedy construction of the causal graph with latch memory units.

Every attribute starts with the parents ``{O^1_t, ..., O^n_t, A_t}``. Targets
whose conditional entropy stays above ``epsilon`` are explained, one memory
unit at a time, by the ball event over some attribute's history that brings
the largest information gain. Ball centers and radii are found by gradient
descent on the relaxed conditional entropy and scored with the exact event.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .density import GridSpec, KernelConfig, Var, action, attr, sample_center
from .errors import NoFiniteGain
from .infotheory import (
    BallEvent,
    EntropyObjective,
    RelaxedEntropy,
    SoftEventConfig,
    information_gain,
)
from .memory import MemoryUnit, augment_dataset
from .trajectory import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscoveryConfig:
    epsilon: float = 1e-4
    max_var: int | None = None
    restarts: int = 8
    eps_grad_center: float = 1e-5
    eps_grad_radius: float = 1e-5
    step_center: float = 0.1
    step_radius: float = 0.1
    max_grad_iters: int = 500
    kernel: KernelConfig = KernelConfig()
    soft: SoftEventConfig = SoftEventConfig()
    grid: GridSpec | None = None
    seed: int = 0
    min_gain: float = 1e-5
    min_gain_frac: float = 0.05
    r_min: float = 0.25
    polish_rounds: int = 8
    polish_slack: float = 0.05
    polish_centers: int = 8
    event_on_reward: bool = False
    polish_points: int = 64

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.restarts < 1 or self.max_grad_iters < 1:
            raise ValueError("restarts and max_grad_iters must be at least 1")
        if not (self.step_center > 0 and self.step_radius > 0):
            raise ValueError("step sizes must be positive")

    def max_parents(self, n: int) -> int:
        mv = n + 1 + 8 if self.max_var is None else self.max_var
        if mv < n + 1:
            raise ValueError(f"max_var={mv} is below the initial parent count {n + 1}")
        return mv

    def echo(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("kernel", "soft", "grid")}
        out["kernel"] = asdict(self.kernel)
        out["soft"] = asdict(self.soft)
        out["grid"] = "default" if self.grid is None else "custom"
        return out


@dataclass
class CausalGraph:
    """Parent lists keyed by variable name, plus the memory units they use.

    Parent entries are ``"<attribute>@t"``, ``"action@t"`` or ``"mem_<k>"``.
    """

    parents: dict
    units: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def memory_mask(self, attrs: Sequence[int]) -> int:
        """Bitmask of the unit ids among the parents of the given attributes."""
        mask = 0
        for i in attrs:
            for p in self.parents.get(self.names[i], []):
                if p.startswith("mem_"):
                    mask |= 1 << int(p[4:])
        return mask

    def to_json(self) -> dict:
        return {"parents": self.parents, "units": [u.to_json() for u in self.units], "names": self.names}

    @classmethod
    def from_json(cls, obj) -> "CausalGraph":
        return cls(dict(obj["parents"]), [MemoryUnit.from_json(u) for u in obj["units"]], list(obj["names"]))


@dataclass
class UnitRecord:
    id: int
    target: str
    attr: int
    center: list
    radius: float
    gain: float
    iterations: int


@dataclass
class DiscoveryReport:
    entropies: dict
    units: list
    wall_clock: float
    config: dict

    def to_json(self, include_timing: bool = False) -> dict:
        out = {"entropies": self.entropies, "units": [asdict(u) for u in self.units], "config": self.config}
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


def graph_document(graph: CausalGraph, report: DiscoveryReport, include_timing: bool = False) -> dict:
    """JSON document combining the graph and report (units carry their gain)."""
    gains = {u.id: u for u in report.units}
    units = []
    for u in graph.units:
        rec = u.to_json()
        rec["gain"] = gains[u.id].gain if u.id in gains else None
        rec["target"] = gains[u.id].target if u.id in gains else None
        rec["iterations"] = gains[u.id].iterations if u.id in gains else None
        units.append(rec)
    doc = {"units": units, "parents": graph.parents, "names": graph.names}
    doc.update(report.to_json(include_timing))
    doc["units"] = units
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def base_parents(d: Dataset) -> list:
    return [attr(j) for j in range(d.schema.n)] + [action()]


def _label(d: Dataset, v: Var) -> str:
    if v.source == "action":
        return "action@t"
    name = d.schema[v.index].name
    return name if name.startswith("mem_") else f"{name}@t"


def transition_entropy(d: Dataset, i: int, pa: Sequence[Var], g: GridSpec | None = None) -> float:
    """``H(O^i_{t+1} | pa_t)`` from empirical frequency counts."""
    return EntropyObjective(d, attr(i, 1), pa, g).value_without_event()


def identify_stochastic(d: Dataset, cfg: DiscoveryConfig = DiscoveryConfig()) -> list:
    """Attributes whose next value is uncertain given the full current slice.

    Returns ``(attribute index, entropy)`` pairs above ``epsilon``, highest
    entropy first (ties by index).
    """
    pa = base_parents(d)
    scored = [(i, transition_entropy(d, i, pa, cfg.grid)) for i in range(d.schema.n)]
    keep = [(i, h) for i, h in scored if h > cfg.epsilon]
    return sorted(keep, key=lambda ih: (-ih[1], ih[0]))


def _descend(rel: RelaxedEntropy, c, r, spec, cfg: DiscoveryConfig, h_ref: float):
    """Gradient descent on the relaxed entropy, scaled by ``1 / h_ref``.

    Returns the visited point with the lowest exact-event entropy.
    """
    lo, hi = spec.lower_array, spec.upper_array
    r_max = spec.radius
    best = (rel.hard_value(c, r), c.copy(), r, 0)
    it = 0
    for it in range(1, cfg.max_grad_iters + 1):
        _, gc, gr = rel.value_and_grad(c, r)
        gc = gc / h_ref
        gr = gr / h_ref
        if np.linalg.norm(gc) < cfg.eps_grad_center and abs(gr) < cfg.eps_grad_radius:
            break
        c = np.clip(c - cfg.step_center * gc, lo, hi)
        r = float(np.clip(r - cfg.step_radius * gr, cfg.r_min, r_max))
        h_hard = rel.hard_value(c, r)
        if h_hard < best[0]:
            best = (h_hard, c.copy(), r, it)
    return best[0], best[1], best[2], it


def _polish(rel: RelaxedEntropy, c, r, h, h_without, spec, cfg: DiscoveryConfig):
    """Snap a descended ball onto the data.

    The exact entropy only changes when the ball boundary crosses a data point,
    so try the current center and its nearest data points with radii halfway
    between consecutive distinct point distances. Among candidates whose
    entropy is within ``polish_slack`` of the best gain, the smallest ball wins.
    """
    pts = np.unique(rel.points.reshape(-1, rel.points.shape[-1]), axis=0)
    if len(pts) == 0:
        return h, c, r
    order = np.argsort(np.linalg.norm(pts - c, axis=1), kind="stable")[: cfg.polish_centers]
    cands = [(h, r, len(order), np.asarray(c, dtype=np.float64))]
    for k, center in enumerate([*pts[order], c]):
        dist = np.unique(np.round(np.linalg.norm(pts - center, axis=1), 12))[: cfg.polish_points + 1]
        radii = (dist[:-1] + dist[1:]) / 2 if len(dist) > 1 else dist + 0.5
        for rad in radii:
            rad = float(max(rad, cfg.r_min))
            if rad > spec.radius:
                break
            cands.append((rel.hard_value(center, rad), rad, k, np.array(center, dtype=np.float64)))
    h_best = min(x[0] for x in cands)
    slack = cfg.polish_slack * max(h_without - h_best, 0.0) + 1e-12
    hv, rad, _, center = min((x for x in cands if x[0] <= h_best + slack), key=lambda x: (x[1], x[2], x[0]))
    return hv, center, rad


def optimize_ball(d: Dataset, X: Var, pa: Sequence[Var], i: int, cfg: DiscoveryConfig,
                  rng: np.random.Generator, h_without: float | None = None):
    """Best ball event over attribute ``i``'s history for explaining ``X``.

    Returns ``(BallEvent, gain, iterations)`` with the gain measured using the
    exact (hard) event.
    """
    spec = d.schema[i]
    rel = RelaxedEntropy(d, X, pa, i, cfg.soft, cfg.grid)
    if h_without is None:
        h_without = rel.objective.value_without_event()
    h_ref = max(h_without, 1e-12)
    r_hi = spec.radius
    best = None
    total_iters = 0
    for _ in range(cfg.restarts):
        c = sample_center(d, i, cfg.kernel, rng)
        r = float(rng.uniform(0.0, r_hi))
        r = min(max(r, cfg.r_min), r_hi)
        h_hard, c, r, iters = _descend(rel, c, r, spec, cfg, h_ref)
        for _ in range(cfg.polish_rounds):
            h_new, c_new, r_new = _polish(rel, c, r, h_hard, h_without, spec, cfg)
            moved = r_new != r or not np.array_equal(c_new, c)
            h_hard, c, r = h_new, c_new, r_new
            if not moved:
                break
        total_iters += iters
        gain = information_gain(h_without, h_hard)
        if not np.isfinite(gain):
            continue
        if best is None or gain > best[1]:
            best = (BallEvent(i, c, r), gain)
    if best is None:
        raise NoFiniteGain(f"no restart on attribute {i} produced a finite entropy")
    return best[0], best[1], total_iters


def discover(d: Dataset, cfg: DiscoveryConfig = DiscoveryConfig()):
    """Run the greedy search; returns ``(CausalGraph, DiscoveryReport)``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = d.schema.n
    names = [a.name for a in d.schema.attributes]
    max_var = cfg.max_parents(n)
    pa_vars = {i: base_parents(d) for i in range(n)}
    open_list = identify_stochastic(d, cfg)
    entropies = {
        names[i]: {"initial": transition_entropy(d, i, pa_vars[i], cfg.grid)} for i in range(n)
    }
    units: list = []
    records: list = []
    aug = d
    for i_x, h_init in open_list:
        X = attr(i_x, 1)
        h_cur = h_init
        floor = max(cfg.min_gain, cfg.min_gain_frac * h_init)
        log.info("explaining %s: H = %.6g bits", names[i_x], h_cur)
        while h_cur >= cfg.epsilon and len(pa_vars[i_x]) < max_var:
            best = None
            for i in range(n):
                if i == d.schema.reward_attr and not cfg.event_on_reward:
                    continue
                ball, gain, iters = optimize_ball(aug, X, pa_vars[i_x], i, cfg, rng, h_cur)
                log.debug("  attribute %s: gain %.6g bits at %s r=%.3f", names[i], gain, ball.center, ball.radius)
                if best is None or gain > best[1]:
                    best = (ball, gain, iters)
            ball, gain, iters = best
            if gain <= floor:
                log.info("  best gain %.3g bits is below the floor %.3g; stopping", gain, floor)
                break
            unit = MemoryUnit(len(units), ball)
            units.append(unit)
            aug = augment_dataset(aug, [unit])
            mem_var = attr(aug.schema.n - 1)
            pa_vars[i_x] = pa_vars[i_x] + [mem_var]
            h_new = EntropyObjective(aug, X, pa_vars[i_x], cfg.grid).value_without_event()
            records.append(
                UnitRecord(unit.id, names[i_x], ball.attr, list(ball.center), ball.radius, h_cur - h_new, iters)
            )
            log.info("  unit mem_%d on %s: center %s r=%.3f, H %.6g -> %.6g", unit.id, names[ball.attr],
                     np.round(ball.center, 3).tolist(), ball.radius, h_cur, h_new)
            h_cur = h_new
    for i in range(n):
        entropies[names[i]]["final"] = EntropyObjective(aug, attr(i, 1), pa_vars[i], cfg.grid).value_without_event()
    parents = {names[i]: [_label(aug, v) for v in pa_vars[i]] for i in range(n)}
    for u in units:
        parents[f"mem_{u.id}"] = [f"mem_{u.id}", f"{names[u.event.attr]}@t"]
    graph = CausalGraph(parents, units, names)
    report = DiscoveryReport(entropies, records, time.perf_counter() - t0, cfg.echo())
    return graph, report
