"""Density and probability-mass estimation over dataset variables.

Variables are addressed as :class:`Var` (an attribute, the action, or a soft
binary event column) at a time offset relative to the base step ``t``. A
sample is one base step ``(l, t)`` at which every requested offset stays
inside ``[0, h]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .errors import AllZeroWeights, DimensionMismatch, EmptyDataset, MalformedPmf
from .trajectory import Dataset

ATTR = "attr"
ACTION = "action"
EVENT = "event"

TARGET = "X"
PARENT = "Y"
EVENT_ROLE = "E"


@dataclass(frozen=True)
class Var:
    source: str
    index: int = 0
    offset: int = 0

    def __str__(self):
        name = {ATTR: f"O{self.index}", ACTION: "A", EVENT: "E"}[self.source]
        return f"{name}@t{self.offset:+d}" if self.offset else f"{name}@t"


def attr(i: int, offset: int = 0) -> Var:
    return Var(ATTR, int(i), int(offset))


def action(offset: int = 0) -> Var:
    return Var(ACTION, 0, int(offset))


def event(offset: int = 0) -> Var:
    return Var(EVENT, 0, int(offset))


def _as_var(v) -> Var:
    if isinstance(v, Var):
        return v
    i, off = v
    return attr(i, off)


@dataclass(frozen=True)
class KernelConfig:
    w: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.w > 0 or not self.alpha > 0:
            raise ValueError("kernel sharpness w and scale alpha must be positive")


class GridSpec:
    """Per-attribute, per-component bin edges.

    Integer-grid attributes get unit cells centred on the integers; continuous
    ones get ``bins`` equal-width bins per component.
    """

    def __init__(self, edges: Sequence[Sequence[np.ndarray]]):
        self.edges = [[np.asarray(e, dtype=np.float64) for e in per_attr] for per_attr in edges]
        for per_attr in self.edges:
            for e in per_attr:
                if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                    raise ValueError("bin edges must be strictly increasing with at least two entries")

    @classmethod
    def default(cls, schema, bins: int = 16) -> "GridSpec":
        edges = []
        for a in schema.attributes:
            per = []
            for lo, hi in zip(a.lower, a.upper):
                if a.is_grid:
                    per.append(np.arange(np.floor(lo), np.ceil(hi) + 2) - 0.5)
                else:
                    per.append(np.linspace(lo, hi, bins + 1))
            edges.append(per)
        return cls(edges)

    def covers(self, schema) -> bool:
        return len(self.edges) >= schema.n

    def n_bins(self, i: int) -> int:
        return int(np.prod([len(e) - 1 for e in self.edges[i]]))

    def bin_codes(self, i: int, values: np.ndarray) -> np.ndarray:
        """Flat cell index of each row of ``values`` for attribute ``i``."""
        per = self.edges[i]
        codes = np.zeros(values.shape[0], dtype=np.int64)
        for k, e in enumerate(per):
            idx = np.searchsorted(e, values[:, k], side="right") - 1
            idx = np.clip(idx, 0, len(e) - 2)
            codes = codes * (len(e) - 1) + idx
        return codes

    def extended(self, extra_edges) -> "GridSpec":
        return GridSpec(self.edges + [list(p) for p in extra_edges])


def grid_for(d: Dataset, g: GridSpec | None) -> GridSpec:
    if g is None or not g.covers(d.schema):
        base = GridSpec.default(d.schema)
        if g is not None:
            base = GridSpec(g.edges + base.edges[len(g.edges) :])
        return base
    return g


# --- sample selection ----------------------------------------------------


def sample_steps(d: Dataset, vars: Sequence[Var], t_range=None) -> np.ndarray:
    """Base steps ``t`` at which all variable offsets are in range."""
    offsets = [v.offset for v in vars] or [0]
    lo = max(0, -min(offsets))
    hi = d.h - max(offsets)
    if t_range is not None:
        lo = max(lo, int(t_range[0]))
        hi = min(hi, int(t_range[1]))
    return np.arange(lo, hi + 1)


def _column(d: Dataset, v: Var, steps: np.ndarray) -> np.ndarray:
    ts = steps + v.offset
    if v.source == ATTR:
        return d.obs[v.index][:, ts].reshape(-1, d.schema[v.index].dim)
    if v.source == ACTION:
        return d.actions[:, ts].reshape(-1, 1).astype(np.float64)
    raise ValueError(f"{v} has no data column")


@dataclass
class Codes:
    """Joint cell codes of the samples, in row-major ``(l, t)`` order."""

    codes: np.ndarray
    shape: tuple
    steps: np.ndarray
    L: int


def joint_codes(d: Dataset, vars: Sequence[Var], g: GridSpec | None = None, t_range=None) -> Codes:
    """Discretize the non-event variables of ``vars`` into one joint code."""
    g = grid_for(d, g)
    steps = sample_steps(d, vars, t_range)
    if d.L == 0:
        raise EmptyDataset("dataset has no episodes")
    codes = np.zeros(d.L * len(steps), dtype=np.int64)
    shape = []
    for v in vars:
        if v.source == EVENT:
            continue
        if v.source == ATTR:
            if not 0 <= v.index < d.schema.n:
                raise IndexError(f"attribute index {v.index} out of range")
            c = g.bin_codes(v.index, _column(d, v, steps))
            nb = g.n_bins(v.index)
        else:
            c = _column(d, v, steps)[:, 0].astype(np.int64)
            nb = d.schema.action_count
        codes = codes * nb + c
        shape.append(nb)
    return Codes(codes, tuple(shape), steps, d.L)


# --- probability mass functions --------------------------------------------


class Pmf:
    """Sparse joint probability table over discretized variables.

    ``codes`` are row-major flat indices into ``shape`` (one axis per
    variable, in ``variables`` order) and ``masses`` their probabilities.
    """

    def __init__(self, variables, roles, shape, codes, masses, check=True):
        self.variables = tuple(variables)
        self.roles = tuple(roles)
        self.shape = tuple(int(s) for s in shape)
        order = np.argsort(codes, kind="stable")
        self.codes = np.asarray(codes, dtype=np.int64)[order]
        self.masses = np.asarray(masses, dtype=np.float64)[order]
        if check:
            self.check()

    def check(self, tol: float = 1e-9):
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise MalformedPmf("negative or non-finite probability mass")
        total = self.masses.sum()
        if abs(total - 1.0) > tol:
            raise MalformedPmf(f"masses sum to {total!r}, not 1")

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def __getitem__(self, assignment) -> float:
        code = int(np.ravel_multi_index(tuple(int(a) for a in assignment), self.shape))
        j = np.searchsorted(self.codes, code)
        if j < len(self.codes) and self.codes[j] == code:
            return float(self.masses[j])
        return 0.0

    def as_dict(self) -> dict:
        idx = np.unravel_index(self.codes, self.shape)
        return {tuple(int(a[k]) for a in idx): float(m) for k, m in enumerate(self.masses) if m > 0}

    def marginal(self, keep: Sequence[int]) -> "Pmf":
        keep = list(keep)
        idx = np.unravel_index(self.codes, self.shape)
        shape = tuple(self.shape[k] for k in keep)
        if keep:
            sub = np.ravel_multi_index(tuple(idx[k] for k in keep), shape)
        else:
            sub = np.zeros(len(self.codes), dtype=np.int64)
        uniq, inv = np.unique(sub, return_inverse=True)
        masses = np.bincount(inv, weights=self.masses, minlength=len(uniq))
        return Pmf([self.variables[k] for k in keep], [self.roles[k] for k in keep], shape, uniq, masses, check=False)

    @property
    def target_axis(self) -> int:
        return self.roles.index(TARGET)


def pmf_from_codes(variables, roles, shape, codes, weights) -> Pmf:
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if not total > 0:
        raise AllZeroWeights("all sample weights are zero")
    uniq, inv = np.unique(codes, return_inverse=True)
    masses = np.bincount(inv, weights=weights, minlength=len(uniq)) / total
    keep = masses > 0
    return Pmf(variables, roles, shape, uniq[keep], masses[keep])


def empirical_pmf(
    d: Dataset,
    vars: Sequence,
    g: GridSpec | None = None,
    weights=None,
    event=None,
    t_range=None,
    target: int = 0,
) -> Pmf:
    """Normalized (optionally weighted) histogram of the joint assignment.

    ``vars[target]`` is tagged as the target; an :func:`event` variable takes
    its per-step membership from ``event`` (shape ``(L, h + 1)``), each sample
    contributing ``m`` to ``E = 1`` and ``1 - m`` to ``E = 0``. ``weights``
    are optional per-step sample weights in ``[0, 1]`` with the same shape.
    """
    if d.L == 0:
        raise EmptyDataset("dataset has no episodes")
    vars = [_as_var(v) for v in vars]
    roles = [TARGET if k == target else (EVENT_ROLE if v.source == EVENT else PARENT) for k, v in enumerate(vars)]
    jc = joint_codes(d, vars, g, t_range)
    if len(jc.steps) == 0:
        raise EmptyDataset("no sample step satisfies the requested time offsets")
    w = np.ones(len(jc.codes))
    if weights is not None:
        wt = np.asarray(weights, dtype=np.float64)
        if np.any(wt < 0) or np.any(wt > 1):
            raise ValueError("sample weights must lie in [0, 1]")
        w = wt[:, jc.steps].ravel()
    ev_pos = [k for k, v in enumerate(vars) if v.source == EVENT]
    if not ev_pos:
        return pmf_from_codes(vars, roles, jc.shape, jc.codes, w)
    if len(ev_pos) > 1:
        raise ValueError("at most one event column per pmf")
    if event is None:
        raise ValueError("an event variable needs event memberships")
    k = ev_pos[0]
    m = np.asarray(event, dtype=np.float64)[:, jc.steps + vars[k].offset].ravel()
    # re-insert the binary event axis at position k of the joint code
    tail = int(np.prod(jc.shape[k:], dtype=np.int64))
    head, rest = np.divmod(jc.codes, tail)
    base = head * 2 * tail + rest
    codes = np.concatenate([base, base + tail])
    ws = np.concatenate([w * (1.0 - m), w * m])
    shape = jc.shape[:k] + (2,) + jc.shape[k:]
    return pmf_from_codes(vars, roles, shape, codes, ws)


# --- kernel density ------------------------------------------------------------


def kde_density(d: Dataset, vars: Sequence, query, k: KernelConfig = KernelConfig()) -> float:
    """Exponential-kernel density of ``query`` over the joint of ``vars``.

    Returns ``alpha * w / N * sum_n exp(-w * sum_v |query_v - x_v,n|_2)`` with
    ``N`` the number of samples. ``query`` is either one flat vector or one
    vector per variable.
    """
    if d.L == 0:
        raise EmptyDataset("dataset has no episodes")
    vars = [_as_var(v) for v in vars]
    steps = sample_steps(d, vars)
    if len(steps) == 0:
        raise EmptyDataset("no sample step satisfies the requested time offsets")
    cols = [_column(d, v, steps) for v in vars]
    dims = [c.shape[1] for c in cols]
    if isinstance(query, (list, tuple)) and len(query) == len(vars) and all(np.ndim(q) >= 1 for q in query):
        parts = [np.atleast_1d(np.asarray(q, dtype=np.float64)) for q in query]
        if [len(p) for p in parts] != dims:
            raise DimensionMismatch(f"query parts have dims {[len(p) for p in parts]}, expected {dims}")
        q = np.concatenate(parts)
    else:
        q = np.atleast_1d(np.asarray(query, dtype=np.float64)).ravel()
    if q.shape[0] != sum(dims):
        raise DimensionMismatch(f"query has dimension {q.shape[0]}, variables need {sum(dims)}")
    data = np.concatenate(cols, axis=1)
    splits = np.concatenate([[0], np.cumsum(dims)])
    n = data.shape[0]
    return k.alpha * k.w / n * _accel.kde_sum(data, q, splits, k.w)


def sample_center(d: Dataset, i: int, k: KernelConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw one point from the exponential-kernel mixture over attribute ``i``.

    Picks a data sample uniformly, then adds radial noise whose norm follows
    Gamma(dim, 1/w) (the radial law of ``exp(-w |x|)``) in a uniformly random
    direction. The result is clamped to the attribute's domain box.
    """
    if d.L == 0:
        raise EmptyDataset("dataset has no episodes")
    spec = d.schema[i]
    vals = d.obs[i].reshape(-1, spec.dim)
    x = vals[rng.integers(len(vals))].copy()
    direction = rng.standard_normal(spec.dim)
    norm = np.linalg.norm(direction)
    if norm > 0:
        direction /= norm
    x += rng.gamma(spec.dim, 1.0 / k.w) * direction
    return np.clip(x, spec.lower_array, spec.upper_array)
