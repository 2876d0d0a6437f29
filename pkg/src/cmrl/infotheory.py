"""Plug-in conditional entropy, information gain and soft ball events.

A ball event for attribute ``i`` at step ``t`` asks whether ``O^i`` visited
``Ball(c, r)`` strictly before ``t``. Its relaxed membership is a smooth
function of ``d_t = min_{t' < t} |o_t' - c|`` so that the conditional entropy
of a target given the event can be differentiated in ``(c, r)``.

All entropies are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .density import EVENT, GridSpec, Pmf, TARGET, Var, joint_codes
from .errors import DegenerateBall, MalformedPmf, SchemaViolation
from .trajectory import Dataset

LOGISTIC = "logistic"
CLAMPED_EXPONENTIAL = "clamped-exponential"


@dataclass(frozen=True)
class BallEvent:
    attr: int
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius < 0:
            raise SchemaViolation("ball radius must be nonnegative")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center)

    def validate(self, schema) -> None:
        spec = schema[self.attr]
        c = self.center_array
        if c.shape != (spec.dim,):
            raise SchemaViolation(f"ball center has dim {len(c)}, attribute {self.attr} has dim {spec.dim}")
        if np.any(c < spec.lower_array - 1e-12) or np.any(c > spec.upper_array + 1e-12):
            raise SchemaViolation(f"ball center {self.center} outside the domain of attribute {self.attr}")
        if self.radius > spec.radius + 1e-12:
            raise SchemaViolation(f"ball radius {self.radius} exceeds the domain radius {spec.radius}")

    def contains(self, point) -> bool:
        return float(np.linalg.norm(np.asarray(point, dtype=np.float64) - self.center_array)) <= self.radius


@dataclass(frozen=True)
class SoftEventConfig:
    w_e: float = 4.0
    form: str = LOGISTIC

    def __post_init__(self):
        if not self.w_e > 0:
            raise ValueError("relaxation sharpness w_e must be positive")
        if self.form not in (LOGISTIC, CLAMPED_EXPONENTIAL):
            raise ValueError(f"unknown relaxation form {self.form!r}")


# --- entropies -------------------------------------------------------------


def _log2_ratio(num, den):
    out = np.zeros_like(num)
    ok = (num > 0) & (den > 0)
    out[ok] = np.log2(num[ok] / den[ok])
    return out


def conditional_entropy(p: Pmf) -> float:
    """``H(X | Y...)`` of the target axis given every other axis, in bits."""
    total = p.masses.sum()
    if abs(total - 1.0) > 1e-9 or np.any(p.masses < 0):
        raise MalformedPmf(f"pmf masses sum to {total!r}")
    if TARGET not in p.roles:
        raise MalformedPmf("pmf has no target variable")
    ax = p.target_axis
    idx = np.unravel_index(p.codes, p.shape)
    others = [k for k in range(len(p.shape)) if k != ax]
    if others:
        ctx = np.ravel_multi_index(tuple(idx[k] for k in others), tuple(p.shape[k] for k in others))
    else:
        ctx = np.zeros(len(p.codes), dtype=np.int64)
    uniq, inv = np.unique(ctx, return_inverse=True)
    pctx = np.bincount(inv, weights=p.masses, minlength=len(uniq))
    h = -np.sum(p.masses * _log2_ratio(p.masses, pctx[inv]))
    return max(0.0, float(h))


def entropy(p: Pmf) -> float:
    return conditional_entropy(p.marginal([p.target_axis]))


def information_gain(h_without: float, h_with: float) -> float:
    """Entropy reduction from adding a parent: ``H(X|pa) - H(X|pa, Y)``."""
    return h_without - h_with


def h2(p: float) -> float:
    """Binary entropy in bits."""
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


# --- soft events ---------------------------------------------------------------


def _membership(dmin, radius, cfg: SoftEventConfig):
    """Relaxed membership and its derivative with respect to ``r - d``."""
    z = radius - dmin
    if cfg.form == LOGISTIC:
        with np.errstate(over="ignore"):
            m = 1.0 / (1.0 + np.exp(-cfg.w_e * z))
        dm = cfg.w_e * m * (1.0 - m)
    else:
        with np.errstate(over="ignore"):
            e = np.exp(np.minimum(cfg.w_e * z, 0.0))
        inside = z >= 0
        m = np.where(inside, 1.0, e)
        dm = np.where(inside, 0.0, cfg.w_e * e)
    m = np.where(np.isinf(dmin), 0.0, m)
    dm = np.where(np.isinf(dmin), 0.0, dm)
    return m, dm


def soft_event_weights(d: Dataset, b: BallEvent, cfg: SoftEventConfig = SoftEventConfig()) -> np.ndarray:
    """Relaxed memberships ``m[l, t]`` of the past-visit event, shape ``(L, h + 1)``.

    ``m[:, 0] = 0`` because no observation precedes the first step.
    """
    dmin, _ = _accel.running_min_distance(d.obs[b.attr], b.center_array)
    m, _ = _membership(dmin, b.radius, cfg)
    return m


def hard_event_weights(d: Dataset, b: BallEvent) -> np.ndarray:
    """Exact past-visit indicator (inclusive boundary), shape ``(L, h + 1)``."""
    return _accel.latch_trace(d.obs[b.attr], b.center_array, b.radius).astype(np.float64)


class EntropyObjective:
    """``H(X | pa, E)`` as a function of per-sample event memberships.

    Discretization of ``(X, pa)`` is done once; evaluating a new membership
    vector costs a few bincounts.
    """

    def __init__(self, d: Dataset, X: Var, pa: Sequence[Var], g: GridSpec | None = None, t_range=None):
        if any(v.source == EVENT for v in pa):
            raise ValueError("parents must not contain the candidate event")
        jc = joint_codes(d, [X, *pa], g, t_range)
        n_pa = int(np.prod(jc.shape[1:], dtype=np.int64)) if len(jc.shape) > 1 else 1
        ctx = jc.codes % n_pa
        self.steps = jc.steps
        self.L = jc.L
        self.n = len(jc.codes)
        # Samples whose context has a single target value contribute nothing
        # to the entropy or its gradient, whatever the event does; drop them.
        _, ctx_all = np.unique(ctx, return_inverse=True)
        _, cell_all = np.unique(jc.codes, return_inverse=True)
        cells_per_ctx = np.bincount(ctx_all[np.unique(cell_all, return_index=True)[1]])
        self.keep = np.flatnonzero(cells_per_ctx[ctx_all] > 1)
        codes = jc.codes[self.keep]
        cells, self.cell_of = np.unique(codes, return_inverse=True)
        ctxs, self.ctx_of = np.unique(ctx[self.keep], return_inverse=True)
        self.n_cells = len(cells)
        self.n_ctx = len(ctxs)
        first = np.unique(self.cell_of, return_index=True)[1]
        self.cell_ctx = self.ctx_of[first]
        self.keep_l = self.keep // len(self.steps)
        self.keep_t = self.steps[self.keep % len(self.steps)]

    def select(self, per_step: np.ndarray) -> np.ndarray:
        """Values of an ``(L, h + 1)`` array at the contributing samples."""
        return per_step[self.keep_l, self.keep_t]

    def _masses(self, m):
        c1 = np.bincount(self.cell_of, weights=m, minlength=self.n_cells)
        c0 = np.bincount(self.cell_of, weights=1.0 - m, minlength=self.n_cells)
        k1 = np.bincount(self.ctx_of, weights=m, minlength=self.n_ctx)
        k0 = np.bincount(self.ctx_of, weights=1.0 - m, minlength=self.n_ctx)
        return c1, c0, k1, k0

    def value(self, m: np.ndarray) -> float:
        c1, c0, k1, k0 = self._masses(m)
        h = -(c1 * _log2_ratio(c1, k1[self.cell_ctx])).sum() - (c0 * _log2_ratio(c0, k0[self.cell_ctx])).sum()
        return max(0.0, float(h / self.n))

    def value_without_event(self) -> float:
        return self.value(np.zeros(len(self.keep)))

    def value_and_dm(self, m: np.ndarray):
        """Entropy and its derivative with respect to each sample's membership."""
        c1, c0, k1, k0 = self._masses(m)
        l1 = _log2_ratio(c1, k1[self.cell_ctx])
        l0 = _log2_ratio(c0, k0[self.cell_ctx])
        h = (-(c1 * l1).sum() - (c0 * l0).sum()) / self.n
        dm = (l0[self.cell_of] - l1[self.cell_of]) / self.n
        return max(0.0, float(h)), dm


class RelaxedEntropy:
    """Relaxed ``H(X | pa, O^i in Ball(c, r))`` and its analytic gradient."""

    def __init__(self, d: Dataset, X: Var, pa: Sequence[Var], attr: int, cfg: SoftEventConfig = SoftEventConfig(),
                 g: GridSpec | None = None, t_range=None):
        obj = self.objective = EntropyObjective(d, X, pa, g, t_range)
        # only episodes holding contributing samples, up to their last one
        self.episodes, self.row = np.unique(obj.keep_l, return_inverse=True)
        t_end = int(obj.keep_t.max()) + 1 if len(obj.keep_t) else 1
        self.points = np.ascontiguousarray(d.obs[attr][self.episodes, :t_end])
        self.col = obj.keep_t
        self.attr = attr
        self.cfg = cfg

    def _geometry(self, center):
        dmin, arg = _accel.running_min_distance(self.points, center)
        return dmin[self.row, self.col], arg[self.row, self.col]

    def nearest_steps(self, center) -> np.ndarray:
        """Step of each contributing sample's nearest past point (-1 at ``t = 0``).

        The objective is smooth in ``center`` wherever this assignment is locally constant.
        """
        return self._geometry(np.asarray(center, dtype=np.float64))[1]

    def value(self, center, radius) -> float:
        center = np.asarray(center, dtype=np.float64)
        dmin, _ = self._geometry(center)
        m, _ = _membership(dmin, radius, self.cfg)
        return self.objective.value(m)

    def hard_value(self, center, radius) -> float:
        trace = _accel.latch_trace(self.points, np.asarray(center, dtype=np.float64), radius)
        return self.objective.value(trace[self.row, self.col].astype(np.float64))

    def value_and_grad(self, center, radius):
        """Returns ``(H, dH/dc, dH/dr)``.

        The nearest past point of every sample is held fixed, so the result is
        the exact gradient away from Voronoi boundaries (ties resolve to the
        earliest step).
        """
        center = np.asarray(center, dtype=np.float64)
        dmin, arg = self._geometry(center)
        m, dm_dz = _membership(dmin, radius, self.cfg)
        h, dh_dm = self.objective.value_and_dm(m)
        coef = dh_dm * dm_dz
        grad_r = float(coef.sum())
        live = np.flatnonzero(coef != 0)
        grad_c = np.zeros_like(center)
        if len(live):
            nearest = self.points[self.row[live], arg[live]]
            diff = center - nearest
            dist = dmin[live]
            unit = np.divide(diff, dist[:, None], out=np.zeros_like(diff), where=dist[:, None] > 0)
            # dm/dc = dm/dz * dz/dd * dd/dc = dm/dz * (-1) * unit
            grad_c = -(coef[live, None] * unit).sum(axis=0)
        return h, grad_c, grad_r


def relaxed_conditional_entropy(d: Dataset, X: Var, pa: Sequence[Var], b: BallEvent,
                                cfg: SoftEventConfig = SoftEventConfig(), g: GridSpec | None = None,
                                t_range=None) -> float:
    return RelaxedEntropy(d, X, pa, b.attr, cfg, g, t_range).value(b.center_array, b.radius)


def hard_conditional_entropy(d: Dataset, X: Var, pa: Sequence[Var], b: BallEvent | None = None,
                             g: GridSpec | None = None, t_range=None) -> float:
    obj = EntropyObjective(d, X, pa, g, t_range)
    if b is None:
        return obj.value_without_event()
    return obj.value(obj.select(hard_event_weights(d, b)))


def relaxed_entropy_gradient(d: Dataset, X: Var, pa: Sequence[Var], b: BallEvent,
                             cfg: SoftEventConfig = SoftEventConfig(), g: GridSpec | None = None, t_range=None):
    """Analytic ``(dH/dc, dH/dr)`` of the relaxed conditional entropy."""
    if b.radius <= 0:
        raise DegenerateBall("gradient needs a positive radius")
    _, gc, gr = RelaxedEntropy(d, X, pa, b.attr, cfg, g, t_range).value_and_grad(b.center_array, b.radius)
    return gc, gr

