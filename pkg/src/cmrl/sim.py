"""Latch-POMDP gridworlds for the painting and tire-removal tasks.

The end effector moves one cell per step in one of six axis directions,
clamped at the grid boundary. Some cells are triggers: visiting one sets a
hidden latch that never resets. Reaching a goal cell while every latch is set
pays reward 1. Agents observe only the position and the reward.

Latch bits at step ``t`` record trigger visits at steps strictly before ``t``,
which is exactly what a memory unit placed on the trigger cell computes.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ClassAbsent, SchemaViolation, SteppedAfterDone
from .memory import MemoryUnit
from .infotheory import BallEvent
from .planner import (
    AugmentedStateIndex,
    PolicyTable,
    TabularModel,
    _build_model,
    _reward_values,
    fit_model,
    greedy_action,
    predict_reward_class,
)
from .trajectory import INTEGER_GRID, AttributeSchema, AttributeSpec, Dataset

log = logging.getLogger(__name__)

MOVES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64)
N_ACTIONS = len(MOVES)
N_PLACEMENTS = 5


def _cell(c) -> tuple:
    return tuple(int(x) for x in c)


@dataclass(frozen=True)
class PaintingConfig:
    dims: tuple = (5, 5, 5)
    bucket_cell: tuple = (0, 0, 0)
    canvas_cell: tuple = (4, 4, 4)
    horizon: int = 100
    seed: int = 0
    canvas_region: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "dims", _cell(self.dims))
        object.__setattr__(self, "bucket_cell", _cell(self.bucket_cell))
        object.__setattr__(self, "canvas_cell", _cell(self.canvas_cell))
        object.__setattr__(self, "canvas_region", tuple(_cell(c) for c in self.canvas_region))
        if self.bucket_cell == self.canvas_cell or self.bucket_cell in self.canvas_region:
            raise SchemaViolation("bucket and canvas must be different cells")
        for c in (self.bucket_cell, self.canvas_cell, *self.canvas_region):
            _check_in_grid(c, self.dims)
        if self.horizon < 1:
            raise SchemaViolation("horizon must be at least 1")

    @property
    def task(self) -> "GridTask":
        return GridTask(self.dims, (self.bucket_cell,), (self.canvas_cell, *self.canvas_region), False, self.horizon)


@dataclass(frozen=True)
class TireConfig:
    dims: tuple = (5, 5, 1)
    lug_cells: tuple = ((1, 1, 0), (1, 3, 0), (3, 1, 0), (3, 3, 0))
    center_cell: tuple = (2, 2, 0)
    horizon: int = 100
    terminal_on_success: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", _cell(self.dims))
        object.__setattr__(self, "lug_cells", tuple(_cell(c) for c in self.lug_cells))
        object.__setattr__(self, "center_cell", _cell(self.center_cell))
        special = set(self.lug_cells) | {self.center_cell}
        if len(self.lug_cells) != 4 or len(special) != 5:
            raise SchemaViolation("tire needs 4 distinct lug cells and a distinct center cell")
        for c in special:
            _check_in_grid(c, self.dims)
        if self.horizon < 1:
            raise SchemaViolation("horizon must be at least 1")

    @property
    def task(self) -> "GridTask":
        return GridTask(self.dims, self.lug_cells, (self.center_cell,), self.terminal_on_success, self.horizon)


def _check_in_grid(c, dims):
    if len(c) != 3 or any(not 0 <= x < n for x, n in zip(c, dims)):
        raise SchemaViolation(f"cell {c} outside grid {dims}")


@dataclass(frozen=True)
class GridTask:
    dims: tuple
    triggers: tuple
    goals: tuple
    terminal: bool
    horizon: int

    @property
    def axes(self) -> list:
        """Grid axes with more than one cell; only these are observed."""
        return [k for k, n in enumerate(self.dims) if n > 1]

    def schema(self) -> AttributeSchema:
        axes = self.axes
        pos = AttributeSpec("position", len(axes), [0] * len(axes), [self.dims[k] - 1 for k in axes], INTEGER_GRID)
        rew = AttributeSpec("reward", 1, [0], [1], INTEGER_GRID)
        return AttributeSchema((pos, rew), N_ACTIONS, 1)

    def observe(self, pos) -> np.ndarray:
        return np.asarray([pos[k] for k in self.axes], dtype=np.float64)

    def trigger_units(self) -> list:
        """Memory units placed exactly on the trigger cells (radius 0)."""
        return [MemoryUnit(k, BallEvent(0, self.observe(c), 0.0)) for k, c in enumerate(self.triggers)]


@dataclass(frozen=True)
class EnvState:
    pos: tuple
    latches: tuple
    t: int = 0
    done: bool = False


@dataclass
class EpisodeResult:
    total_reward: float
    steps: int
    success: bool
    trace: list = field(default_factory=list)


def reset(task: GridTask, rng: np.random.Generator) -> EnvState:
    pos = tuple(int(rng.integers(n)) for n in task.dims)
    return EnvState(pos, (0,) * len(task.triggers))


def env_step(state: EnvState, action: int, task: GridTask):
    """Advance one step; returns ``(state, observation, reward)``."""
    if state.done:
        raise SteppedAfterDone("episode already finished")
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action {action} outside [0, {N_ACTIONS})")
    latches = tuple(int(b or state.pos == c) for b, c in zip(state.latches, task.triggers))
    pos = tuple(int(np.clip(p + dp, 0, n - 1)) for p, dp, n in zip(state.pos, MOVES[action], task.dims))
    reward = 1.0 if pos in task.goals and all(latches) else 0.0
    done = bool(task.terminal and reward > 0)
    return EnvState(pos, latches, state.t + 1, done), task.observe(pos), reward


def _as_task(cfg) -> GridTask:
    return cfg if isinstance(cfg, GridTask) else cfg.task


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def collect_random(cfg, L: int, rng=None, return_latches: bool = False):
    """``L`` episodes under the uniform random policy.

    Collection always uses non-terminal dynamics so every episode has exactly
    ``horizon`` transitions. ``rng`` may be a seed or a generator; each episode
    draws from its own stream derived from it.
    """
    if L < 1:
        raise ValueError("need at least one episode")
    task = replace(_as_task(cfg), terminal=False)
    seed = _seed_of(rng, cfg)
    h = task.horizon
    schema = task.schema()
    pos = np.empty((L, h + 1, len(task.axes)))
    rew = np.zeros((L, h + 1, 1))
    acts = np.empty((L, h + 1), dtype=np.int64)
    latches = np.empty((len(task.triggers), L, h + 1), dtype=np.int8)
    for l, r in enumerate(_streams(seed, L)):
        st = reset(task, r)
        a = r.integers(N_ACTIONS, size=h + 1)
        pos[l, 0] = task.observe(st.pos)
        latches[:, l, 0] = st.latches
        for t in range(h):
            st, obs, reward = env_step(st, int(a[t]), task)
            pos[l, t + 1] = obs
            rew[l, t + 1, 0] = reward
            latches[:, l, t + 1] = st.latches
        acts[l] = a
    d = Dataset(schema, (pos, rew), acts)
    if return_latches:
        return d, latches
    return d


def _seed_of(rng, cfg) -> int:
    if rng is None:
        return int(getattr(cfg, "seed", 0))
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63 - 1))
    return int(rng)


def evaluate_policy(cfg, pt: PolicyTable, units: Sequence[MemoryUnit] | None = None, episodes: int = 200,
                    seed: int | None = None, idx=None, keep_trace: bool = False) -> EpisodeResult:
    """Mean episode result of the greedy policy.

    The agent tracks its own context (memory bits or history window) from
    observations only; ground-truth latches are never read.
    """
    task = _as_task(cfg)
    idx = idx if idx is not None else pt.index
    if units is not None and isinstance(idx, AugmentedStateIndex) and tuple(units) != idx.units:
        raise ValueError("policy index was built with different memory units")
    seed = int(getattr(cfg, "seed", 0)) + 10_007 if seed is None else seed
    results = []
    for r in _streams(seed, episodes):
        st = reset(task, r)
        obs = [task.observe(st.pos), np.zeros(1)]
        ctx = idx.initial_context()
        total, steps, trace = 0.0, 0, []
        for _ in range(task.horizon):
            a = greedy_action(pt, idx, obs, ctx)
            ctx = idx.advance(ctx, obs, a)
            st, o, reward = env_step(st, a, task)
            obs = [o, np.asarray([reward])]
            total += reward
            steps += 1
            if keep_trace:
                trace.append((st.pos, a, reward, st.latches))
            if st.done:
                break
        results.append(EpisodeResult(total, steps, total > 0, trace))
    mean = EpisodeResult(
        float(np.mean([x.total_reward for x in results])),
        int(round(np.mean([x.steps for x in results]))),
        float(np.mean([x.success for x in results])),
    )
    mean.trace = results if keep_trace else []
    return mean


def reward_metrics(mdl: TabularModel, units, test: Dataset, idx=None, strict: bool = False) -> dict:
    """Per-class ``(recall, precision)`` of next-reward prediction on ``test``.

    Undefined ratios (a class never occurring or never predicted) are NaN, or
    raise :class:`ClassAbsent` when ``strict``.
    """
    idx = idx if idx is not None else mdl.index
    if units is not None and isinstance(idx, AugmentedStateIndex) and tuple(units) != idx.units:
        raise ValueError("model index was built with different memory units")
    states = idx.states_of_dataset(test)
    s = states[:, :-1].ravel()
    a = test.actions[:, :-1].ravel()
    truth = test.rewards[:, 1:].ravel()
    pred = np.array([predict_reward_class(mdl, int(si) if si >= 0 else None, int(ai)) for si, ai in zip(s, a)])
    out = {}
    for c in (0.0, 1.0):
        tp = int(np.sum((pred == c) & (truth == c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        if strict and tp + fn == 0:
            raise ClassAbsent(f"reward class {c:g} never occurs in the test data")
        recall = tp / (tp + fn) if tp + fn else float("nan")
        precision = tp / (tp + fp) if tp + fp else float("nan")
        out[int(c)] = (recall, precision)
    return out


# --- history stacking baseline ---------------------------------------------


class HistoryIndex:
    """States are the current cell plus the last ``window`` (cell, action) pairs.

    Ids are assigned in order of first appearance in the training data;
    histories never seen there have no id.
    """

    kind = "history"

    def __init__(self, base: AugmentedStateIndex, window: int, histories: Sequence[tuple] = ()):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.base = base
        self.window = window
        self.action_count = base.action_count
        self.ids = {}
        self.histories = []
        for hst in histories:
            self._add(tuple(hst))

    def _add(self, hst: tuple) -> int:
        s = self.ids.get(hst)
        if s is None:
            s = self.ids[hst] = len(self.histories)
            self.histories.append(hst)
        return s

    @property
    def n_states(self) -> int:
        return len(self.histories)

    def _histories(self, d: Dataset):
        cells = self.base.cells_of_dataset(d)
        L, T = cells.shape
        w = self.window
        pad_c = np.full((L, w), -1, dtype=np.int64)
        pad_a = np.full((L, w), -1, dtype=np.int64)
        c = np.concatenate([pad_c, cells], axis=1)
        a = np.concatenate([pad_a, d.actions], axis=1)
        cols = [c[:, w : w + T]]
        for k in range(1, w + 1):
            cols.append(c[:, w - k : w - k + T])
            cols.append(a[:, w - k : w - k + T])
        return np.stack(cols, axis=2)

    def register(self, d: Dataset) -> np.ndarray:
        hs = self._histories(d)
        L, T, _ = hs.shape
        ids = np.empty((L, T), dtype=np.int64)
        for l in range(L):
            for t in range(T):
                ids[l, t] = self._add(tuple(hs[l, t].tolist()))
        return ids

    def states_of_dataset(self, d: Dataset) -> np.ndarray:
        hs = self._histories(d)
        L, T, _ = hs.shape
        out = np.empty((L, T), dtype=np.int64)
        for l in range(L):
            for t in range(T):
                out[l, t] = self.ids.get(tuple(hs[l, t].tolist()), -1)
        return out

    def initial_context(self):
        return deque(maxlen=self.window)

    def advance(self, ctx, obs, action):
        ctx = deque(ctx, maxlen=self.window)
        ctx.appendleft((self.base.cell_of(obs), int(action)))
        return ctx

    def state_of(self, obs, ctx) -> int | None:
        cell = self.base.cell_of(obs)
        if cell is None:
            return None
        hst = [cell]
        past = list(ctx) + [(-1, -1)] * (self.window - len(ctx))
        for c, a in past:
            hst.extend((c, a))
        return self.ids.get(tuple(hst))

    def to_json(self) -> dict:
        return {"kind": self.kind, "window": self.window, "histories": [list(h) for h in self.histories]}


def history_stacking_model(d: Dataset, window: int, idx: AugmentedStateIndex | None = None) -> TabularModel:
    """Frequency-count model whose state is a window of recent cells and actions.

    ``window = 0`` degenerates to the memory-free Markov model.
    """
    base = idx if idx is not None else AugmentedStateIndex(d.schema)
    if window < 0:
        raise ValueError("window must be nonnegative")
    if window == 0:
        return fit_model(d, AugmentedStateIndex(d.schema))
    hidx = HistoryIndex(base, window)
    states = hidx.register(d)
    A = d.schema.action_count
    s0 = states[:, :-1].ravel()
    s1 = states[:, 1:].ravel()
    acts = d.actions[:, :-1].ravel()
    values = _reward_values(d)
    r_idx = np.searchsorted(values, d.rewards[:, 1:].ravel())
    S = hidx.n_states
    pair = s0 * A + acts
    next_dists = [None] * (S * A)
    counts: dict = {}
    for p, s2 in zip(pair.tolist(), s1.tolist()):
        bucket = counts.setdefault(p, {})
        bucket[s2] = bucket.get(s2, 0) + 1
    reward_counts = np.zeros((S * A, len(values)))
    np.add.at(reward_counts, (pair, r_idx), 1.0)
    zero = int(np.searchsorted(values, 0.0))
    visited = np.zeros(S * A, dtype=bool)
    for p in range(S * A):
        c = counts.get(p)
        if c is None:
            next_dists[p] = {p // A: 1.0}
            reward_counts[p, zero] = 1.0
        else:
            visited[p] = True
            total = sum(c.values())
            next_dists[p] = {s2: n / total for s2, n in c.items()}
    visits = np.bincount(pair, minlength=S * A)
    return _build_model(S, A, next_dists, reward_counts, values, visits, visited, hidx)


# --- placements ------------------------------------------------------------------


def painting_placement(placement: int | None, horizon: int = 100, dims=(5, 5, 5)) -> PaintingConfig:
    """Placement 0 (or ``None``) is the default geometry; others are seeded draws.

    Random placements keep the bucket and canvas at Manhattan distance >= 6.
    """
    if not placement:
        return PaintingConfig(dims=dims, horizon=horizon)
    rng = np.random.default_rng([placement, 0x9A1])
    while True:
        b = tuple(int(rng.integers(n)) for n in dims)
        c = tuple(int(rng.integers(n)) for n in dims)
        if sum(abs(x - y) for x, y in zip(b, c)) >= 6:
            return PaintingConfig(dims=dims, bucket_cell=b, canvas_cell=c, horizon=horizon)


def tire_placement(placement: int | None, horizon: int = 100, dims=(5, 5, 1)) -> TireConfig:
    """Placement 0 (or ``None``) is the default geometry; others move the lug nuts.

    Random placements keep the wheel center fixed and every pair of special
    cells at Manhattan distance >= 2.
    """
    if not placement:
        return TireConfig(dims=dims, horizon=horizon)
    rng = np.random.default_rng([placement, 0x71E])
    center = TireConfig().center_cell
    cells = [(x, y, 0) for x in range(dims[0]) for y in range(dims[1])]
    while True:
        pick = [cells[k] for k in rng.choice(len(cells), size=4, replace=False)]
        special = pick + [center]
        if len(set(special)) == 5 and all(
            sum(abs(p - q) for p, q in zip(a, b)) >= 2 for i, a in enumerate(special) for b in special[i + 1 :]
        ):
            return TireConfig(dims=dims, lug_cells=tuple(pick), center_cell=center, horizon=horizon)
