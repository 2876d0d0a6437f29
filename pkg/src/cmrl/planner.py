"""Tabular transition/reward models over the memory-augmented state and value iteration.

The planning state is the joint grid cell of the observable non-reward
attributes together with the bits of every memory unit. The reward attribute
is what the model predicts, so it is not part of the state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _accel
from .errors import EmptyDataset, NonconvergenceGuard, SchemaViolation
from .memory import MemoryState, MemoryUnit, check_units, memory_step, memory_traces
from .trajectory import Dataset

log = logging.getLogger(__name__)

GAMMA = 0.99
TOL = 1e-8
MAX_SWEEPS = 100_000


class AugmentedStateIndex:
    """Bijection between ``(observable cell, memory bits)`` and a flat state id.

    ``state = cell * 2**m + bits`` with unit ``k`` stored in bit ``k``.
    """

    kind = "augmented"

    def __init__(self, schema, units: Sequence[MemoryUnit] = ()):
        self.units = tuple(units)
        check_units(self.units)
        self.m = len(self.units)
        self.attrs = [
            i for i, a in enumerate(schema.attributes) if i != schema.reward_attr and not a.name.startswith("mem_")
        ]
        if not self.attrs:
            raise SchemaViolation("no observable non-reward attribute to plan over")
        lows, sizes = [], []
        for i in self.attrs:
            spec = schema[i]
            if not spec.is_grid:
                raise SchemaViolation(f"attribute {spec.name!r} must be integer-grid for tabular planning")
            lows.extend(spec.lower)
            sizes.extend(int(round(hi - lo)) + 1 for lo, hi in zip(spec.lower, spec.upper))
        self._attr_dims = [schema[i].dim for i in self.attrs]
        self.low = np.asarray(lows)
        self.sizes = tuple(sizes)
        self.n_cells = int(np.prod(sizes))
        self.n_states = self.n_cells * (1 << self.m)
        self.action_count = schema.action_count
        self.reward_attr = schema.reward_attr

    # cells
    def _coords(self, obs) -> np.ndarray:
        return np.concatenate([np.asarray(obs[i], dtype=np.float64).reshape(-1) for i in self.attrs])

    def cell_of(self, obs) -> int | None:
        idx = np.round(self._coords(obs) - self.low).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.sizes)):
            return None
        return int(np.ravel_multi_index(tuple(idx), self.sizes))

    def cell_coords(self, cell: int) -> np.ndarray:
        return np.asarray(np.unravel_index(cell, self.sizes), dtype=np.float64) + self.low

    def cell_obs(self, cell: int) -> dict:
        """Per-attribute observation vectors of a cell (keyed by attribute index)."""
        coords = self.cell_coords(cell)
        out, k = {}, 0
        for i, n in zip(self.attrs, self._attr_dims):
            out[i] = coords[k : k + n]
            k += n
        return out

    def cells_of_dataset(self, d: Dataset) -> np.ndarray:
        coords = np.concatenate([d.obs[i] for i in self.attrs], axis=2)
        idx = np.round(coords - self.low).astype(np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, 2, 0)), self.sizes)

    # memory
    def inside_masks(self) -> np.ndarray:
        """Bitmask of the units whose ball contains each cell."""
        masks = np.zeros(self.n_cells, dtype=np.int64)
        for cell in range(self.n_cells):
            obs = self.cell_obs(cell)
            for u in self.units:
                if u.event.attr in obs and u.event.contains(obs[u.event.attr]):
                    masks[cell] |= 1 << u.id
        return masks

    def memory_ints(self, d: Dataset) -> np.ndarray:
        mem_cols = [i for i, a in enumerate(d.schema.attributes) if a.name.startswith("mem_")]
        if self.m == 0:
            return np.zeros((d.L, d.h + 1), dtype=np.int64)
        if len(mem_cols) == self.m:
            bits = np.stack([d.obs[i][..., 0] for i in mem_cols]).astype(np.int64)
        else:
            bits = memory_traces(d, self.units).astype(np.int64)
        weights = (1 << np.arange(self.m, dtype=np.int64))[:, None, None]
        return (bits * weights).sum(axis=0)

    def state_id(self, cell: int, mem: int) -> int:
        return cell * (1 << self.m) + mem

    def decode(self, s: int):
        return divmod(int(s), 1 << self.m)

    def states_of_dataset(self, d: Dataset) -> np.ndarray:
        return self.cells_of_dataset(d) * (1 << self.m) + self.memory_ints(d)

    # policy execution
    def initial_context(self):
        return MemoryState.initial(self.m)

    def advance(self, ctx, obs, action):
        return memory_step(ctx, obs, self.units)

    def state_of(self, obs, ctx) -> int | None:
        cell = self.cell_of(obs)
        if cell is None:
            return None
        return self.state_id(cell, ctx.as_int())

    def to_json(self) -> dict:
        return {"kind": self.kind, "units": [u.to_json() for u in self.units]}


@dataclass
class TabularModel:
    """Sparse next-state distributions and discrete reward distributions.

    Pair ``p = s * n_actions + a`` owns ``next_state[indptr[p]:indptr[p+1]]``
    with probabilities ``prob``; ``reward_probs[p]`` is a distribution over
    ``reward_values``.
    """

    n_states: int
    n_actions: int
    indptr: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    visits: np.ndarray
    visited: np.ndarray
    index: object = None

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        self.prob = np.asarray(self.prob, dtype=np.float64)
        self.reward_values = np.asarray(self.reward_values, dtype=np.float64)
        self.reward_probs = np.asarray(self.reward_probs, dtype=np.float64).reshape(-1, len(self.reward_values))
        self.visits = np.asarray(self.visits, dtype=np.int64)
        self.visited = np.asarray(self.visited, dtype=bool)

    @property
    def expected_reward(self) -> np.ndarray:
        return self.reward_probs @ self.reward_values

    def transitions(self, s: int, a: int) -> dict:
        p = s * self.n_actions + a
        sl = slice(self.indptr[p], self.indptr[p + 1])
        return dict(zip(self.next_state[sl].tolist(), self.prob[sl].tolist()))

    def reward_distribution(self, s: int, a: int) -> dict:
        p = s * self.n_actions + a
        return dict(zip(self.reward_values.tolist(), self.reward_probs[p].tolist()))

    def check(self, tol: float = 1e-9):
        sums = np.bincount(
            np.repeat(np.arange(len(self.indptr) - 1), np.diff(self.indptr)), weights=self.prob,
            minlength=len(self.indptr) - 1,
        )
        if np.any(np.abs(sums - 1) > tol) or np.any(np.abs(self.reward_probs.sum(axis=1) - 1) > tol):
            raise SchemaViolation("model distributions do not sum to 1")

    @classmethod
    def from_dense(cls, T, R, reward_values=(0.0, 1.0)) -> "TabularModel":
        """Build from a dense ``T[s, a, s']`` and deterministic rewards ``R[s, a]``."""
        T = np.asarray(T, dtype=np.float64)
        R = np.asarray(R, dtype=np.float64)
        S, A, _ = T.shape
        values = np.asarray(sorted(set(reward_values) | set(np.unique(R).tolist())))
        rp = np.zeros((S * A, len(values)))
        rp[np.arange(S * A), np.searchsorted(values, R.ravel())] = 1.0
        flat = T.reshape(S * A, S)
        nz = flat > 0
        indptr = np.concatenate([[0], np.cumsum(nz.sum(axis=1))])
        return cls(S, A, indptr, np.nonzero(nz)[1], flat[nz], values, rp, np.ones(S * A), np.ones(S * A, bool))

    def to_json(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "indptr": self.indptr.tolist(),
            "next_state": self.next_state.tolist(),
            "prob": self.prob.tolist(),
            "reward_values": self.reward_values.tolist(),
            "reward_probs": self.reward_probs.tolist(),
            "visits": self.visits.tolist(),
            "visited": self.visited.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, obj, index=None) -> "TabularModel":
        return cls(
            obj["n_states"], obj["n_actions"], obj["indptr"], obj["next_state"], obj["prob"],
            obj["reward_values"], obj["reward_probs"], obj["visits"], obj["visited"], index,
        )


def _build_model(n_states, n_actions, next_dists, reward_counts, reward_values, visits, visited, index):
    """Assemble CSR arrays from per-pair ``{next_state: prob}`` dicts."""
    indptr = [0]
    nxt, prob = [], []
    for p in range(n_states * n_actions):
        dist = next_dists[p]
        for s2 in sorted(dist):
            nxt.append(s2)
            prob.append(dist[s2])
        indptr.append(len(nxt))
    rp = reward_counts / reward_counts.sum(axis=1, keepdims=True)
    return TabularModel(n_states, n_actions, indptr, nxt, prob, reward_values, rp, visits, visited, index)


def _reward_values(d: Dataset) -> np.ndarray:
    return np.unique(np.concatenate([[0.0], d.rewards.ravel()]))


def fit_model(d: Dataset, idx: AugmentedStateIndex, graph=None) -> TabularModel:
    """Maximum-likelihood frequency estimates on the augmented state.

    Without ``graph`` every (state, action) pair is estimated from its own
    counts. With a causal graph, transitions follow its factorization: the
    observable cell is conditioned only on the memory units among the
    observables' parents, memory bits follow their latch rule, and the reward
    is conditioned on the memory units among the reward's parents. This lets
    the planner reason about memory combinations that never co-occurred in
    the data. Unvisited contexts become self-loops with reward 0.
    """
    if d.L == 0 or d.h < 1:
        raise EmptyDataset("need at least one transition to fit a model")
    A, m = idx.action_count, idx.m
    full = (1 << m) - 1
    obs_mask, rew_mask = full, full
    if graph is not None:
        obs_mask = graph.memory_mask(idx.attrs)
        rew_mask = graph.memory_mask([idx.reward_attr])
    cells = idx.cells_of_dataset(d)
    mems = idx.memory_ints(d)
    acts = d.actions[:, :-1].ravel()
    c0, c1 = cells[:, :-1].ravel(), cells[:, 1:].ravel()
    m0 = mems[:, :-1].ravel()
    r1 = d.rewards[:, 1:].ravel()
    values = _reward_values(d)
    r_idx = np.searchsorted(values, r1)
    inside = idx.inside_masks()

    obs_key = (c0 * A + acts) * (1 << m) + (m0 & obs_mask)
    rew_key = (c0 * A + acts) * (1 << m) + (m0 & rew_mask)
    obs_counts: dict = {}
    for key, nxt in zip(obs_key.tolist(), c1.tolist()):
        bucket = obs_counts.setdefault(key, {})
        bucket[nxt] = bucket.get(nxt, 0) + 1
    rew_counts: dict = {}
    for key, r in zip(rew_key.tolist(), r_idx.tolist()):
        row = rew_counts.setdefault(key, np.zeros(len(values)))
        row[r] += 1
    pair_visits = np.bincount((c0 * (1 << m) + m0) * A + acts, minlength=idx.n_states * A)

    zero = int(np.searchsorted(values, 0.0))
    next_dists = []
    reward_counts = np.zeros((idx.n_states * A, len(values)))
    visited = np.zeros(idx.n_states * A, dtype=bool)
    for s in range(idx.n_states):
        cell, bits = idx.decode(s)
        bits_next = bits | int(inside[cell])
        for a in range(A):
            p = s * A + a
            base = (cell * A + a) * (1 << m)
            counts = obs_counts.get(base + (bits & obs_mask))
            if counts is None:
                next_dists.append({s: 1.0})
                reward_counts[p, zero] = 1.0
                continue
            visited[p] = True
            total = sum(counts.values())
            next_dists.append({idx.state_id(c, bits_next): n / total for c, n in counts.items()})
            row = rew_counts.get(base + (bits & rew_mask))
            if row is None:
                reward_counts[p, zero] = 1.0
            else:
                reward_counts[p] = row
    return _build_model(idx.n_states, A, next_dists, reward_counts, values, pair_visits, visited, idx)


@dataclass
class ValueTable:
    V: np.ndarray
    gamma: float
    residual: float
    residuals: list = field(default_factory=list)

    @property
    def sweeps(self) -> int:
        return len(self.residuals)


@dataclass
class PolicyTable:
    pi: np.ndarray
    Q: np.ndarray
    index: object = None

    def to_json(self, values: ValueTable | None = None) -> dict:
        out = {"pi": self.pi.tolist(), "index": self.index.to_json() if self.index is not None else None}
        if values is not None:
            out.update(V=values.V.tolist(), gamma=values.gamma, residual=values.residual, sweeps=values.sweeps)
        return out


def greedy_from_q(Q: np.ndarray) -> np.ndarray:
    """Lowest action whose value is within rounding of the row maximum."""
    qmax = Q.max(axis=1, keepdims=True)
    tol = 1e-9 * np.maximum(np.abs(qmax), 1.0)
    return np.argmax(Q >= qmax - tol, axis=1)


def value_iteration(mdl: TabularModel, gamma: float = GAMMA, tol: float = TOL, max_sweeps: int = MAX_SWEEPS):
    """Bellman optimality backups until the max-norm change is at most ``tol``."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    reward = mdl.expected_reward
    V = np.zeros(mdl.n_states)
    residuals = []
    for _ in range(max_sweeps):
        V_new, Q = _accel.bellman_sweep(V, mdl.indptr, mdl.next_state, mdl.prob, reward, gamma, mdl.n_actions)
        res = float(np.max(np.abs(V_new - V))) if len(V) else 0.0
        residuals.append(res)
        V = V_new
        if res <= tol:
            break
    else:
        log.error("value iteration stopped after %d sweeps with residual %.3e", max_sweeps, residuals[-1])
        raise NonconvergenceGuard(f"residual {residuals[-1]:.3e} > {tol:.1e} after {max_sweeps} sweeps")
    _, Q = _accel.bellman_sweep(V, mdl.indptr, mdl.next_state, mdl.prob, reward, gamma, mdl.n_actions)
    return ValueTable(V, gamma, residuals[-1], residuals), PolicyTable(greedy_from_q(Q), Q, mdl.index)


_warned_unknown = set()


def greedy_action(pt: PolicyTable, idx, obs, ctx) -> int:
    s = idx.state_of(obs, ctx)
    if s is None or s >= len(pt.pi):
        key = (id(pt), "unknown")
        if key not in _warned_unknown:
            log.warning("unknown state for observation %s; falling back to action 0", obs)
            _warned_unknown.add(key)
        return 0
    return int(pt.pi[s])


def predict_reward_class(mdl: TabularModel, s: int | None, a: int) -> float:
    """Most probable reward value; ties and unknown states predict 0."""
    if s is None or s < 0 or s >= mdl.n_states:
        return 0.0
    probs = mdl.reward_probs[s * mdl.n_actions + a]
    best = probs.max()
    winners = mdl.reward_values[probs >= best - 1e-12]
    return 0.0 if 0.0 in winners else float(winners[0])
