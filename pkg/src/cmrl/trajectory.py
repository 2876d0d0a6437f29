"""Attribute schema, exploration datasets and their JSON Lines file format.

A dataset holds ``L`` episodes of ``h + 1`` steps. Each step carries one
observation vector per attribute plus the action taken at that step. The
reward is one of the attributes (``schema.reward_attr``), so there is no
separate reward channel.

Internally observations are kept as one ``(L, h + 1, dim)`` float array per
attribute; :class:`Step` objects are only materialized on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyDataset, ParseError, SchemaViolation

CONTINUOUS = "continuous"
INTEGER_GRID = "integer-grid"
KINDS = (CONTINUOUS, INTEGER_GRID)


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    dim: int
    lower: tuple
    upper: tuple
    kind: str = INTEGER_GRID

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(float(x) for x in self.upper))
        if self.dim < 1:
            raise SchemaViolation(f"attribute {self.name!r}: dim must be positive")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise SchemaViolation(f"attribute {self.name!r}: bounds do not match dim={self.dim}")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise SchemaViolation(f"attribute {self.name!r}: lower must be < upper")
        if self.kind not in KINDS:
            raise SchemaViolation(f"attribute {self.name!r}: unknown kind {self.kind!r}")

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def radius(self) -> float:
        """Half the diagonal of the domain box."""
        return 0.5 * float(np.linalg.norm(self.upper_array - self.lower_array))

    @property
    def is_grid(self) -> bool:
        return self.kind == INTEGER_GRID

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "lower": [_num(x) for x in self.lower],
            "upper": [_num(x) for x in self.upper],
            "kind": self.kind,
        }


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple
    action_count: int
    reward_attr: int

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise SchemaViolation("schema needs at least one attribute")
        if self.action_count < 1:
            raise SchemaViolation("action_count must be positive")
        if not 0 <= self.reward_attr < len(self.attributes):
            raise SchemaViolation(f"reward_attr {self.reward_attr} is not a valid attribute index")
        if self.attributes[self.reward_attr].dim != 1:
            raise SchemaViolation("the reward attribute must be one-dimensional")

    @property
    def n(self) -> int:
        return len(self.attributes)

    def __getitem__(self, i: int) -> AttributeSpec:
        return self.attributes[i]

    def index_of(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise KeyError(name)

    def extended(self, extra: Iterable[AttributeSpec]) -> "AttributeSchema":
        return AttributeSchema(self.attributes + tuple(extra), self.action_count, self.reward_attr)

    def to_json(self) -> dict:
        return {
            "attributes": [a.to_json() for a in self.attributes],
            "action_count": self.action_count,
            "reward_attr": self.reward_attr,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttributeSchema":
        attrs = [
            AttributeSpec(a["name"], int(a["dim"]), a["lower"], a["upper"], a.get("kind", INTEGER_GRID))
            for a in obj["attributes"]
        ]
        return cls(tuple(attrs), int(obj["action_count"]), int(obj["reward_attr"]))


class Step(NamedTuple):
    obs: tuple
    action: int


class Samples(NamedTuple):
    """Row-major ``(episode, step)`` ordered samples of one attribute."""

    episode: np.ndarray
    step: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.episode)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of fixed-horizon episodes.

    ``obs[i]`` has shape ``(L, h + 1, dim_i)``; ``actions`` has shape ``(L, h + 1)``.
    """

    schema: AttributeSchema
    obs: tuple
    actions: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        obs = []
        for a in self.obs:
            arr = np.array(a, dtype=np.float64)
            arr.setflags(write=False)
            obs.append(arr)
        acts = np.array(self.actions, dtype=np.int64)
        acts.setflags(write=False)
        object.__setattr__(self, "obs", tuple(obs))
        object.__setattr__(self, "actions", acts)
        if len(self.obs) != self.schema.n:
            raise SchemaViolation(f"expected {self.schema.n} attribute arrays, got {len(self.obs)}")
        if acts.ndim != 2:
            raise SchemaViolation("actions must be a (L, h+1) array")
        for i, (spec, arr) in enumerate(zip(self.schema.attributes, self.obs)):
            if arr.shape != acts.shape + (spec.dim,):
                raise SchemaViolation(
                    f"attribute {i} ({spec.name}) has shape {arr.shape}, expected {acts.shape + (spec.dim,)}"
                )

    @property
    def L(self) -> int:
        return self.actions.shape[0]

    @property
    def h(self) -> int:
        return self.actions.shape[1] - 1

    @property
    def rewards(self) -> np.ndarray:
        return self.obs[self.schema.reward_attr][..., 0]

    def step(self, l: int, t: int) -> Step:
        return Step(tuple(a[l, t].copy() for a in self.obs), int(self.actions[l, t]))

    def episode(self, l: int) -> list:
        return [self.step(l, t) for t in range(self.h + 1)]

    def subset(self, episodes) -> "Dataset":
        idx = np.asarray(episodes, dtype=np.int64)
        return Dataset(self.schema, tuple(a[idx] for a in self.obs), self.actions[idx], dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.actions, other.actions)
            and all(np.array_equal(a, b) for a, b in zip(self.obs, other.obs))
        )

    __hash__ = None

    @classmethod
    def from_episodes(cls, schema: AttributeSchema, episodes: Sequence[Sequence[Step]], meta=None) -> "Dataset":
        """Build a dataset from nested steps, validating it on the way."""
        if len(episodes) == 0:
            raise EmptyDataset("dataset has no episodes")
        lengths = {len(ep) for ep in episodes}
        if len(lengths) != 1:
            for l, ep in enumerate(episodes):
                if len(ep) != len(episodes[0]):
                    raise SchemaViolation(
                        f"episode {l} has {len(ep)} steps, episode 0 has {len(episodes[0])} (ragged horizon)"
                    )
        n_steps = lengths.pop()
        if n_steps < 1:
            raise SchemaViolation("episodes must contain at least one step")
        obs = [np.empty((len(episodes), n_steps, a.dim)) for a in schema.attributes]
        actions = np.empty((len(episodes), n_steps), dtype=np.int64)
        for l, ep in enumerate(episodes):
            for t, st in enumerate(ep):
                if len(st.obs) != schema.n:
                    raise SchemaViolation(f"episode {l} step {t}: expected {schema.n} attributes, got {len(st.obs)}")
                for i, (spec, v) in enumerate(zip(schema.attributes, st.obs)):
                    v = np.asarray(v, dtype=np.float64).reshape(-1)
                    if v.shape != (spec.dim,):
                        raise SchemaViolation(
                            f"episode {l} step {t} attribute {i} ({spec.name}): expected dim {spec.dim}"
                        )
                    obs[i][l, t] = v
                actions[l, t] = st.action
        d = cls(schema, tuple(obs), actions, dict(meta or {}))
        validate_dataset(d)
        return d


def validate_dataset(d: Dataset) -> None:
    """Raise unless every schema invariant holds for ``d``."""
    if d.L == 0:
        raise EmptyDataset("dataset has no episodes")
    if d.h < 0:
        raise SchemaViolation("episodes must contain at least one step")
    bad = np.argwhere((d.actions < 0) | (d.actions >= d.schema.action_count))
    if len(bad):
        l, t = bad[0]
        raise SchemaViolation(
            f"episode {l} step {t}: action {d.actions[l, t]} outside [0, {d.schema.action_count})"
        )
    for i, (spec, arr) in enumerate(zip(d.schema.attributes, d.obs)):
        out = ~np.isfinite(arr) | (arr < spec.lower_array) | (arr > spec.upper_array)
        if spec.is_grid:
            out |= arr != np.round(arr)
        bad = np.argwhere(out)
        if len(bad):
            l, t, j = bad[0]
            raise SchemaViolation(
                f"episode {l} step {t} attribute {i} ({spec.name}) component {j}: "
                f"value {arr[l, t, j]!r} violates [{spec.lower[j]}, {spec.upper[j]}] ({spec.kind})"
            )


def attribute_samples(d: Dataset, i: int, t_range=None) -> Samples:
    """All values of attribute ``i`` in ``(l, t)`` order.

    ``t_range`` is an inclusive ``(first, last)`` step interval.
    """
    if not 0 <= i < d.schema.n:
        raise IndexError(f"attribute index {i} out of range for {d.schema.n} attributes")
    t0, t1 = (0, d.h) if t_range is None else (int(t_range[0]), int(t_range[1]))
    if not 0 <= t0 <= t1 <= d.h:
        raise IndexError(f"step interval [{t0}, {t1}] outside [0, {d.h}]")
    steps = np.arange(t0, t1 + 1)
    ls, ts = np.meshgrid(np.arange(d.L), steps, indexing="ij")
    values = d.obs[i][:, t0 : t1 + 1].reshape(-1, d.schema[i].dim)
    return Samples(ls.ravel(), ts.ravel(), values)


# --- JSON Lines I/O -------------------------------------------------------


def _num(x: float):
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return int(x)
    return x


def _row(values: np.ndarray, grid: bool) -> list:
    if grid:
        return [int(v) for v in values]
    return [float(v) for v in values]


def save_dataset(d: Dataset, path) -> None:
    """Write ``d`` as JSON Lines: a schema header, then one episode per line."""
    if d.L == 0:
        raise EmptyDataset("refusing to save a dataset without episodes")
    validate_dataset(d)
    header = d.schema.to_json()
    header["horizon"] = d.h
    if d.meta:
        header["meta"] = d.meta
    grid = [a.is_grid for a in d.schema.attributes]
    lines = [json.dumps(header, sort_keys=True)]
    for l in range(d.L):
        steps = []
        for t in range(d.h + 1):
            steps.append(
                {
                    "obs": [_row(arr[l, t], g) for arr, g in zip(d.obs, grid)],
                    "action": int(d.actions[l, t]),
                }
            )
        lines.append(json.dumps({"steps": steps}, separators=(",", ":")))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    raw = [(n + 1, s) for n, s in enumerate(raw) if s.strip()]
    if not raw:
        raise ParseError("empty file", line=1)
    lineno, text = raw[0]
    try:
        header = json.loads(text)
        schema = AttributeSchema.from_json(header)
        horizon = int(header["horizon"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad schema header: {exc}", line=lineno) from exc
    if len(raw) == 1:
        raise EmptyDataset("dataset file has no episodes")
    episodes = []
    for lineno, text in raw[1:]:
        try:
            obj = json.loads(text)
            steps = [Step(tuple(st["obs"]), int(st["action"])) for st in obj["steps"]]
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"missing or malformed field {exc}", line=lineno) from exc
        if len(steps) != horizon + 1:
            raise SchemaViolation(f"line {lineno}: episode has {len(steps)} steps, header says horizon {horizon}")
        episodes.append(steps)
    return Dataset.from_episodes(schema, episodes, meta=header.get("meta"))

