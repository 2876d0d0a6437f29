"""Binary latch memory units and dataset augmentation with their traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .errors import DimensionMismatch, SchemaViolation
from .infotheory import BallEvent
from .trajectory import INTEGER_GRID, AttributeSpec, Dataset


@dataclass(frozen=True)
class MemoryUnit:
    id: int
    event: BallEvent

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "attr": self.event.attr,
            "center": list(self.event.center),
            "radius": self.event.radius,
        }

    @classmethod
    def from_json(cls, obj) -> "MemoryUnit":
        return cls(int(obj["id"]), BallEvent(int(obj["attr"]), obj["center"], float(obj["radius"])))


@dataclass(frozen=True)
class MemoryState:
    bits: tuple

    @classmethod
    def initial(cls, m: int) -> "MemoryState":
        return cls((0,) * m)

    def as_int(self) -> int:
        """Bits packed little-endian (unit 0 is the lowest bit)."""
        return sum(b << k for k, b in enumerate(self.bits))


def check_units(units: Sequence[MemoryUnit]) -> None:
    ids = [u.id for u in units]
    if ids != list(range(len(units))):
        raise SchemaViolation(f"memory unit ids must be dense 0..m-1, got {ids}")


def memory_step(s: MemoryState, obs, units: Sequence[MemoryUnit]) -> MemoryState:
    """Latch update: a bit turns on when its attribute is inside the ball and stays on."""
    if len(s.bits) != len(units):
        raise DimensionMismatch(f"state has {len(s.bits)} bits for {len(units)} units")
    bits = []
    for bit, u in zip(s.bits, units):
        if bit:
            bits.append(1)
            continue
        o = np.asarray(obs[u.event.attr], dtype=np.float64).reshape(-1)
        if o.shape != u.event.center_array.shape:
            raise DimensionMismatch(f"unit {u.id}: observation dim {o.shape[0]} != center dim {len(u.event.center)}")
        bits.append(int(np.linalg.norm(o - u.event.center_array) <= u.event.radius))
    return MemoryState(tuple(bits))


def memory_traces(d: Dataset, units: Sequence[MemoryUnit]) -> np.ndarray:
    """Latch values of every unit, shape ``(m, L, h + 1)``; step 0 is all-zero."""
    out = np.zeros((len(units), d.L, d.h + 1), dtype=np.int8)
    for k, u in enumerate(units):
        out[k] = _accel.latch_trace(d.obs[u.event.attr], u.event.center_array, u.event.radius)
    return out


def memory_attribute(k: int) -> AttributeSpec:
    return AttributeSpec(f"mem_{k}", 1, (0.0,), (1.0,), INTEGER_GRID)


def n_memory_columns(d: Dataset) -> int:
    return sum(1 for a in d.schema.attributes if a.name.startswith("mem_"))


def augment_dataset(d: Dataset, units: Sequence[MemoryUnit]) -> Dataset:
    """Append one binary ``mem_k`` attribute per unit, holding its latch trace.

    Unit ids continue after any memory columns already present, so augmenting
    twice with disjoint unit lists equals augmenting once with their concatenation.
    """
    if not units:
        return d
    start = n_memory_columns(d)
    traces = memory_traces(d, units)
    extra = [memory_attribute(start + k) for k in range(len(units))]
    obs = d.obs + tuple(tr[..., None].astype(np.float64) for tr in traces)
    return Dataset(d.schema.extended(extra), obs, d.actions, dict(d.meta))
