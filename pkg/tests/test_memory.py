import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmrl.errors import DimensionMismatch, SchemaViolation
from cmrl.infotheory import BallEvent
from cmrl.memory import (
    MemoryState,
    MemoryUnit,
    augment_dataset,
    check_units,
    memory_step,
    memory_traces,
)
from cmrl.sim import PaintingConfig

from conftest import latch_line
from oracles import latch_scan


def unit(k, center, r, attr=0):
    return MemoryUnit(k, BallEvent(attr, center, r))


def roll(path, units):
    s = MemoryState.initial(len(units))
    out = [s.bits]
    for p in path:
        s = memory_step(s, {0: p}, units)
        out.append(s.bits)
    return out


def test_never_inside_stays_zero():
    units = [unit(0, [0.0, 0.0], 1.0), unit(1, [10.0, 10.0], 0.5)]
    path = [[5.0, 5.0 + 0.01 * t] for t in range(100)]
    assert all(b == (0, 0) for b in roll(path, units))


def test_entering_at_step_five_latches_for_good():
    u = [unit(0, [3.0], 0.5)]
    path = [[0.0]] * 5 + [[3.0]] + [[0.0]] * 10
    bits = [b[0] for b in roll(path, u)]
    # bits[t] is the state after observing path[:t]
    assert bits[:6] == [0] * 6 and all(bits[6:])


def test_boundary_is_inclusive():
    u = [unit(0, [0.0, 0.0], 5.0)]
    assert memory_step(MemoryState.initial(1), {0: [3.0, 4.0]}, u).bits == (1,)
    assert memory_step(MemoryState.initial(1), {0: [3.0, 4.0001]}, u).bits == (0,)


def test_set_bits_are_idempotent():
    u = [unit(0, [0.0], 1.0)]
    s = MemoryState((1,))
    for p in ([50.0], [0.0], [-50.0]):
        s = memory_step(s, {0: p}, u)
        assert s.bits == (1,)


def test_dimension_mismatch():
    u = [unit(0, [0.0, 0.0], 1.0)]
    with pytest.raises(DimensionMismatch):
        memory_step(MemoryState.initial(1), {0: [1.0]}, u)
    with pytest.raises(DimensionMismatch):
        memory_step(MemoryState.initial(2), {0: [1.0, 1.0]}, u)


def test_unit_ids_must_be_dense():
    check_units([unit(0, [0.0], 1.0), unit(1, [1.0], 1.0)])
    with pytest.raises(SchemaViolation):
        check_units([unit(0, [0.0], 1.0), unit(2, [1.0], 1.0)])


def test_packing_is_little_endian():
    assert MemoryState((1, 0, 1)).as_int() == 5


def test_json_round_trip():
    u = unit(3, [1.5, 2.0], 0.75)
    assert MemoryUnit.from_json(u.to_json()) == u


def test_zero_units_is_identity():
    d = latch_line(L=10)
    assert augment_dataset(d, []) is d


def test_augment_preserves_original_columns_and_names():
    d = latch_line(L=20)
    a = augment_dataset(d, [unit(0, [5.0], 0.5)])
    assert (a.L, a.h) == (d.L, d.h)
    assert a.schema.n == d.schema.n + 1 and a.schema[2].name == "mem_0"
    for x, y in zip(a.obs[: d.schema.n], d.obs):
        assert np.array_equal(x, y)
    np.testing.assert_array_equal(a.actions, d.actions)
    # the latch-line reward is exactly this memory
    np.testing.assert_array_equal(a.obs[2], d.obs[1])


def test_augment_composes():
    d = latch_line(L=15)
    u1 = [unit(0, [2.0], 0.5)]
    u2 = [unit(0, [7.0], 1.0), unit(1, [4.0], 0.0)]
    twice = augment_dataset(augment_dataset(d, u1), u2)
    once = augment_dataset(d, u1 + [unit(1, [7.0], 1.0), unit(2, [4.0], 0.0)])
    assert twice == once
    assert [a.name for a in twice.schema.attributes[2:]] == ["mem_0", "mem_1", "mem_2"]


@given(st.integers(0, 1000), st.floats(0, 3), st.integers(0, 9))
def test_traces_are_monotone_and_match_the_scan(seed, r, c):
    d = latch_line(L=5, h=20, seed=seed)
    tr = memory_traces(d, [unit(0, [float(c)], r)])[0]
    assert np.all(np.diff(tr, axis=1) >= 0)
    np.testing.assert_array_equal(tr, latch_scan(d.obs[0].tolist(), [float(c)], r))


def test_traces_match_rolled_memory_step():
    d = latch_line(L=6, h=25, seed=3)
    units = [unit(0, [5.0], 0.5), unit(1, [1.0], 1.0)]
    tr = memory_traces(d, units)
    for l in range(d.L):
        rolled = roll([d.obs[0][l, t] for t in range(d.h)], units)
        np.testing.assert_array_equal(tr[:, l, :].T, np.array(rolled))


def test_painting_memory_flips_right_after_the_first_bucket_visit(painting_small):
    d = painting_small
    bucket = np.array(PaintingConfig().bucket_cell, dtype=float)
    a = augment_dataset(d, [unit(0, bucket, 0.5)])
    mem = a.obs[2][..., 0]
    visited = 0
    for l in range(d.L):
        hits = [t for t in range(d.h + 1) if np.array_equal(d.obs[0][l, t], bucket)]
        expect = np.zeros(d.h + 1)
        if hits and hits[0] < d.h:
            expect[hits[0] + 1:] = 1
            visited += 1
        np.testing.assert_array_equal(mem[l], expect)
    assert visited > 0
