"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--episodes 500]

Inputs match one discovery run on the painting task (500 episodes of 100
steps) and one value-iteration sweep on a memory-augmented painting model.
Each kernel is checked for agreement before it is timed.
"""

import argparse
import time

import numpy as np

from cmrl import _accel
from cmrl.planner import AugmentedStateIndex, fit_model
from cmrl.sim import PaintingConfig, collect_random


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (includes jit compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12, equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=500)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return

    cfg = PaintingConfig()
    d = collect_random(cfg, args.episodes, 0)
    points = np.ascontiguousarray(d.obs[0])
    center = np.array([0.3, 0.2, 0.1])
    mdl = fit_model(d, AugmentedStateIndex(d.schema, cfg.task.trigger_units()))
    V = np.random.default_rng(0).random(mdl.n_states)
    sample = np.ascontiguousarray(points.reshape(-1, 3)[:5000])
    splits = np.array([0, 3], dtype=np.int64)

    cases = [
        ("running_min_distance", (points, center)),
        ("latch_trace", (points, center, 1.0)),
        ("kde_sum", (sample, center, splits, 1.0)),
        ("bellman_sweep", (V, mdl.indptr, mdl.next_state, mdl.prob, mdl.expected_reward, 0.99, mdl.n_actions)),
    ]
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, inputs in cases:
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        ok = agree(f_np(*inputs), f_nb(*inputs))
        t_np = best_of(f_np, inputs, args.repeat)
        t_nb = best_of(f_nb, inputs, args.repeat)
        print(f"{name:<22}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>9.1f}  {ok}")


if __name__ == "__main__":
    main()
