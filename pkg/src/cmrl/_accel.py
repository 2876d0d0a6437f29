"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``CMRL_DISABLE_JIT`` is unset
(or set to ``0``). Both paths are importable directly as ``<name>_numba`` and
``<name>_numpy`` so tests and the benchmark can compare them.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CMRL_DISABLE_JIT", "0") in ("", "0")


# --- running minimum distance to a ball center ---------------------------
#
# For points of shape (L, T, dim) and a center c, returns dmin[l, t] =
# min_{t' < t} |points[l, t'] - c| and the argmin t' (first occurrence),
# with dmin[:, 0] = inf and arg[:, 0] = -1.


def running_min_distance_numpy(points, center):
    L, T, _ = points.shape
    dist = np.sqrt(((points - center) ** 2).sum(axis=2))
    run = np.minimum.accumulate(dist, axis=1)
    prev = np.concatenate([np.full((L, 1), np.inf), run[:, :-1]], axis=1)
    steps = np.broadcast_to(np.arange(T), (L, T))
    is_new = dist < prev
    arg = np.maximum.accumulate(np.where(is_new, steps, 0), axis=1)
    dmin = np.empty((L, T))
    dmin[:, 0] = np.inf
    dmin[:, 1:] = run[:, :-1]
    argmin = np.empty((L, T), dtype=np.int64)
    argmin[:, 0] = -1
    argmin[:, 1:] = arg[:, :-1]
    return dmin, argmin


def _running_min_distance_loop(points, center):
    L, T, D = points.shape
    dmin = np.empty((L, T))
    argmin = np.empty((L, T), dtype=np.int64)
    for l in range(L):
        best = np.inf
        best_t = -1
        for t in range(T):
            dmin[l, t] = best
            argmin[l, t] = best_t
            s = 0.0
            for k in range(D):
                diff = points[l, t, k] - center[k]
                s += diff * diff
            d = np.sqrt(s)
            if d < best:
                best = d
                best_t = t
    return dmin, argmin


# --- latch traces ----------------------------------------------------------
#
# trace[l, 0] = 0; trace[l, t + 1] = trace[l, t] or |points[l, t] - c| <= r.


def latch_trace_numpy(points, center, radius):
    L, T, _ = points.shape
    inside = np.sqrt(((points - center) ** 2).sum(axis=2)) <= radius
    trace = np.zeros((L, T), dtype=np.int8)
    trace[:, 1:] = np.logical_or.accumulate(inside, axis=1)[:, :-1]
    return trace


def _latch_trace_loop(points, center, radius):
    L, T, D = points.shape
    trace = np.zeros((L, T), dtype=np.int8)
    for l in range(L):
        bit = 0
        for t in range(T):
            trace[l, t] = bit
            if bit == 0:
                s = 0.0
                for k in range(D):
                    diff = points[l, t, k] - center[k]
                    s += diff * diff
                if np.sqrt(s) <= radius:
                    bit = 1
    return trace


# --- exponential-kernel sum -------------------------------------------------
#
# sum_n exp(-w * sum_v |query[v] - data[n, v]|_2), variables delimited by
# column offsets ``splits`` (length V + 1).


def kde_sum_numpy(data, query, splits, w):
    expo = np.zeros(data.shape[0])
    for v in range(len(splits) - 1):
        a, b = splits[v], splits[v + 1]
        expo += np.sqrt(((data[:, a:b] - query[a:b]) ** 2).sum(axis=1))
    return float(np.exp(-w * expo).sum())


def _kde_sum_loop(data, query, splits, w):
    total = 0.0
    for n in range(data.shape[0]):
        expo = 0.0
        for v in range(splits.shape[0] - 1):
            s = 0.0
            for k in range(splits[v], splits[v + 1]):
                diff = query[k] - data[n, k]
                s += diff * diff
            expo += np.sqrt(s)
        total += np.exp(-w * expo)
    return total


# --- Bellman optimality sweep over a sparse model ------------------------
#
# (state, action) pair p = s * A + a owns next states next_state[indptr[p]:indptr[p+1]]
# with probabilities prob[...] and expected reward reward[p].


def bellman_sweep_numpy(values, indptr, next_state, prob, reward, gamma, n_actions):
    n_pairs = reward.shape[0]
    counts = np.diff(indptr)
    owner = np.repeat(np.arange(n_pairs), counts)
    q = reward + gamma * np.bincount(owner, weights=prob * values[next_state], minlength=n_pairs)
    q = q.reshape(-1, n_actions)
    return q.max(axis=1), q


def _bellman_sweep_loop(values, indptr, next_state, prob, reward, gamma, n_actions):
    n_states = reward.shape[0] // n_actions
    q = np.empty((n_states, n_actions))
    out = np.empty(n_states)
    for s in range(n_states):
        best = -np.inf
        for a in range(n_actions):
            p = s * n_actions + a
            acc = 0.0
            for j in range(indptr[p], indptr[p + 1]):
                acc += prob[j] * values[next_state[j]]
            v = reward[p] + gamma * acc
            q[s, a] = v
            if v > best:
                best = v
        out[s] = best
    return out, q


if HAVE_NUMBA:
    running_min_distance_numba = njit(cache=True)(_running_min_distance_loop)
    latch_trace_numba = njit(cache=True)(_latch_trace_loop)
    kde_sum_numba = njit(cache=True)(_kde_sum_loop)
    bellman_sweep_numba = njit(cache=True)(_bellman_sweep_loop)
else:  # pragma: no cover
    running_min_distance_numba = _running_min_distance_loop
    latch_trace_numba = _latch_trace_loop
    kde_sum_numba = _kde_sum_loop
    bellman_sweep_numba = _bellman_sweep_loop


def _pick(name):
    return globals()[f"{name}_{'numba' if USE_NUMBA else 'numpy'}"]


def running_min_distance(points, center):
    points = np.ascontiguousarray(points, dtype=np.float64)
    center = np.ascontiguousarray(center, dtype=np.float64)
    return _pick("running_min_distance")(points, center)


def latch_trace(points, center, radius):
    points = np.ascontiguousarray(points, dtype=np.float64)
    center = np.ascontiguousarray(center, dtype=np.float64)
    return _pick("latch_trace")(points, center, float(radius))


def kde_sum(data, query, splits, w):
    data = np.ascontiguousarray(data, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    splits = np.ascontiguousarray(splits, dtype=np.int64)
    return float(_pick("kde_sum")(data, query, splits, float(w)))


def bellman_sweep(values, indptr, next_state, prob, reward, gamma, n_actions):
    return _pick("bellman_sweep")(values, indptr, next_state, prob, reward, float(gamma), int(n_actions))


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
