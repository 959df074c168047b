"""Hot inner loops with a numba implementation and a numpy fallback.

Each kernel exists twice: ``<name>_loop`` is written as explicit loops and
is compiled with numba, ``<name>_numpy`` is the vectorised fallback. The
public name points at one of them depending on ``_jit.USE_NUMBA``. Tests
compare the two paths directly through ``IMPLEMENTATIONS``.
"""
import numpy as np

from rnntest._jit import USE_NUMBA, njit


# -- hidden-state maxima -----------------------------------------------------

def _max_mask_loop(values, valid):
    n, e = values.shape
    out = np.zeros((n, e), dtype=np.bool_)
    for i in range(n):
        if not valid[i]:
            continue
        m = values[i, 0]
        for j in range(1, e):
            if values[i, j] > m:
                m = values[i, j]
        for j in range(e):
            if values[i, j] == m:
                out[i, j] = True
    return out


def _max_mask_numpy(values, valid):
    if values.shape[0] == 0:
        return np.zeros(values.shape, dtype=bool)
    out = values == values.max(axis=1, keepdims=True)
    out &= valid[:, None]
    return out


# -- section classification --------------------------------------------------

def _section_index_loop(u, edges):
    # half-open [v_{i-1}, v_i), last section closed
    n = u.shape[0]
    s = edges.shape[0] - 1
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        x = u[k]
        lo = 0
        hi = s
        # largest i with edges[i] <= x
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if edges[mid] <= x:
                lo = mid
            else:
                hi = mid
        out[k] = lo
    return out


def _section_index_numpy(u, edges):
    s = edges.shape[0] - 1
    idx = np.searchsorted(edges, u, side="right") - 1
    return np.clip(idx, 0, s - 1).astype(np.int64)


# -- edit distance -----------------------------------------------------------

def _levenshtein_loop(a, b):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def _levenshtein_numpy(a, b):
    m = b.shape[0]
    steps = np.arange(m + 1, dtype=np.int64)
    prev = steps.copy()
    for i in range(1, a.shape[0] + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        cur[1:] = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        # insertions: cur[j] = min(cur[j], cur[j-1] + 1), as a running minimum
        prev = np.minimum.accumulate(cur - steps) + steps
    return prev[m]


# -- nearest-embedding search along a scaled gradient ------------------------

def _nearest_scan_loop(embs, current, grad, max_scale):
    v, d = embs.shape
    for scale in range(1, max_scale + 1):
        best = -1
        best_dist = np.inf
        for tok in range(v):
            acc = 0.0
            for k in range(d):
                diff = (embs[current, k] + grad[k] * scale) - embs[tok, k]
                acc += diff * diff
            dist = np.sqrt(acc)
            if dist < best_dist:
                best_dist = dist
                best = tok
        if best != current:
            return best, scale
    return current, 0


def _nearest_scan_numpy(embs, current, grad, max_scale):
    scales = np.arange(1, max_scale + 1, dtype=np.float64)
    moved = embs[current][None, :] + grad[None, :] * scales[:, None]
    diff = moved[:, None, :] - embs[None, :, :]
    dist = np.sqrt(np.einsum("svd,svd->sv", diff, diff))
    nearest = dist.argmin(axis=1)
    hits = np.flatnonzero(nearest != current)
    if hits.size == 0:
        return current, 0
    s = int(hits[0])
    return int(nearest[s]), s + 1


IMPLEMENTATIONS = {
    "numpy": {
        "max_mask": _max_mask_numpy,
        "section_index": _section_index_numpy,
        "levenshtein": _levenshtein_numpy,
        "nearest_scan": _nearest_scan_numpy,
    },
}

if USE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "max_mask": njit(_max_mask_loop),
        "section_index": njit(_section_index_loop),
        "levenshtein": njit(_levenshtein_loop),
        "nearest_scan": njit(_nearest_scan_loop),
    }
    BACKEND = "numba"
else:
    BACKEND = "numpy"

_active = IMPLEMENTATIONS[BACKEND]


def max_mask(values, valid):
    """Boolean mask of entries equal to their row maximum, rows gated by ``valid``."""
    return _active["max_mask"](np.ascontiguousarray(values, dtype=np.float64),
                               np.ascontiguousarray(valid, dtype=np.bool_))


def section_index(u, edges):
    """Section of each value for ascending ``edges``; last section is closed."""
    return _active["section_index"](np.ascontiguousarray(u, dtype=np.float64),
                                    np.ascontiguousarray(edges, dtype=np.float64))


def levenshtein(a, b):
    """Unit-cost edit distance between two integer sequences."""
    return int(_active["levenshtein"](np.ascontiguousarray(a, dtype=np.int64),
                                      np.ascontiguousarray(b, dtype=np.int64)))


def nearest_scan(embs, current, grad, max_scale):
    """Return ``(token, scale)`` of the first scaled step whose nearest row moves.

    ``(current, 0)`` means no scale in ``1..max_scale`` left ``current``.
    Distance ties go to the lowest row index.
    """
    tok, scale = _active["nearest_scan"](np.ascontiguousarray(embs, dtype=np.float64), int(current),
                                         np.ascontiguousarray(grad, dtype=np.float64), int(max_scale))
    return int(tok), int(scale)
