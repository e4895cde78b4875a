"""Compiled inner loops for the absolute-error split search."""

import numpy as np
from numba import njit


@njit(cache=True)
def prefix_abs_dev(y):
    """Sum of absolute deviations from the median for every prefix of ``y``.

    ``out[k - 1]`` is ``sum |y[:k] - median(y[:k])|``. Uses the identity
    SAD = (sum of the top h values) - (sum of the bottom h values) with
    h = k // 2, evaluated with a Fenwick tree over value ranks.
    """
    n = y.shape[0]
    order = np.argsort(y, kind="mergesort")
    rank = np.empty(n, dtype=np.int64)
    for i in range(n):
        rank[order[i]] = i
    size = 1
    while size < n:
        size *= 2
    cnt = np.zeros(size + 1, dtype=np.int64)
    sm = np.zeros(size + 1, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    total = 0.0
    for k in range(1, n + 1):
        pos = rank[k - 1] + 1
        v = y[k - 1]
        total += v
        while pos <= size:
            cnt[pos] += 1
            sm[pos] += v
            pos += pos & (-pos)
        h = k // 2
        out[k - 1] = (total - _smallest_sum(cnt, sm, size, k - h)) - _smallest_sum(cnt, sm, size, h)
    return out


@njit(cache=True)
def _smallest_sum(cnt, sm, size, c):
    # sum of the c smallest inserted values; ranks are unique
    if c <= 0:
        return 0.0
    pos = 0
    acc = 0.0
    remaining = c
    step = size
    while step > 0:
        nxt = pos + step
        if nxt <= size and cnt[nxt] <= remaining:
            pos = nxt
            remaining -= cnt[nxt]
            acc += sm[nxt]
            if remaining == 0:
                break
        step //= 2
    return acc
