"""Independent reference implementations used by the tests.

These deliberately avoid the package's fast paths: splits are found by
enumerating every (feature, midpoint) pair and evaluating impurities on the
masked subsets directly.
"""

import math

import numpy as np


def variance(y):
    y = np.asarray(y, dtype=float)
    return float(np.var(y))


def mad(y):
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.abs(y - np.median(y))))


def exhaustive_split(X, y, min_leaf=1, criterion="squared_error", features=None, rtol=1e-12):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    imp = variance if criterion == "squared_error" else mad
    n = y.size
    if y.max() == y.min():
        return None
    parent = imp(y)
    cands = []
    for f in (range(X.shape[1]) if features is None else features):
        vals = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = (lo + hi) / 2
            if t >= hi:
                t = lo
            left = X[:, f] <= t
            nl = int(left.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            gain = parent - (nl / n * imp(y[left]) + (n - nl) / n * imp(y[~left]))
            cands.append((f, t, gain))
    if not cands:
        return None
    gmax = max(g for _, _, g in cands)
    if not gmax > rtol * parent:
        return None
    tied = [c for c in cands if c[2] >= gmax - rtol * abs(gmax)]
    return min(tied, key=lambda c: (c[0], c[1]))


def scan_quantile(values, q):
    """Smallest sorted value whose empirical CDF reaches q."""
    s = sorted(values)
    n = len(s)
    for i, v in enumerate(s, start=1):
        if i / n >= q:
            return v
    return s[-1]


def entropy_direct(p):
    return -sum(x * math.log(x, 2) for x in p if x > 0)


def gini_direct(p):
    return 1.0 - sum(x * x for x in p)
