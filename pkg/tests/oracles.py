"""Independent reference computations used by several test modules."""

from itertools import combinations

import numpy as np


def sse(y):
    return float(np.sum((y - y.mean()) ** 2)) if len(y) else 0.0


def brute_force_root_split(X, is_cat, y):
    """Exhaustive best root split by SSE reduction.

    Numeric candidates are midpoints of adjacent distinct values; categorical
    candidates are all two-way partitions of the observed levels. Returns
    (gain, variable, threshold or None, set of optimal left-row partitions
    for that variable) or None when no split reduces SSE.
    """
    y = np.asarray(y, dtype=float)
    total = sse(y)
    tol = 1e-9 * max(total, 1.0)
    cands = []  # (gain, var, thr, left_rows)
    for j in range(X.shape[1]):
        x = X[:, j]
        if is_cat[j]:
            levels = sorted(set(x.tolist()))
            first, rest = levels[0], levels[1:]
            for r in range(0, len(rest) + 1):
                for extra in combinations(rest, r):
                    left_levels = {first, *extra}
                    if len(left_levels) == len(levels):
                        continue
                    mask = np.isin(x, list(left_levels))
                    g = total - sse(y[mask]) - sse(y[~mask])
                    cands.append((g, j, None, frozenset(np.flatnonzero(mask).tolist())))
        else:
            vals = np.unique(x)
            for a, b in zip(vals[:-1], vals[1:]):
                thr = (a + b) / 2
                mask = x <= thr
                g = total - sse(y[mask]) - sse(y[~mask])
                cands.append((g, j, thr, frozenset(np.flatnonzero(mask).tolist())))
    if not cands:
        return None
    best = max(c[0] for c in cands)
    if best <= tol:
        return None
    top = [c for c in cands if c[0] >= best - tol]
    var = min(c[1] for c in top)
    top = [c for c in top if c[1] == var]
    n = len(y)
    parts = set()
    for c in top:
        parts.add(c[3])
        parts.add(frozenset(range(n)) - c[3])
    thr = None if is_cat[var] else min(c[2] for c in top)
    return best, var, thr, parts


def root_partition(tree, X):
    """Training rows sent left by the root rule."""
    f = int(tree.feature[0])
    if tree.is_categorical[f]:
        bits = int(tree.left_mask[0])
        mask = np.array([(bits >> int(v)) & 1 == 1 for v in X[:, f]])
    else:
        mask = X[:, f] <= tree.threshold[0]
    return frozenset(np.flatnonzero(mask).tolist())


def random_split_problem(rng):
    """Small mixed-type dataset with many ties in x and y."""
    from conftest import categorical, make_dataset, numeric

    n = int(rng.integers(2, 31))
    q = int(rng.integers(1, 4))
    cols = []
    for j in range(q):
        if rng.random() < 0.4:
            L = int(rng.integers(2, 6))
            cols.append(categorical(f"c{j}", rng.integers(0, L, n), L))
        else:
            cols.append(numeric(f"x{j}", rng.integers(0, 6, n).astype(float)))
    y = rng.poisson(rng.uniform(0.5, 4), n)
    return make_dataset(cols, y)
