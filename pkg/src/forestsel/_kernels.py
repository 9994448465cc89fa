"""Compiled inner loops for tree growth, routing and permutation scoring.

Trees are flat arrays indexed by node id; node 0 is the root and
``feature[i] == -1`` marks a leaf. Categorical splits keep two 64-bit level
masks: levels observed on the left and on the right at training time.
Levels in neither mask go to the child with the larger training count.
"""

import numpy as np
from numba import njit

# relative tolerance for comparing split gains; equal-within-tolerance
# candidates keep the earlier one (lower variable index, lower threshold)
GAIN_RTOL = 1e-10
MAX_MASK_LEVELS = 64
# nodes holding more than 1/SCAN_RATIO of the rows scan presorted columns
SCAN_RATIO = 16


@njit(cache=True, nogil=True)
def _level_bit(lvl):
    return np.uint64(1) << np.uint64(lvl)


@njit(cache=True, nogil=True)
def grow(X, order, is_cat, y, sample, min_node_size, mtry, unif):
    n = sample.size
    q = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    lmask = np.zeros(cap, np.uint64)
    rmask = np.zeros(cap, np.uint64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    gain_out = np.zeros(cap)

    n_rows = X.shape[0]
    idx = sample.copy()
    buf = np.empty(n, np.int64)
    mult = np.zeros(n_rows, np.int64)
    feats = np.arange(q)
    cand = np.empty(q, np.int64)
    lvl_cnt = np.zeros(MAX_MASK_LEVELS, np.int64)
    lvl_sum = np.zeros(MAX_MASK_LEVELS)

    stack_node = np.empty(cap, np.int64)
    stack_s = np.empty(cap, np.int64)
    stack_e = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n
    top = 1
    n_nodes = 1
    draw = 0

    while top > 0:
        top -= 1
        node = stack_node[top]
        s = stack_s[top]
        e = stack_e[top]
        cnt = e - s
        total = 0.0
        for i in range(s, e):
            total += y[idx[i]]
        mean = total / cnt
        sse = 0.0
        for i in range(s, e):
            d = y[idx[i]] - mean
            sse += d * d
        value[node] = mean
        count[node] = cnt
        if cnt < min_node_size or cnt < 2 or sse <= 0.0 or q == 0:
            continue
        tol = GAIN_RTOL * sse

        # candidate features: all, or a uniform subset via partial Fisher-Yates
        if mtry >= q:
            for j in range(q):
                cand[j] = j
            n_cand = q
        else:
            for j in range(mtry):
                r = j + int(unif[draw] * (q - j))
                draw += 1
                if r >= q:
                    r = q - 1
                tmp = feats[j]
                feats[j] = feats[r]
                feats[r] = tmp
            for j in range(mtry):
                cand[j] = feats[j]
            cand[:mtry].sort()
            n_cand = mtry

        yc = np.empty(cnt)
        for i in range(cnt):
            yc[i] = y[idx[s + i]] - mean
        tot_c = 0.0
        for i in range(cnt):
            tot_c += yc[i]
        base = tot_c * tot_c / cnt

        best_gain = tol
        best_f = -1
        best_thr = 0.0
        best_lm = np.uint64(0)
        best_rm = np.uint64(0)
        marked = False

        for ci in range(n_cand):
            f = cand[ci]
            if is_cat[f]:
                lvl_cnt[:] = 0
                lvl_sum[:] = 0.0
                for i in range(cnt):
                    lv = int(X[idx[s + i], f])
                    lvl_cnt[lv] += 1
                    lvl_sum[lv] += yc[i]
                n_obs = 0
                for lv in range(MAX_MASK_LEVELS):
                    if lvl_cnt[lv] > 0:
                        n_obs += 1
                if n_obs < 2:
                    continue
                levels = np.empty(n_obs, np.int64)
                means = np.empty(n_obs)
                k = 0
                for lv in range(MAX_MASK_LEVELS):
                    if lvl_cnt[lv] > 0:
                        levels[k] = lv
                        means[k] = lvl_sum[lv] / lvl_cnt[lv]
                        k += 1
                lorder = np.argsort(means, kind="mergesort")
                nl = 0
                sl = 0.0
                for k in range(n_obs - 1):
                    lv = levels[lorder[k]]
                    nl += lvl_cnt[lv]
                    sl += lvl_sum[lv]
                    nr = cnt - nl
                    sr = tot_c - sl
                    g = sl * sl / nl + sr * sr / nr - base
                    if g > best_gain + (tol if best_f >= 0 else 0.0):
                        best_gain = g
                        best_f = f
                        lm = np.uint64(0)
                        for kk in range(k + 1):
                            lm |= _level_bit(levels[lorder[kk]])
                        rm = np.uint64(0)
                        for kk in range(k + 1, n_obs):
                            rm |= _level_bit(levels[lorder[kk]])
                        best_lm = lm
                        best_rm = rm
            elif cnt * SCAN_RATIO > n_rows:
                # large node: walk the presorted column, weighting rows by multiplicity
                if not marked:
                    for i in range(s, e):
                        mult[idx[i]] += 1
                    marked = True
                col_order = order[f]
                nl = 0
                sl = 0.0
                a = 0.0
                for j in range(n_rows):
                    r = col_order[j]
                    w = mult[r]
                    if w == 0:
                        continue
                    b = X[r, f]
                    if nl > 0 and a < b:
                        nr = cnt - nl
                        sr = tot_c - sl
                        g = sl * sl / nl + sr * sr / nr - base
                        if g > best_gain + (tol if best_f >= 0 else 0.0):
                            best_gain = g
                            best_f = f
                            thr = 0.5 * (a + b)
                            if thr >= b:
                                thr = a
                            best_thr = thr
                    nl += w
                    sl += w * (y[r] - mean)
                    a = b
            else:
                xs = np.empty(cnt)
                for i in range(cnt):
                    xs[i] = X[idx[s + i], f]
                srt = np.argsort(xs, kind="mergesort")
                sl = 0.0
                for k in range(cnt - 1):
                    sl += yc[srt[k]]
                    a = xs[srt[k]]
                    b = xs[srt[k + 1]]
                    if a < b:
                        nl = k + 1
                        nr = cnt - nl
                        sr = tot_c - sl
                        g = sl * sl / nl + sr * sr / nr - base
                        if g > best_gain + (tol if best_f >= 0 else 0.0):
                            best_gain = g
                            best_f = f
                            thr = 0.5 * (a + b)
                            if thr >= b:
                                thr = a
                            best_thr = thr

        if marked:
            for i in range(s, e):
                mult[idx[i]] = 0
        if best_f < 0:
            continue

        # stable partition of idx[s:e]
        nl = 0
        nr = 0
        for i in range(s, e):
            r = idx[i]
            if is_cat[best_f]:
                go_left = (best_lm & _level_bit(int(X[r, best_f]))) != 0
            else:
                go_left = X[r, best_f] <= best_thr
            if go_left:
                idx[s + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[s + nl + i] = buf[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        lmask[node] = best_lm
        rmask[node] = best_rm
        left[node] = lc
        right[node] = rc
        gain_out[node] = best_gain
        stack_node[top] = rc
        stack_s[top] = s + nl
        stack_e[top] = e
        top += 1
        stack_node[top] = lc
        stack_s[top] = s
        stack_e[top] = s + nl
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        lmask[:n_nodes].copy(),
        rmask[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
        gain_out[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def _route(X, r, ov_f, ov_v, is_cat, feature, threshold, lmask, rmask, left, right, count):
    node = 0
    while feature[node] >= 0:
        f = feature[node]
        x = ov_v if f == ov_f else X[r, f]
        if is_cat[f]:
            lv = int(x)
            if 0 <= lv < MAX_MASK_LEVELS and (lmask[node] & _level_bit(lv)) != 0:
                node = left[node]
            elif 0 <= lv < MAX_MASK_LEVELS and (rmask[node] & _level_bit(lv)) != 0:
                node = right[node]
            elif count[left[node]] >= count[right[node]]:
                node = left[node]
            else:
                node = right[node]
        elif x <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def predict(X, is_cat, feature, threshold, lmask, rmask, left, right, value, count):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        out[r] = value[_route(X, r, -1, 0.0, is_cat, feature, threshold, lmask, rmask, left, right, count)]
    return out


@njit(cache=True, nogil=True)
def permutation_errors(
    X, y, rows, unif, variables, is_cat, feature, threshold, lmask, rmask, left, right, value, count
):
    """MSE over ``rows``, and MSE with each listed variable permuted among ``rows``.

    Row ``v`` of ``unif`` holds the uniforms that drive the Fisher-Yates
    shuffle for variable ``v``.
    """
    m = rows.size
    base = 0.0
    for i in range(m):
        r = rows[i]
        d = y[r] - value[_route(X, r, -1, 0.0, is_cat, feature, threshold, lmask, rmask, left, right, count)]
        base += d * d
    base /= m
    errs = np.empty(variables.size)
    perm = np.empty(m, np.int64)
    for k in range(variables.size):
        v = variables[k]
        for i in range(m):
            perm[i] = i
        for i in range(m - 1, 0, -1):
            j = int(unif[v, i] * (i + 1))
            if j > i:
                j = i
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        acc = 0.0
        for i in range(m):
            r = rows[i]
            donor = rows[perm[i]]
            leaf = _route(X, r, v, X[donor, v], is_cat, feature, threshold, lmask, rmask, left, right, count)
            d = y[r] - value[leaf]
            acc += d * d
        errs[k] = acc / m
    return base, errs
