"""Compiled kernels for growing and traversing CART trees.

The growers are deterministic: every random choice is pre-drawn by the
caller (bootstrap row indices plus one uniform vector per node used to pick
the m_try candidate features), so results never depend on thread count or
call order.

Split selection scans candidates in a canonical order (features ascending
within the sampled set, thresholds ascending, level subsets by ascending
bitmask) and a candidate replaces the incumbent only when its gain exceeds
the incumbent's by more than ``GAIN_EPS``.  This makes the chosen split
reproducible under floating-point noise and lets an independent oracle
replay the same decisions.

Split gains are normalized per node: variance reduction for regression and
Gini impurity decrease for classification, both equal to

    (score_left + score_right - score_node) / n_node

with score = (sum of centered responses)^2 / count for regression and
score = sum_k count_k^2 / count for classification.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Tolerance for "strictly better" split comparisons; also the scale at which
# mathematically tied gains are treated as equal.
GAIN_EPS = 1e-10

# Categorical splits enumerate all level subsets up to this many present
# levels; beyond it levels are ordered and scanned as if ordinal.
MAX_EXHAUSTIVE_LEVELS = 10

TASK_REGRESSION = 0
TASK_CLASSIFICATION = 1


# ---------------------------------------------------------------------------
# Regression split search
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _best_cont_reg(X, y, idx, lo, hi, f, mean, best_gain):
    """Scan midpoint thresholds of feature f; return updated incumbent."""
    m = hi - lo
    xv = np.empty(m, np.float64)
    yv = np.empty(m, np.float64)
    for i in range(m):
        r = idx[lo + i]
        xv[i] = X[r, f]
        yv[i] = y[r] - mean
    order = np.argsort(xv)
    total = 0.0
    for i in range(m):
        total += yv[i]
    improved = False
    thr = 0.0
    cum = 0.0
    for i in range(m - 1):
        cum += yv[order[i]]
        xa = xv[order[i]]
        xb = xv[order[i + 1]]
        if xa < xb:
            n_l = i + 1
            n_r = m - n_l
            rest = total - cum
            gain = (cum * cum / n_l + rest * rest / n_r - total * total / m) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                thr = 0.5 * (xa + xb)
                improved = True
    return best_gain, thr, improved


@njit(cache=True, nogil=True)
def _best_cat_reg(X, y, idx, lo, hi, f, n_lev, mean, best_gain):
    """Scan level-subset splits of categorical feature f."""
    m = hi - lo
    lev_sum = np.zeros(n_lev, np.float64)
    lev_cnt = np.zeros(n_lev, np.int64)
    for i in range(lo, hi):
        r = idx[i]
        l = np.int64(X[r, f])
        lev_sum[l] += y[r] - mean
        lev_cnt[l] += 1
    present = np.empty(n_lev, np.int64)
    q = 0
    total = 0.0
    for l in range(n_lev):
        if lev_cnt[l] > 0:
            present[q] = l
            q += 1
            total += lev_sum[l]
    mask_l = np.int64(0)
    mask_r = np.int64(0)
    improved = False
    if q < 2:
        return best_gain, mask_l, mask_r, improved
    all_mask = np.int64(0)
    for i in range(q):
        all_mask |= np.int64(1) << present[i]
    if q <= MAX_EXHAUSTIVE_LEVELS:
        # subsets of present[1:]; the left side always holds present[0]
        n_sub = (np.int64(1) << (q - 1)) - 1
        for bits in range(n_sub):
            s_l = lev_sum[present[0]]
            n_l = lev_cnt[present[0]]
            cand = np.int64(1) << present[0]
            for j in range(q - 1):
                if (bits >> j) & 1:
                    l = present[j + 1]
                    s_l += lev_sum[l]
                    n_l += lev_cnt[l]
                    cand |= np.int64(1) << l
            n_r = m - n_l
            s_r = total - s_l
            gain = (s_l * s_l / n_l + s_r * s_r / n_r - total * total / m) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                mask_l = cand
                mask_r = all_mask & ~cand
                improved = True
    else:
        # order present levels by mean response (ties by level index) and
        # scan the ordered prefix boundaries as if the feature were ordinal
        keys = np.empty(q, np.float64)
        for i in range(q):
            keys[i] = lev_sum[present[i]] / lev_cnt[present[i]]
        ordered = np.empty(q, np.int64)
        used = np.zeros(q, np.uint8)
        for pos in range(q):
            best_i = -1
            for i in range(q):
                if used[i]:
                    continue
                if best_i < 0 or keys[i] < keys[best_i] or (
                    keys[i] == keys[best_i] and present[i] < present[best_i]
                ):
                    best_i = i
            used[best_i] = 1
            ordered[pos] = present[best_i]
        s_l = 0.0
        n_l = np.int64(0)
        cand = np.int64(0)
        for b in range(q - 1):
            l = ordered[b]
            s_l += lev_sum[l]
            n_l += lev_cnt[l]
            cand |= np.int64(1) << l
            n_r = m - n_l
            s_r = total - s_l
            gain = (s_l * s_l / n_l + s_r * s_r / n_r - total * total / m) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                mask_l = cand
                mask_r = all_mask & ~cand
                improved = True
    return best_gain, mask_l, mask_r, improved


# ---------------------------------------------------------------------------
# Classification split search
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _best_cont_cls(X, ycode, idx, lo, hi, f, n_cls, best_gain):
    m = hi - lo
    xv = np.empty(m, np.float64)
    cv = np.empty(m, np.int64)
    total_cnt = np.zeros(n_cls, np.int64)
    for i in range(m):
        r = idx[lo + i]
        xv[i] = X[r, f]
        cv[i] = ycode[r]
        total_cnt[cv[i]] += 1
    order = np.argsort(xv)
    score_node = 0.0
    for k in range(n_cls):
        score_node += total_cnt[k] * total_cnt[k]
    score_node /= m
    left_cnt = np.zeros(n_cls, np.int64)
    improved = False
    thr = 0.0
    for i in range(m - 1):
        left_cnt[cv[order[i]]] += 1
        xa = xv[order[i]]
        xb = xv[order[i + 1]]
        if xa < xb:
            n_l = i + 1
            n_r = m - n_l
            s_l = 0.0
            s_r = 0.0
            for k in range(n_cls):
                s_l += left_cnt[k] * left_cnt[k]
                rk = total_cnt[k] - left_cnt[k]
                s_r += rk * rk
            gain = (s_l / n_l + s_r / n_r - score_node) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                thr = 0.5 * (xa + xb)
                improved = True
    return best_gain, thr, improved


@njit(cache=True, nogil=True)
def _best_cat_cls(X, ycode, idx, lo, hi, f, n_lev, n_cls, best_gain):
    m = hi - lo
    lev_cls = np.zeros((n_lev, n_cls), np.int64)
    lev_cnt = np.zeros(n_lev, np.int64)
    for i in range(lo, hi):
        r = idx[i]
        l = np.int64(X[r, f])
        lev_cls[l, ycode[r]] += 1
        lev_cnt[l] += 1
    present = np.empty(n_lev, np.int64)
    q = 0
    for l in range(n_lev):
        if lev_cnt[l] > 0:
            present[q] = l
            q += 1
    mask_l = np.int64(0)
    mask_r = np.int64(0)
    improved = False
    if q < 2:
        return best_gain, mask_l, mask_r, improved
    total_cnt = np.zeros(n_cls, np.int64)
    all_mask = np.int64(0)
    for i in range(q):
        l = present[i]
        all_mask |= np.int64(1) << l
        for k in range(n_cls):
            total_cnt[k] += lev_cls[l, k]
    score_node = 0.0
    for k in range(n_cls):
        score_node += total_cnt[k] * total_cnt[k]
    score_node /= m
    cnt_l = np.zeros(n_cls, np.int64)
    if q <= MAX_EXHAUSTIVE_LEVELS:
        n_sub = (np.int64(1) << (q - 1)) - 1
        for bits in range(n_sub):
            for k in range(n_cls):
                cnt_l[k] = lev_cls[present[0], k]
            n_l = lev_cnt[present[0]]
            cand = np.int64(1) << present[0]
            for j in range(q - 1):
                if (bits >> j) & 1:
                    l = present[j + 1]
                    for k in range(n_cls):
                        cnt_l[k] += lev_cls[l, k]
                    n_l += lev_cnt[l]
                    cand |= np.int64(1) << l
            n_r = m - n_l
            s_l = 0.0
            s_r = 0.0
            for k in range(n_cls):
                s_l += cnt_l[k] * cnt_l[k]
                rk = total_cnt[k] - cnt_l[k]
                s_r += rk * rk
            gain = (s_l / n_l + s_r / n_r - score_node) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                mask_l = cand
                mask_r = all_mask & ~cand
                improved = True
    else:
        # order present levels by relative frequency of class 0 (ties by
        # level index) and scan prefix boundaries
        keys = np.empty(q, np.float64)
        for i in range(q):
            keys[i] = lev_cls[present[i], 0] / lev_cnt[present[i]]
        ordered = np.empty(q, np.int64)
        used = np.zeros(q, np.uint8)
        for pos in range(q):
            best_i = -1
            for i in range(q):
                if used[i]:
                    continue
                if best_i < 0 or keys[i] < keys[best_i] or (
                    keys[i] == keys[best_i] and present[i] < present[best_i]
                ):
                    best_i = i
            used[best_i] = 1
            ordered[pos] = present[best_i]
        for k in range(n_cls):
            cnt_l[k] = 0
        n_l = np.int64(0)
        cand = np.int64(0)
        for b in range(q - 1):
            l = ordered[b]
            for k in range(n_cls):
                cnt_l[k] += lev_cls[l, k]
            n_l += lev_cnt[l]
            cand |= np.int64(1) << l
            n_r = m - n_l
            s_l = 0.0
            s_r = 0.0
            for k in range(n_cls):
                s_l += cnt_l[k] * cnt_l[k]
                rk = total_cnt[k] - cnt_l[k]
                s_r += rk * rk
            gain = (s_l / n_l + s_r / n_r - score_node) / m
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                mask_l = cand
                mask_r = all_mask & ~cand
                improved = True
    return best_gain, mask_l, mask_r, improved


# ---------------------------------------------------------------------------
# Tree growth
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def grow_tree(
    X,
    y,
    ycode,
    task,
    n_cls,
    is_cat,
    n_levels,
    rows,
    node_rand,
    m_try,
    min_node,
    feature,
    threshold,
    is_cat_split,
    cat_left,
    cat_right,
    left,
    right,
    leaf_value,
    gain_arr,
    n_node,
):
    """Grow one tree over ``rows``; returns the number of nodes written.

    Candidate features for a node are the first m_try entries of
    argsort(node_rand[node]); if none yields a valid split, the next m_try
    entries are tried once (the resample step), after which the node
    becomes a leaf.
    """
    n = rows.shape[0]
    p = X.shape[1]
    idx = rows.copy()
    tmp = np.empty(n, np.int64)
    max_nodes = feature.shape[0]
    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    count = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        m = hi - lo
        n_node[node] = m

        if task == TASK_REGRESSION:
            s = 0.0
            y_min = y[idx[lo]]
            y_max = y_min
            for i in range(lo, hi):
                v = y[idx[i]]
                s += v
                if v < y_min:
                    y_min = v
                if v > y_max:
                    y_max = v
            mean = s / m
            pred = mean
            pure = y_min == y_max
        else:
            counts = np.zeros(n_cls, np.int64)
            for i in range(lo, hi):
                counts[ycode[idx[i]]] += 1
            best_k = 0
            for k in range(1, n_cls):
                if counts[k] > counts[best_k]:
                    best_k = k
            pred = float(best_k)
            pure = counts[best_k] == m
            mean = 0.0

        if m <= min_node or pure:
            feature[node] = -1
            leaf_value[node] = pred
            continue

        order = np.argsort(node_rand[node, :])
        best_gain = 0.0
        best_f = np.int64(-1)
        best_thr = 0.0
        best_is_cat = False
        best_mask_l = np.int64(0)
        best_mask_r = np.int64(0)
        for chunk in range(2):
            a = chunk * m_try
            b = min((chunk + 1) * m_try, p)
            if a >= b:
                break
            cand_feats = np.sort(order[a:b])
            for ci in range(cand_feats.shape[0]):
                f = cand_feats[ci]
                if is_cat[f]:
                    if task == TASK_REGRESSION:
                        g, ml, mr, imp = _best_cat_reg(
                            X, y, idx, lo, hi, f, n_levels[f], mean, best_gain
                        )
                    else:
                        g, ml, mr, imp = _best_cat_cls(
                            X, ycode, idx, lo, hi, f, n_levels[f], n_cls, best_gain
                        )
                    if imp:
                        best_gain = g
                        best_f = f
                        best_is_cat = True
                        best_mask_l = ml
                        best_mask_r = mr
                else:
                    if task == TASK_REGRESSION:
                        g, thr, imp = _best_cont_reg(
                            X, y, idx, lo, hi, f, mean, best_gain
                        )
                    else:
                        g, thr, imp = _best_cont_cls(
                            X, ycode, idx, lo, hi, f, n_cls, best_gain
                        )
                    if imp:
                        best_gain = g
                        best_f = f
                        best_is_cat = False
                        best_thr = thr
            if best_f >= 0:
                break

        if best_f < 0:
            feature[node] = -1
            leaf_value[node] = pred
            continue

        # stable partition of idx[lo:hi] into left then right
        n_l = 0
        for i in range(lo, hi):
            r = idx[i]
            v = X[r, best_f]
            if best_is_cat:
                go_left = ((np.int64(1) << np.int64(v)) & best_mask_l) != 0
            else:
                go_left = v <= best_thr
            if go_left:
                tmp[n_l] = r
                n_l += 1
        n_r = 0
        for i in range(lo, hi):
            r = idx[i]
            v = X[r, best_f]
            if best_is_cat:
                go_left = ((np.int64(1) << np.int64(v)) & best_mask_l) != 0
            else:
                go_left = v <= best_thr
            if not go_left:
                tmp[n_l + n_r] = r
                n_r += 1
        for i in range(m):
            idx[lo + i] = tmp[i]

        feature[node] = best_f
        is_cat_split[node] = 1 if best_is_cat else 0
        threshold[node] = best_thr
        cat_left[node] = best_mask_l
        cat_right[node] = best_mask_r
        gain_arr[node] = best_gain
        child_l = count
        child_r = count + 1
        count += 2
        left[node] = child_l
        right[node] = child_r
        # push right first so the left child is processed first
        stack_node[sp] = child_r
        stack_lo[sp] = lo + n_l
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = child_l
        stack_lo[sp] = lo
        stack_hi[sp] = lo + n_l
        sp += 1
    return count


@njit(cache=True, nogil=True)
def apply_tree(
    Xq, feature, threshold, is_cat_split, cat_right, left, right, leaf_value, out
):
    """Route each query row to a leaf; unseen categorical levels go left."""
    for i in range(Xq.shape[0]):
        node = 0
        while feature[node] >= 0:
            v = Xq[i, feature[node]]
            if is_cat_split[node] != 0:
                bit = np.int64(1) << np.int64(v)
                if (bit & cat_right[node]) != 0:
                    node = right[node]
                else:
                    node = left[node]
            else:
                if v <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
        out[i] = leaf_value[node]
