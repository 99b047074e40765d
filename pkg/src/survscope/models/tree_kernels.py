"""Numba-compiled tree growing and traversal kernels.

Survival trees split on the maximal standardized log-rank statistic and keep
a Nelson-Aalen cumulative hazard per leaf; regression trees split on
variance reduction for boosting residuals. Trees are flat array structures
(feature, threshold, children, sample count) shared by the forest, the
boosting ensemble and the tree-path Shapley algorithm.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MAX_THRESHOLDS = 32


@njit(cache=True)
def _sample_features(perm, mtry):
    p = perm.size
    for i in range(mtry):
        j = i + np.random.randint(0, p - i)
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:mtry]


@njit(cache=True)
def _candidate_thresholds(xv, out):
    """Midpoints between consecutive distinct values, evenly thinned to fit
    `out`. Returns the count written."""
    xs = np.sort(xv.copy())
    n = xs.size
    n_gaps = 0
    for i in range(n - 1):
        if xs[i + 1] > xs[i]:
            n_gaps += 1
    if n_gaps == 0:
        return 0
    cap = out.size
    if n_gaps <= cap:
        k = 0
        for i in range(n - 1):
            if xs[i + 1] > xs[i]:
                out[k] = 0.5 * (xs[i] + xs[i + 1])
                k += 1
        return k
    # thin evenly over the gap sequence
    k = 0
    gap_idx = 0
    step = n_gaps / cap
    next_pick = step / 2.0
    for i in range(n - 1):
        if xs[i + 1] > xs[i]:
            if gap_idx >= next_pick and k < cap:
                out[k] = 0.5 * (xs[i] + xs[i + 1])
                k += 1
                next_pick += step
            gap_idx += 1
    return k


@njit(cache=True)
def _logrank_score(t, e, left_mask, order, min_leaf):
    """Standardized two-sample log-rank statistic splitting on left_mask.

    `order` sorts t ascending. Returns -1 when the split is invalid (a side
    below min_leaf or zero variance)."""
    n = t.size
    n_left = 0
    for i in range(n):
        if left_mask[i]:
            n_left += 1
    if n_left < min_leaf or n - n_left < min_leaf:
        return -1.0
    num = 0.0
    var = 0.0
    at_risk = 0.0
    at_risk_left = 0.0
    i = n - 1
    while i >= 0:
        t_block = t[order[i]]
        d = 0.0
        d_left = 0.0
        while i >= 0 and t[order[i]] == t_block:
            idx = order[i]
            at_risk += 1.0
            if left_mask[idx]:
                at_risk_left += 1.0
            if e[idx]:
                d += 1.0
                if left_mask[idx]:
                    d_left += 1.0
            i -= 1
        if d > 0.0 and at_risk > 1.0:
            frac = at_risk_left / at_risk
            num += d_left - d * frac
            var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0)
    if var <= 1e-12:
        return -1.0
    return abs(num) / np.sqrt(var)


@njit(cache=True)
def build_survival_tree(X, times, events, sample_idx, max_depth, min_leaf,
                        mtry, seed):
    """Grow one survival tree on the given sample; returns flat node arrays
    plus concatenated per-leaf Nelson-Aalen payloads.

    max_depth < 0 means unlimited. Leaves store (event time, cumulative
    hazard) steps computed on the leaf's samples.
    """
    np.random.seed(seed)
    n_total = sample_idx.size
    max_leaves = max(1, n_total // max(min_leaf, 1))
    if max_depth >= 0:
        cap = 1
        for _ in range(max_depth):
            cap *= 2
            if cap > max_leaves:
                break
        max_leaves = min(max_leaves, cap)
    max_nodes = 2 * max_leaves + 1

    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    pl_start = np.zeros(max_nodes, dtype=np.int64)
    pl_end = np.zeros(max_nodes, dtype=np.int64)
    pl_times = np.zeros(n_total, dtype=np.float64)
    pl_haz = np.zeros(n_total, dtype=np.float64)
    pl_cursor = 0

    idxbuf = sample_idx.copy()
    tmp = np.empty(n_total, dtype=np.int64)
    perm = np.arange(X.shape[1])
    thr_buf = np.empty(MAX_THRESHOLDS, dtype=np.float64)

    stack_start = np.empty(max_nodes, dtype=np.int64)
    stack_end = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    top = 0
    cursor = 1
    stack_start[0], stack_end[0], stack_depth[0], stack_node[0] = 0, n_total, 0, 0
    top = 1

    while top > 0:
        top -= 1
        start, end = stack_start[top], stack_end[top]
        depth, nid = stack_depth[top], stack_node[top]
        n_node = end - start
        count[nid] = n_node

        t = np.empty(n_node, dtype=np.float64)
        e = np.empty(n_node, dtype=np.bool_)
        n_events = 0
        for i in range(n_node):
            row = idxbuf[start + i]
            t[i] = times[row]
            e[i] = events[row]
            if e[i]:
                n_events += 1

        splittable = (n_node >= 2 * min_leaf and n_events >= 1
                      and (max_depth < 0 or depth < max_depth)
                      and cursor + 2 <= max_nodes)
        best_score = 0.0
        best_f = -1
        best_thr = 0.0
        if splittable:
            order = np.argsort(t, kind="mergesort")
            feats = _sample_features(perm, mtry)
            xv = np.empty(n_node, dtype=np.float64)
            left_mask = np.empty(n_node, dtype=np.bool_)
            for fi in range(feats.size):
                f = feats[fi]
                for i in range(n_node):
                    xv[i] = X[idxbuf[start + i], f]
                n_thr = _candidate_thresholds(xv, thr_buf)
                for ti in range(n_thr):
                    thr = thr_buf[ti]
                    for i in range(n_node):
                        left_mask[i] = xv[i] <= thr
                    score = _logrank_score(t, e, left_mask, order, min_leaf)
                    if score > best_score:
                        best_score = score
                        best_f = f
                        best_thr = thr

        if best_f < 0:
            # leaf: Nelson-Aalen over this node's samples
            order = np.argsort(t, kind="mergesort")
            pl_start[nid] = pl_cursor
            h = 0.0
            at_risk = float(n_node)
            i = 0
            while i < n_node:
                t_block = t[order[i]]
                d = 0.0
                c = 0.0
                while i < n_node and t[order[i]] == t_block:
                    if e[order[i]]:
                        d += 1.0
                    else:
                        c += 1.0
                    i += 1
                if d > 0.0:
                    h += d / at_risk
                    pl_times[pl_cursor] = t_block
                    pl_haz[pl_cursor] = h
                    pl_cursor += 1
                at_risk -= d + c
            pl_end[nid] = pl_cursor
            continue

        k = 0
        for i in range(start, end):
            if X[idxbuf[i], best_f] <= best_thr:
                tmp[k] = idxbuf[i]
                k += 1
        n_left = k
        for i in range(start, end):
            if X[idxbuf[i], best_f] > best_thr:
                tmp[k] = idxbuf[i]
                k += 1
        for i in range(n_node):
            idxbuf[start + i] = tmp[i]

        feature[nid] = best_f
        threshold[nid] = best_thr
        lid = cursor
        rid = cursor + 1
        cursor += 2
        left[nid] = lid
        right[nid] = rid
        stack_start[top], stack_end[top] = start, start + n_left
        stack_depth[top], stack_node[top] = depth + 1, lid
        top += 1
        stack_start[top], stack_end[top] = start + n_left, end
        stack_depth[top], stack_node[top] = depth + 1, rid
        top += 1

    return (feature[:cursor], threshold[:cursor], left[:cursor], right[:cursor],
            count[:cursor], pl_times[:pl_cursor], pl_haz[:pl_cursor],
            pl_start[:cursor], pl_end[:cursor])


@njit(cache=True)
def build_regression_tree(X, y, sample_idx, max_depth, min_leaf, mtry, seed):
    """Grow one least-squares regression tree; leaves store the mean target."""
    np.random.seed(seed)
    n_total = sample_idx.size
    max_leaves = max(1, n_total // max(min_leaf, 1))
    if max_depth >= 0:
        cap = 1
        for _ in range(max_depth):
            cap *= 2
            if cap > max_leaves:
                break
        max_leaves = min(max_leaves, cap)
    max_nodes = 2 * max_leaves + 1

    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    value = np.zeros(max_nodes, dtype=np.float64)

    idxbuf = sample_idx.copy()
    tmp = np.empty(n_total, dtype=np.int64)
    perm = np.arange(X.shape[1])

    stack_start = np.empty(max_nodes, dtype=np.int64)
    stack_end = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    cursor = 1
    stack_start[0], stack_end[0], stack_depth[0], stack_node[0] = 0, n_total, 0, 0
    top = 1

    while top > 0:
        top -= 1
        start, end = stack_start[top], stack_end[top]
        depth, nid = stack_depth[top], stack_node[top]
        n_node = end - start
        count[nid] = n_node

        total = 0.0
        for i in range(start, end):
            total += y[idxbuf[i]]
        value[nid] = total / n_node

        splittable = (n_node >= 2 * min_leaf
                      and (max_depth < 0 or depth < max_depth)
                      and cursor + 2 <= max_nodes)
        best_gain = 1e-12
        best_f = -1
        best_thr = 0.0
        if splittable:
            feats = _sample_features(perm, mtry)
            xv = np.empty(n_node, dtype=np.float64)
            yv = np.empty(n_node, dtype=np.float64)
            base = total * total / n_node
            for fi in range(feats.size):
                f = feats[fi]
                for i in range(n_node):
                    xv[i] = X[idxbuf[start + i], f]
                    yv[i] = y[idxbuf[start + i]]
                order = np.argsort(xv, kind="mergesort")
                s1 = 0.0
                for i in range(n_node - 1):
                    oi = order[i]
                    s1 += yv[oi]
                    nl = i + 1
                    if xv[order[i + 1]] == xv[oi]:
                        continue
                    nr = n_node - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    gain = s1 * s1 / nl + (total - s1) * (total - s1) / nr - base
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = 0.5 * (xv[oi] + xv[order[i + 1]])

        if best_f < 0:
            continue

        k = 0
        for i in range(start, end):
            if X[idxbuf[i], best_f] <= best_thr:
                tmp[k] = idxbuf[i]
                k += 1
        n_left = k
        for i in range(start, end):
            if X[idxbuf[i], best_f] > best_thr:
                tmp[k] = idxbuf[i]
                k += 1
        for i in range(n_node):
            idxbuf[start + i] = tmp[i]

        feature[nid] = best_f
        threshold[nid] = best_thr
        lid, rid = cursor, cursor + 1
        cursor += 2
        left[nid] = lid
        right[nid] = rid
        stack_start[top], stack_end[top] = start, start + n_left
        stack_depth[top], stack_node[top] = depth + 1, lid
        top += 1
        stack_start[top], stack_end[top] = start + n_left, end
        stack_depth[top], stack_node[top] = depth + 1, rid
        top += 1

    return (feature[:cursor], threshold[:cursor], left[:cursor], right[:cursor],
            count[:cursor], value[:cursor])


@njit(cache=True)
def tree_apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def leaf_survival(leaf_ids, q_times, pl_times, pl_haz, pl_start, pl_end):
    """exp(-H_leaf(t)) for each row and query time."""
    n = leaf_ids.size
    m = q_times.size
    out = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        leaf = leaf_ids[i]
        s, e = pl_start[leaf], pl_end[leaf]
        for qi in range(m):
            lo, hi = s, e
            q = q_times[qi]
            while lo < hi:
                mid = (lo + hi) // 2
                if pl_times[mid] <= q:
                    lo = mid + 1
                else:
                    hi = mid
            h = pl_haz[lo - 1] if lo > s else 0.0
            out[i, qi] = np.exp(-h)
    return out
