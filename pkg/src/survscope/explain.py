"""Shapley-value attribution for fitted models.

Tree ensembles get the exact polynomial-time path-dependent algorithm;
everything else goes through the kernel method (weighted least-squares
Shapley regression, exact enumeration at low dimension). Cross-fold
aggregation produces the top-k summary data consumed by external plotting.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from numba import njit

from .models.base import FittedModel
from .models.gbt import GBTModel
from .models.rsf import RSFModel
from . import models  # noqa: F401  (ensures families are registered)

EXACT_FEATURE_LIMIT = 12


@dataclass
class AttributionSet:
    """Per-subject, per-feature Shapley values at a fixed horizon.

    `base_value + values[i].sum()` equals `model_output[i]` (local accuracy).
    `output_kind` names the explained scalar: tree ensembles explain the
    risk at the horizon (RSF) or the log-partial-hazard margin (GBT); the
    kernel method explains whatever the prediction function returns.
    """

    feature_names: tuple[str, ...]
    values: np.ndarray  # (n_subjects, n_features)
    base_value: float
    model_output: np.ndarray  # (n_subjects,)
    feature_values: np.ndarray  # (n_subjects, n_features)
    horizon: float
    output_kind: str
    subject_ids: tuple[str, ...] = ()

    def local_accuracy_gap(self) -> np.ndarray:
        return np.abs(self.base_value + self.values.sum(axis=1) - self.model_output)


# ---------------------------------------------------------------------------
# Tree path-dependent algorithm
# ---------------------------------------------------------------------------

@njit(cache=True)
def _unwound_sum(pz, po, pw, depth, i):
    one = po[i]
    zero = pz[i]
    next_one = pw[depth]
    total = 0.0
    for j in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = next_one * (depth + 1) / ((j + 1) * one)
            total += tmp
            next_one = pw[j] - tmp * zero * (depth - j) / (depth + 1)
        elif zero != 0.0:
            total += (pw[j] / zero) / ((depth - j) / (depth + 1))
    return total


@njit(cache=True)
def _unwind(pf, pz, po, pw, depth, i):
    one = po[i]
    zero = pz[i]
    next_one = pw[depth]
    for j in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[j]
            pw[j] = next_one * (depth + 1) / ((j + 1) * one)
            next_one = tmp - pw[j] * zero * (depth - j) / (depth + 1)
        else:
            pw[j] = pw[j] * (depth + 1) / (zero * (depth - j))
    for j in range(i, depth):
        pf[j] = pf[j + 1]
        pz[j] = pz[j + 1]
        po[j] = po[j + 1]
        pw[j] = pw[j + 1]


@njit(cache=True)
def _tree_shap_row(x, feature, threshold, left, right, count, leaf_value,
                   max_levels, phi):
    L = max_levels + 2
    pf = np.empty((L, L), dtype=np.int64)
    pz = np.empty((L, L), dtype=np.float64)
    po = np.empty((L, L), dtype=np.float64)
    pw = np.empty((L, L), dtype=np.float64)
    cap = 4 * L + 8
    st_node = np.empty(cap, dtype=np.int64)
    st_prow = np.empty(cap, dtype=np.int64)
    st_plen = np.empty(cap, dtype=np.int64)
    st_pz = np.empty(cap, dtype=np.float64)
    st_po = np.empty(cap, dtype=np.float64)
    st_pi = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0], st_prow[0], st_plen[0] = 0, -1, 0
    st_pz[0], st_po[0], st_pi[0] = 1.0, 1.0, -1
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        prow = st_prow[top]
        plen = st_plen[top]
        pzi, poi, pii = st_pz[top], st_po[top], st_pi[top]
        row = prow + 1
        for j in range(plen):
            pf[row, j] = pf[prow, j]
            pz[row, j] = pz[prow, j]
            po[row, j] = po[prow, j]
            pw[row, j] = pw[prow, j]
        # extend
        l = plen
        pf[row, l] = pii
        pz[row, l] = pzi
        po[row, l] = poi
        pw[row, l] = 1.0 if l == 0 else 0.0
        for i in range(l - 1, -1, -1):
            pw[row, i + 1] += poi * pw[row, i] * (i + 1) / (l + 1)
            pw[row, i] = pzi * pw[row, i] * (l - i) / (l + 1)
        if feature[node] < 0:
            for i in range(1, l + 1):
                w = _unwound_sum(pz[row], po[row], pw[row], l, i)
                phi[pf[row, i]] += w * (po[row, i] - pz[row, i]) * leaf_value[node]
            continue
        f = feature[node]
        if x[f] <= threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        hzf = count[hot] / count[node]
        czf = count[cold] / count[node]
        iz, io = 1.0, 1.0
        k = -1
        for j in range(1, l + 1):
            if pf[row, j] == f:
                k = j
                break
        new_len = l + 1
        if k >= 0:
            iz, io = pz[row, k], po[row, k]
            _unwind(pf[row], pz[row], po[row], pw[row], l, k)
            new_len = l
        st_node[top], st_prow[top], st_plen[top] = hot, row, new_len
        st_pz[top], st_po[top], st_pi[top] = iz * hzf, io, f
        top += 1
        st_node[top], st_prow[top], st_plen[top] = cold, row, new_len
        st_pz[top], st_po[top], st_pi[top] = iz * czf, 0.0, f
        top += 1


def _tree_depth(tr: dict) -> int:
    feature, left, right = tr["feature"], tr["left"], tr["right"]
    depth = np.zeros(feature.size, dtype=int)
    out = 0
    for node in range(feature.size):
        if feature[node] >= 0:
            depth[left[node]] = depth[node] + 1
            depth[right[node]] = depth[node] + 1
        out = max(out, depth[node])
    return out


def _rsf_leaf_risk(tr: dict, horizon: float) -> np.ndarray:
    """Per-node risk 1 - exp(-H_leaf(horizon)); zero for internal nodes."""
    values = np.zeros(tr["feature"].size)
    for node in range(tr["feature"].size):
        if tr["feature"][node] >= 0:
            continue
        s, e = tr["pl_start"][node], tr["pl_end"][node]
        pos = np.searchsorted(tr["pl_times"][s:e], horizon, side="right")
        h = tr["pl_haz"][s + pos - 1] if pos > 0 else 0.0
        values[node] = 1.0 - math.exp(-h)
    return values


def tree_attribution(model: FittedModel, X: np.ndarray, horizon: float,
                     subject_ids=()) -> AttributionSet:
    """Exact path-dependent Shapley values summed over the ensemble.

    RSF attributes the ensemble risk at the horizon; GBT attributes the
    additive log-partial-hazard margin (its survival transform is monotone,
    so rankings agree).
    """
    if isinstance(model, RSFModel):
        trees = [dict(tr, value=_rsf_leaf_risk(tr, horizon) / len(model.trees))
                 for tr in model.trees]
        output_kind = "risk"
        model_output = model.predict_risk(X, horizon)
    elif isinstance(model, GBTModel):
        trees = [dict(tr, value=tr["value"] * model.learning_rate) for tr in model.trees]
        output_kind = "log_partial_hazard"
        model_output = model.linear_predictor(X)
    else:
        raise ValueError(f"tree_attribution requires a tree ensemble, got {model.family}")

    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    phi = np.zeros((n, p))
    base = 0.0
    for tr in trees:
        levels = _tree_depth(tr) + 1
        counts = tr["count"].astype(np.float64)
        leaf_mask = tr["feature"] < 0
        base += float(np.sum(tr["value"][leaf_mask] * counts[leaf_mask]) / counts[0])
        for i in range(n):
            _tree_shap_row(X[i], tr["feature"], tr["threshold"], tr["left"],
                           tr["right"], counts, tr["value"], levels, phi[i])
    return AttributionSet(model.feature_names, phi, base, np.asarray(model_output),
                          X.copy(), float(horizon), output_kind, tuple(subject_ids))


# ---------------------------------------------------------------------------
# Kernel method
# ---------------------------------------------------------------------------

def _coalition_value(predict_fn, x, background, masks: np.ndarray) -> np.ndarray:
    """Interventional v(S): average prediction with masked-out features drawn
    from the background rows."""
    m, p = masks.shape
    nb = background.shape[0]
    Z = np.repeat(background[None, :, :], m, axis=0)  # (m, nb, p)
    Z[:, :, :] = np.where(masks[:, None, :], x[None, None, :], Z)
    flat = Z.reshape(m * nb, p)
    vals = np.asarray(predict_fn(flat), dtype=float).reshape(m, nb)
    return vals.mean(axis=1)


def kernel_attribution(predict_fn, X: np.ndarray, background: np.ndarray,
                       budget: int = 2048, seed: int = 0, horizon: float = float("nan"),
                       feature_names=(), subject_ids=(),
                       output_kind: str = "risk") -> AttributionSet:
    """Shapley values via the weighted least-squares coalition regression.

    Exact enumeration (Shapley sum over all coalitions) when the feature
    count is at most 12; otherwise coalition sizes are enumerated outside-in
    within the sampling budget and the remainder is sampled, with the
    efficiency constraint enforced in the solve.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] == 0:
        raise ValueError("background set must be non-empty")
    n, p = X.shape
    if p > EXACT_FEATURE_LIMIT and budget < p + 2:
        raise ValueError(f"sample budget {budget} below feature count + 2 ({p + 2})")
    names = tuple(feature_names) if feature_names else tuple(f"x{j}" for j in range(p))

    phi = np.zeros((n, p))
    outputs = np.zeros(n)
    base = float(np.mean(np.asarray(predict_fn(background), dtype=float)))
    for i in range(n):
        if p <= EXACT_FEATURE_LIMIT:
            phi[i], fx = _exact_shapley(predict_fn, X[i], background)
        else:
            phi[i], fx = _sampled_shapley(predict_fn, X[i], background, budget, seed + i, base)
        outputs[i] = fx
    return AttributionSet(names, phi, base, outputs, X.copy(), float(horizon),
                          output_kind, tuple(subject_ids))


def _exact_shapley(predict_fn, x, background):
    p = x.size
    n_masks = 1 << p
    masks = np.zeros((n_masks, p), dtype=bool)
    for j in range(p):
        masks[:, j] = (np.arange(n_masks) >> j) & 1
    v = _coalition_value(predict_fn, x, background, masks)
    fact = [math.factorial(i) for i in range(p + 1)]
    size = masks.sum(axis=1)
    w_by_size = np.array([fact[s] * fact[p - s - 1] / fact[p] for s in range(p)])
    phi = np.zeros(p)
    for m in range(n_masks):
        s = int(size[m])
        for j in range(p):
            if not masks[m, j]:
                phi[j] += w_by_size[s] * (v[m | (1 << j)] - v[m])
    return phi, float(v[-1])


def _kernel_weight(p: int, s: int) -> float:
    return (p - 1) / (math.comb(p, s) * s * (p - s))


def _sampled_shapley(predict_fn, x, background, budget, seed, base):
    p = x.size
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    masks: list[np.ndarray] = []
    weights: list[float] = []
    remaining = budget
    sizes = []
    lo, hi = 1, p - 1
    while lo <= hi:
        sizes.extend([lo] if lo == hi else [lo, hi])
        lo, hi = lo + 1, hi - 1
    leftover_sizes = []
    for s in sizes:
        n_s = math.comb(p, s)
        if n_s <= remaining:
            for comb in combinations(range(p), s):
                m = np.zeros(p, dtype=bool)
                m[list(comb)] = True
                masks.append(m)
                weights.append(_kernel_weight(p, s))
            remaining -= n_s
        else:
            leftover_sizes.append(s)
    if leftover_sizes and remaining > 0:
        size_mass = np.array([math.comb(p, s) * _kernel_weight(p, s)
                              for s in leftover_sizes])
        probs = size_mass / size_mass.sum()
        # sampled coalitions share the leftover kernel-weight mass so their
        # scale matches the fully enumerated sizes
        per_draw = float(size_mass.sum()) / remaining
        seen: dict[bytes, int] = {}
        for _ in range(remaining):
            s = leftover_sizes[int(rng.choice(len(leftover_sizes), p=probs))]
            m = np.zeros(p, dtype=bool)
            m[rng.choice(p, size=s, replace=False)] = True
            key = m.tobytes()
            if key in seen:
                weights[seen[key]] += per_draw
            else:
                seen[key] = len(masks)
                masks.append(m)
                weights.append(per_draw)
    Z = np.array(masks)
    w = np.asarray(weights, dtype=float)
    v = _coalition_value(predict_fn, x, background, Z)
    fx = float(np.asarray(predict_fn(x[None, :]), dtype=float)[0])
    delta = fx - base
    y = v - base
    A = Z[:, :-1].astype(float) - Z[:, -1:].astype(float)
    t = y - Z[:, -1].astype(float) * delta
    AtW = A.T * w
    head, *_ = np.linalg.lstsq(AtW @ A, AtW @ t, rcond=None)
    phi = np.concatenate([head, [delta - head.sum()]])
    return phi, fx


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class AttributionSummary:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray  # (p,)
    ranking: np.ndarray  # feature indices, most impactful first
    top_k: int
    pooled_values: np.ndarray  # (n_total, p)
    pooled_feature_values: np.ndarray
    pooled_subject_ids: tuple[str, ...] = ()
    horizon: float = float("nan")

    def table(self) -> list[tuple[int, str, float]]:
        return [(rank + 1, self.feature_names[j], float(self.mean_abs[j]))
                for rank, j in enumerate(self.ranking[:self.top_k])]


def aggregate_summary(sets: list[AttributionSet], k: int = 20) -> AttributionSummary:
    """Pool attribution sets across folds and rank features by mean |value|."""
    if not sets:
        raise ValueError("no attribution sets to aggregate")
    names = sets[0].feature_names
    for s in sets[1:]:
        if s.feature_names != names:
            raise ValueError("attribution sets disagree on feature names")
    values = np.vstack([s.values for s in sets])
    feats = np.vstack([s.feature_values for s in sets])
    ids = tuple(i for s in sets for i in (s.subject_ids or ("?",) * len(s.values)))
    mean_abs = np.abs(values).mean(axis=0)
    ranking = np.argsort(-mean_abs, kind="stable")
    return AttributionSummary(names, mean_abs, ranking, k, values, feats, ids,
                              sets[0].horizon)


def write_summary_csv(summary: AttributionSummary, out_dir: str | Path,
                      prefix: str = "attribution") -> list[Path]:
    """Emit `<prefix>_summary.csv` (feature, rank, mean_abs_shap) and
    `<prefix>_long.csv` (subject, feature, shap_value, feature_value) for
    the top-k features."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / f"{prefix}_summary.csv"
    with summary_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "rank", "mean_abs_shap"])
        for rank, name, value in summary.table():
            writer.writerow([name, rank, f"{value:.10g}"])
    long_path = out_dir / f"{prefix}_long.csv"
    top = summary.ranking[:summary.top_k]
    with long_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "feature", "shap_value", "feature_value"])
        for i, sid in enumerate(summary.pooled_subject_ids):
            for j in top:
                writer.writerow([sid, summary.feature_names[j],
                                 f"{summary.pooled_values[i, j]:.10g}",
                                 f"{summary.pooled_feature_values[i, j]:.10g}"])
    return [summary_path, long_path]
