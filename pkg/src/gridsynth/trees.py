"""Shared CART machinery for the forest/boosting models.

Features are discretized once per fit into at most 255 bins (exact when a
column has fewer distinct values), and trees grow level-wise: one pair of
bincount calls builds the split histograms for every node of the current
depth, which keeps cost per tree almost independent of node count.
Impure nodes split even at zero impurity gain (plain CART behaviour, so
XOR-like patterns are still separated); growth stops at purity,
min_samples_split, depth, or when no candidate feature separates the rows.
Thresholds are stored as raw feature values, so trained trees route
arbitrary unbinned rows.
"""

from __future__ import annotations

import numpy as np

MAX_BINS = 255


class BinnedDataset:
    """Per-feature cut points and the binned training matrix."""

    def __init__(self, X, max_bins=MAX_BINS):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        self.cuts = []
        bins = np.zeros((n, d), dtype=np.int64)
        for j in range(d):
            uniq = np.unique(X[:, j])
            if len(uniq) <= 1:
                cuts = np.empty(0)
            elif len(uniq) <= max_bins:
                cuts = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                qs = np.linspace(0, 1, max_bins + 1)[1:-1]
                cuts = np.unique(np.quantile(uniq, qs))
            self.cuts.append(cuts)
            if len(cuts):
                bins[:, j] = np.searchsorted(cuts, X[:, j], side="right")
        self.bins = bins
        self.n_bins = max(2, max(len(c) + 1 for c in self.cuts))
        self.cut_lengths = np.array([len(c) for c in self.cuts], dtype=np.int64)


class Tree:
    """Flat-array binary tree; x < threshold routes left."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    def _route(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            goes_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(goes_left, self.left[cur], self.right[cur])
            active = self.left[node] >= 0
        return node

    def predict(self, X):
        return self.value[self._route(X)]

    def apply(self, X):
        """Leaf index per row."""
        return self._route(X)

    @property
    def n_nodes(self):
        return len(self.feature)


def grow_tree(binned, y, rows=None, task="classification", criterion="gini",
              max_depth=None, min_samples_split=2, max_features=None, rng=None):
    """Grow one tree on pre-binned data; rows may repeat (bootstrap)."""
    y = np.asarray(y, dtype=np.float64)
    n_total, d = binned.bins.shape
    nb = binned.n_bins
    if rows is None:
        rows = np.arange(n_total)
    rows = np.asarray(rows, dtype=np.int64)
    pos_bins = binned.bins[rows]
    y_pos = y[rows]
    depth_cap = np.inf if max_depth is None else max_depth
    classification = task == "classification"
    mf = d if max_features is None else min(max_features, d)

    # bin validity per feature: only bins with an actual cut point may split
    valid_bins = np.zeros((d, nb - 1), dtype=bool)
    for f in range(d):
        valid_bins[f, : binned.cut_lengths[f]] = True

    feature = [0]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]

    node_of_pos = np.zeros(len(rows), dtype=np.int64)
    active_pos = np.arange(len(rows))
    frontier_lo, frontier_hi = 0, 1
    depth = 0

    while frontier_hi > frontier_lo and len(active_pos):
        s = frontier_hi - frontier_lo
        slots = node_of_pos[active_pos] - frontier_lo
        y_act = y_pos[active_pos]
        cnt = np.bincount(slots, minlength=s).astype(np.float64)
        if classification:
            pos_cnt = np.bincount(slots, weights=(y_act == 1.0), minlength=s)
            node_vals = np.divide(pos_cnt, cnt, out=np.zeros(s), where=cnt > 0)
            impure = (pos_cnt > 0) & (pos_cnt < cnt)
        else:
            sum_y = np.bincount(slots, weights=y_act, minlength=s)
            sum_y2 = np.bincount(slots, weights=y_act * y_act, minlength=s)
            node_vals = np.divide(sum_y, cnt, out=np.zeros(s), where=cnt > 0)
            variance = sum_y2 / np.maximum(cnt, 1) - node_vals**2
            impure = variance > 1e-20 * (1.0 + node_vals**2)
        for i in range(s):
            value[frontier_lo + i] = float(node_vals[i])

        splittable = impure & (cnt >= min_samples_split) & (depth < depth_cap)
        split_slots = np.nonzero(splittable)[0]
        if not len(split_slots):
            break
        remap = np.full(s, -1, dtype=np.int64)
        remap[split_slots] = np.arange(len(split_slots))
        keep = splittable[slots]
        kept_pos = active_pos[keep]
        kept_slots = remap[slots[keep]]
        sc = len(split_slots)

        # candidate features per splitting node
        if mf < d:
            feats_mat = np.argpartition(rng.random((sc, d)), mf - 1, axis=1)[:, :mf]
            sub = pos_bins[kept_pos[:, None], feats_mat[kept_slots]]
        else:
            feats_mat = np.tile(np.arange(d), (sc, 1))
            sub = pos_bins[kept_pos]

        flat = (kept_slots[:, None] * mf + np.arange(mf)[None, :]) * nb + sub
        minlength = sc * mf * nb
        hist_cnt = np.bincount(flat.ravel(), minlength=minlength).reshape(sc, mf, nb)
        y_kept = y_pos[kept_pos]
        if classification:
            hist_stat = np.bincount(
                flat[y_kept == 1.0].ravel(), minlength=minlength
            ).reshape(sc, mf, nb)
        else:
            hist_stat = np.bincount(
                flat.ravel(), weights=np.repeat(y_kept, mf), minlength=minlength
            ).reshape(sc, mf, nb)

        n_l = np.cumsum(hist_cnt, axis=2)[:, :, :-1].astype(np.float64)
        s_l = np.cumsum(hist_stat, axis=2)[:, :, :-1].astype(np.float64)
        m_node = cnt[split_slots][:, None, None]
        t_node = (pos_cnt if classification else sum_y)[split_slots][:, None, None]
        n_r = m_node - n_l
        s_r = t_node - s_l
        ok = (n_l > 0) & (n_r > 0) & valid_bins[feats_mat][:, :, : nb - 1]

        if classification:
            p_l = np.divide(s_l, n_l, out=np.zeros_like(s_l), where=ok)
            p_r = np.divide(s_r, n_r, out=np.zeros_like(s_r), where=ok)
            if criterion == "gini":
                child_imp = n_l * 2.0 * p_l * (1.0 - p_l) + n_r * 2.0 * p_r * (1.0 - p_r)
            else:
                child_imp = n_l * _binary_entropy(p_l) + n_r * _binary_entropy(p_r)
            score = np.where(ok, -child_imp, -np.inf)
        else:
            score = np.where(
                ok,
                np.divide(s_l * s_l, n_l, out=np.zeros_like(s_l), where=ok)
                + np.divide(s_r * s_r, n_r, out=np.zeros_like(s_r), where=ok),
                -np.inf,
            )

        flat_best = np.argmax(score.reshape(sc, -1), axis=1)
        f_rank, b_best = np.divmod(flat_best, nb - 1)
        feat_best = feats_mat[np.arange(sc), f_rank]
        has_split = np.isfinite(score.reshape(sc, -1)[np.arange(sc), flat_best])

        # allocate children for nodes that actually split
        child_base = len(feature)
        split_rank = np.cumsum(has_split) - 1
        for i in range(sc):
            node_id = frontier_lo + split_slots[i]
            if not has_split[i]:
                continue
            lid = child_base + 2 * split_rank[i]
            feature[node_id] = int(feat_best[i])
            threshold[node_id] = float(binned.cuts[feat_best[i]][b_best[i]])
            left[node_id] = lid
            right[node_id] = lid + 1
        n_children = 2 * int(has_split.sum())
        feature.extend([0] * n_children)
        threshold.extend([0.0] * n_children)
        left.extend([-1] * n_children)
        right.extend([-1] * n_children)
        value.extend([0.0] * n_children)

        # route rows of split nodes to their children
        rows_split = has_split[kept_slots]
        rp = kept_pos[rows_split]
        rs = kept_slots[rows_split]
        goes_left = pos_bins[rp, feat_best[rs]] <= b_best[rs]
        node_of_pos[rp] = child_base + 2 * split_rank[rs] + (~goes_left).astype(np.int64)

        active_pos = rp
        frontier_lo, frontier_hi = child_base, child_base + n_children
        depth += 1

    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=np.float64),
    )


def _binary_entropy(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))
