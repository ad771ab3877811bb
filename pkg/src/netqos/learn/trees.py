"""CART classification trees and gradient-boosted regression trees.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``); a leaf has ``feature == -1``.  Samples go left when
``x[feature] <= threshold``.  Split search sorts every feature once at the root;
each child inherits its members' per-feature order by stable partition, so no
node ever sorts again.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.feature)

    def apply(self, F: np.ndarray) -> np.ndarray:
        """Leaf index for every row of ``F``."""
        node = np.zeros(len(F), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = F[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, F: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(F, dtype=np.float64))]

    @property
    def depth(self) -> int:
        d = np.zeros(len(self), dtype=np.int64)
        for i in range(len(self)):  # children always follow their parent
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max()) if len(d) else 0


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def tree(self) -> Tree:
        return Tree(np.array(self.feature, np.int64), np.array(self.threshold, np.float64),
                    np.array(self.left, np.int64), np.array(self.right, np.int64),
                    np.array(self.value, np.float64))


def _best_split(FT, R, stats, score_fn):
    """Best (gain, feature, threshold) for a node whose members are ``R``.

    ``FT`` is the transposed feature matrix (features, n).  ``R`` is
    (features, m): row f lists the node's sample indices sorted by feature f.
    ``stats`` is a tuple of additive per-sample statistics (each shape (n,))
    and ``score_fn(*cums)`` maps cumulative statistics to a node score where
    higher is better; gain = score(left) + score(right) - score(parent).
    Ties go to the lowest feature, then the lowest threshold.
    """
    nf, m = R.shape
    if m < 2:
        return 0.0, -1, 0.0
    x = np.take_along_axis(FT, R, axis=1)  # ascending per row
    left = [np.cumsum(s[R], axis=1)[:, :-1] for s in stats]
    total = [float(s[R[0]].sum()) for s in stats]
    parent = score_fn(*[np.float64(t) for t in total])
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = score_fn(*left) + score_fn(*[t - l for t, l in zip(total, left)]) - parent
    gain[x[:, 1:] <= x[:, :-1]] = -np.inf  # thresholds only between distinct values
    j = int(np.argmax(gain))
    f, pos = divmod(j, m - 1)
    if not gain[f, pos] > 1e-12:
        return 0.0, -1, 0.0
    lo, hi = x[f, pos], x[f, pos + 1]
    thr = 0.5 * (lo + hi)
    if not (lo <= thr < hi):  # midpoint rounded onto a neighbor
        thr = lo
    return float(gain[f, pos]), int(f), float(thr)


def _gini_score(c0, c1):
    """Negative weighted Gini impurity, ``-n * gini``, from class counts."""
    n = c0 + c1
    return np.where(n > 0, (c0 * c0 + c1 * c1) / np.where(n > 0, n, 1.0), 0.0) - n


def presort(F) -> np.ndarray:
    """(features, n) sample order per feature; reusable across trees on the same ``F``."""
    return np.argsort(np.asarray(F, dtype=np.float64), axis=0, kind="stable").T.copy()


def _grow(F, stats, score_fn, leaf_fn, max_depth, min_split, is_pure=None, order=None) -> Tree:
    F = np.asarray(F, dtype=np.float64)
    n, nf = F.shape
    FT = np.ascontiguousarray(F.T)
    R0 = presort(F) if order is None else order
    b = _Builder()
    stack = [(R0, 0, b.add(leaf_fn(R0[0])))]
    go_left = np.zeros(n, dtype=bool)
    while stack:
        R, depth, node = stack.pop()
        m = R.shape[1]
        if m < min_split or (max_depth is not None and depth >= max_depth):
            continue
        if is_pure is not None and is_pure(R[0]):
            continue
        gain, f, thr = _best_split(FT, R, stats, score_fn)
        if f < 0:
            continue
        go_left[R[0]] = FT[f, R[0]] <= thr
        sel = go_left[R]
        n_left = int(sel[0].sum())
        RL = R[sel].reshape(nf, n_left)
        RR = R[~sel].reshape(nf, m - n_left)
        lch, rch = b.add(leaf_fn(RL[0])), b.add(leaf_fn(RR[0]))
        b.feature[node], b.threshold[node], b.left[node], b.right[node] = f, thr, lch, rch
        stack.append((RR, depth + 1, rch))
        stack.append((RL, depth + 1, lch))
    return b.tree()


def fit_classification_tree(F, y, max_depth: int = 8, min_split: int = 2) -> Tree:
    """CART with Gini impurity; leaf value = fraction of label 1."""
    y = np.asarray(y, dtype=np.int64)
    stats = ((y == 0).astype(np.float64), (y == 1).astype(np.float64))
    return _grow(F, stats, _gini_score, lambda rows: float(y[rows].mean()) if len(rows) else 0.0,
                 max_depth, min_split, lambda rows: y[rows].min() == y[rows].max())


def fit_regression_tree(F, g, h, max_depth: int = 3, min_split: int = 2, l2: float = 1.0, order=None) -> Tree:
    """Second-order regression tree: split gain G^2/(H+l2), leaf value -G/(H+l2)."""
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return _grow(F, (g, h), lambda G, H: G * G / (H + l2),
                 lambda rows: float(-g[rows].sum() / (h[rows].sum() + l2)), max_depth, min_split, order=order)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_loss(y, z) -> np.ndarray:
    """Per-sample log loss for labels in {0,1} and raw scores ``z``."""
    return np.logaddexp(0.0, z) - y * z


@dataclass(eq=False)
class Boosted:
    init: float
    shrinkage: float
    trees: list

    def decision(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=np.float64)
        z = np.full(len(F), self.init)
        for t in self.trees:
            z = z + t.predict(F)
        return z


def fit_boosted(F, y, stages: int = 100, shrinkage: float = 0.1, max_depth: int = 3,
                min_split: int = 2, l2: float = 1.0):
    """Gradient boosting on logistic loss; returns (model, per-stage training loss).

    Leaf values are ``shrinkage`` times a Newton step.  A leaf whose step would
    raise its own loss is halved until it does not (down to zero), so the
    training loss never increases from one stage to the next.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p0 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    init = float(np.log(p0 / (1 - p0)))
    z = np.full(len(y), init)
    order = presort(F)
    losses = [float(logistic_loss(y, z).mean())]
    trees = []
    for _ in range(stages):
        p = sigmoid(z)
        tree = fit_regression_tree(F, p - y, p * (1 - p), max_depth, min_split, l2, order)
        leaves = tree.apply(F)
        values = tree.value * shrinkage
        for node in np.flatnonzero(tree.feature < 0):
            m = leaves == node
            before = logistic_loss(y[m], z[m]).sum()
            v = values[node]
            for _ in range(60):
                if logistic_loss(y[m], z[m] + v).sum() <= before:
                    break
                v *= 0.5
            else:
                v = 0.0
            values[node] = v
        tree.value = values
        z = z + values[leaves]
        trees.append(tree)
        losses.append(float(logistic_loss(y, z).mean()))
    return Boosted(init, shrinkage, trees), losses
