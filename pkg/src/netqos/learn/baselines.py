"""Engineered window features plus KNN and linear-SVM estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from .trees import sigmoid

STAT_NAMES = ("mean", "std", "last", "slope")


def feature_vectors(Z: np.ndarray, channels=None) -> np.ndarray:
    """Window statistics of the self-cell slice of standardized tensors ``Z`` (n, K, W, C).

    Per channel: mean, population std, last value and least-squares slope
    over the window, laid out channel-major (K * 4 columns).
    """
    S = np.asarray(Z, dtype=np.float64)[..., 0]  # (n, K, W)
    if channels is not None:
        S = S[:, list(channels)]
    n, K, W = S.shape
    t = np.arange(W, dtype=np.float64) - (W - 1) / 2.0
    denom = float((t ** 2).sum())
    mean = S.mean(axis=2)
    slope = (S * t).sum(axis=2) / denom if denom > 0 else np.zeros((n, K))
    F = np.stack([mean, S.std(axis=2), S[..., -1], slope], axis=2)
    return F.reshape(n, K * len(STAT_NAMES))


def feature_names(kpi_names) -> list:
    return [f"{k}.{s}" for k in kpi_names for s in STAT_NAMES]


def fit_scaler(F):
    """Column mean/std rounded to float32 values so a saved model reproduces them exactly."""
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return mean.astype(np.float32).astype(np.float64), std.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------- knn

def _sq_dists(A, B):
    return np.maximum((A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2.0 * A @ B.T, 0.0)


def knn_neighbors(train_F, query_F, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest training rows per query (Euclidean; ties -> lower index).

    Candidates come from the fast expansion formula; the final ranking uses
    exactly computed distances.
    """
    n = len(train_F)
    k = min(k, n)
    m = min(n, k + 32)
    out = np.empty((len(query_F), k), dtype=np.int64)
    for i in range(0, len(query_F), chunk):
        Q = query_F[i:i + chunk]
        d = _sq_dists(Q, train_F)
        cand = np.argpartition(d, m - 1, axis=1)[:, :m] if m < n else np.tile(np.arange(n), (len(Q), 1))
        exact = ((train_F[cand] - Q[:, None, :]) ** 2).sum(axis=2)
        for r in range(len(Q)):
            o = np.lexsort((cand[r], exact[r]))[:k]
            out[i + r] = cand[r][o]
    return out


def knn_proba(train_F, train_y, query_F, k: int) -> np.ndarray:
    """Fraction of label-1 votes among the ``k`` nearest neighbors."""
    nb = knn_neighbors(train_F, query_F, k)
    return np.asarray(train_y, dtype=np.float64)[nb].mean(axis=1)


# ---------------------------------------------------------------- linear svm

@dataclass(frozen=True)
class SvmHyper:
    lam: float = 1e-4
    epochs: int = 20
    batch: int = 16
    seed: int = 42


def fit_linear_svm(F, y, hyper: SvmHyper = SvmHyper()):
    """Mini-batch Pegasos SGD on L2-regularized hinge loss; labels {0,1} map to {-1,+1}.

    The step size is ``1 / (lam * (t + t0))`` with ``t0 = 1/sqrt(lam)`` so early
    steps stay bounded.  The bias is not regularized.  Returns (w, b).
    """
    F = np.asarray(F, dtype=np.float64)
    s = np.where(np.asarray(y) == 1, 1.0, -1.0)
    n, d = F.shape
    w = np.zeros(d)
    b = 0.0
    t0 = 1.0 / np.sqrt(hyper.lam)
    t = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(hyper.seed, n, rng.CH_SVM, epoch)
        for i in range(0, n, hyper.batch):
            idx = order[i:i + hyper.batch]
            t += 1
            eta = 1.0 / (hyper.lam * (t + t0))
            viol = s[idx] * (F[idx] @ w + b) < 1.0
            w *= 1.0 - eta * hyper.lam
            if viol.any():
                sv = s[idx][viol]
                w += (eta / len(idx)) * (sv @ F[idx][viol])
                b += (eta * hyper.lam) * sv.sum() / len(idx) * t0
    return w, b


def svm_score(w, b, F) -> np.ndarray:
    return np.asarray(F, dtype=np.float64) @ w + b


def svm_proba(w, b, F) -> np.ndarray:
    return sigmoid(svm_score(w, b, F))
