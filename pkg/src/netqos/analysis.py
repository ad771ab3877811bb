"""KPI correlation statistics, heatmap export and k-means over cell traffic profiles."""
from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path

import numpy as np

from . import rng
from .errors import DegenerateSeries, EmptyTrace, KTooLarge, LengthMismatch, UnknownCell
from .telemetry import KPI_INDEX, KPI_NAMES, Trace, fmt_real

MINUTES_PER_DAY = 1440
PROFILE_KPI = "prb_util_dl_rate"


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series lengths differ: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise LengthMismatch("need at least 2 points")
    return x, y


def pearson(x, y) -> float:
    """Population-moment Pearson coefficient, clamped to [-1, 1]."""
    x, y = _check_pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.mean(dx * dx)), np.sqrt(np.mean(dy * dy))
    if sx == 0 or sy == 0:
        raise DegenerateSeries("series has zero variance")
    return float(np.clip(np.mean(dx * dy) / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class CorrMatrix:
    labels: tuple
    entries: np.ndarray  # |rho|, symmetric
    flagged: tuple  # labels whose series were constant (row/col of zeros)


def _abs_corr(S: np.ndarray):
    """|rho| between the columns of ``S`` (n, m); constant columns are flagged and zeroed."""
    D = S - S.mean(axis=0)
    sd = np.sqrt(np.mean(D * D, axis=0))
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(S).max(axis=0))
    Z = np.where(flat, 0.0, D / np.where(flat, 1.0, sd))
    R = np.clip(np.abs(Z.T @ Z / len(S)), 0.0, 1.0)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, np.where(flat, 0.0, 1.0))
    return R, flat


def correlation_matrix(trace: Trace, cell_scope="all") -> CorrMatrix:
    """|rho| between KPI series; per-cell series are concatenated in (cell, time) order."""
    k = trace.kpi
    if cell_scope != "all":
        if int(cell_scope) not in trace.topology:
            raise UnknownCell(f"cell {cell_scope} not in topology")
        k = k.take(np.flatnonzero(k.cell_id == int(cell_scope)))
    if len(k) < 2:
        raise EmptyTrace("need at least 2 KPI frames in scope")
    order = np.lexsort((k.timestamp, k.cell_id))
    R, flat = _abs_corr(k.values[order].astype(np.float64))
    return CorrMatrix(tuple(KPI_NAMES), R, tuple(n for n, f in zip(KPI_NAMES, flat) if f))


def heatmap_csv(m: CorrMatrix) -> str:
    lines = ["," + ",".join(m.labels)]
    for name, row in zip(m.labels, m.entries):
        lines.append(name + "," + ",".join(fmt_real(v) for v in row))
    return "\n".join(lines) + "\n"


def heatmap_svg(m: CorrMatrix, cell_px: int = 64) -> str:
    n = len(m.labels)
    left = top = 8 * max((len(s) for s in m.labels), default=1) + 16
    w, h = left + n * cell_px + 8, top + n * cell_px + 8
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           '<style>text{font-family:monospace;font-size:12px}</style>',
           f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>']
    for i, name in enumerate(m.labels):
        yc = top + i * cell_px + cell_px // 2
        out.append(f'<text class="label" x="{left - 6}" y="{yc}" text-anchor="end" '
                   f'dominant-baseline="middle">{escape(name)}</text>')
    for j, name in enumerate(m.labels):
        xc = left + j * cell_px + cell_px // 2
        out.append(f'<text class="label" x="{xc}" y="{top - 6}" text-anchor="start" '
                   f'transform="rotate(-90 {xc} {top - 6})">{escape(name)}</text>')
    for i in range(n):
        for j in range(n):
            v = float(m.entries[i, j])
            g = int(round(255 * (1.0 - v)))
            out.append(f'<rect class="cell" x="{left + j * cell_px}" y="{top + i * cell_px}" width="{cell_px}" '
                       f'height="{cell_px}" fill="rgb({g},{g},{g})"><title>{escape(m.labels[i])} / '
                       f'{escape(m.labels[j])}: {fmt_real(v)}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_heatmap(m: CorrMatrix, path, fmt: str = None) -> None:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "svg"):
        raise ValueError(f"unsupported heatmap format {fmt!r} (use csv or svg)")
    path.write_text(heatmap_csv(m) if fmt == "csv" else heatmap_svg(m))


# ---------------------------------------------------------------- traffic profiles

@dataclass(frozen=True)
class TrafficProfile:
    cell_id: int
    values: np.ndarray  # 48: weekday hours 0-23, then weekend hours 0-23


def traffic_profiles(trace: Trace, kpi: str = PROFILE_KPI) -> list:
    """Mean ``kpi`` per (day type, hour of day) for every cell; empty slots are 0."""
    k = trace.kpi
    if len(k) == 0:
        raise EmptyTrace("trace has no KPI frames")
    ts = k.timestamp.astype(np.int64)
    dow = (trace.start_dow + ts // MINUTES_PER_DAY) % 7
    slot = np.where(dow >= 5, 24, 0) + (ts % MINUTES_PER_DAY) // 60
    rows = np.searchsorted(trace.topology.ids, k.cell_id)
    n = len(trace.topology)
    sums = np.zeros((n, 48))
    counts = np.zeros((n, 48))
    np.add.at(sums, (rows, slot), k.values[:, KPI_INDEX[kpi]])
    np.add.at(counts, (rows, slot), 1.0)
    means = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    return [TrafficProfile(int(c), np.maximum(means[i], 0.0)) for i, c in enumerate(trace.topology.ids)]


# ---------------------------------------------------------------- k-means

@dataclass(frozen=True)
class Clustering:
    k: int
    cell_ids: np.ndarray
    assignments: np.ndarray
    centroids: np.ndarray  # in the (optionally z-scored) clustering space
    inertia: float
    history: tuple  # inertia after every assignment step
    iterations: int

    def assignment_map(self) -> dict:
        return {int(c): int(a) for c, a in zip(self.cell_ids, self.assignments)}


def zscore_columns(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return (X - mu) / np.where(sd > 1e-12, sd, 1.0)


def _sq(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _seed_centroids(X, k, seed):
    """k-means++: first center uniform, then proportional to squared distance."""
    n = len(X)
    chosen = [int(np.floor(rng.uniform(seed, rng.CH_KMEANS, 0) * n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            u = float(rng.uniform(seed, rng.CH_KMEANS, j)) * total
            nxt = int(min(np.searchsorted(np.cumsum(d2), u, side="right"), n - 1))
            while d2[nxt] == 0:  # landed on a zero-mass point through rounding
                nxt = (nxt + 1) % n
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans_matrix(X, k: int, seed: int, max_iter: int = 100) -> tuple:
    """Lloyd iterations on rows of ``X``; returns (assignments, centroids, history)."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n == 0:
        raise EmptyTrace("no profiles to cluster")
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} must be between 1 and the number of profiles ({n})")
    C = _seed_centroids(X, k, seed)
    assign = None
    history = []
    for _ in range(max_iter):
        d = _sq(X, C)
        new = np.argmin(d, axis=1)  # ties -> lower centroid index
        history.append(float(d[np.arange(n), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = assign == c
            if members.any():
                C[c] = X[members].mean(axis=0)
        for c in range(k):
            if not (assign == c).any():  # re-seed with the point farthest from its centroid
                far = int(np.argmax(((X - C[assign]) ** 2).sum(axis=1)))
                C[c] = X[far]
                assign[far] = c
    return assign, C, tuple(history)


def kmeans(profiles, k: int, seed: int, zscore: bool = True, max_iter: int = 100) -> Clustering:
    profiles = list(profiles)
    if not profiles:
        raise EmptyTrace("no profiles to cluster")
    X = np.stack([np.asarray(p.values, dtype=np.float64) for p in profiles])
    if zscore:
        X = zscore_columns(X)
    assign, C, hist = kmeans_matrix(X, k, seed, max_iter)
    inertia = float(((X - C[assign]) ** 2).sum())
    return Clustering(k, np.array([p.cell_id for p in profiles], np.int64), assign.astype(np.int64), C,
                      inertia, hist, len(hist))


def purity(assignments, labels) -> float:
    """Fraction of points whose label is the majority label of their cluster."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    hit = 0
    for c in np.unique(assignments):
        _, counts = np.unique(labels[assignments == c], return_counts=True)
        hit += counts.max()
    return hit / len(labels)


def write_clustering(cl: Clustering, trace: Trace, path) -> None:
    lines = ["cell_id,cluster,region_type"]
    for c, a in zip(cl.cell_ids.tolist(), cl.assignments.tolist()):
        lines.append(f"{c},{a},{trace.topology.cell(c).region_type}")
    Path(path).write_text("\n".join(lines) + "\n")
