"""Admission control from predicted QoS deterioration, and a closed-loop replay harness.

A replay runs the simulator twice over identical random streams: once admitting
everything (baseline) and once asking a scorer, before each step, for every
cell's probability of deterioration given the telemetry realized so far.  In the
policy run, low-priority requests at cells whose probability exceeds the
threshold are rejected before they load the cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from html import escape
from pathlib import Path
from typing import Optional

import numpy as np

from . import netsim
from .dataset import DatasetConfig, tensors_from_cube
from .errors import ConfigInvalid, ConfigMismatch, ShapeMismatch
from .telemetry import HIGH, KPI_NAMES, LOW, PRIORITIES, fmt_real

ADMIT, REJECT = "ADMIT", "REJECT"


@dataclass(frozen=True)
class PolicyConfig:
    theta: float = 0.5
    protected: tuple = (HIGH,)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigInvalid(f"theta must be in [0, 1], got {self.theta}")


@dataclass(frozen=True)
class AdmissionDecision:
    request_id: Optional[int]
    action: str
    p_deteriorate: float
    theta: float
    priority: int


def decide(p_deteriorate: float, priority: int, cfg: PolicyConfig = PolicyConfig(), request_id=None) -> AdmissionDecision:
    if not 0.0 <= p_deteriorate <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p_deteriorate}")
    reject = priority not in cfg.protected and p_deteriorate > cfg.theta
    return AdmissionDecision(request_id, REJECT if reject else ADMIT, float(p_deteriorate), cfg.theta, int(priority))


def admit_mask(p_cell: np.ndarray, rows: np.ndarray, priority: np.ndarray, cfg: PolicyConfig) -> np.ndarray:
    """Vectorized ``decide`` over one step's requests."""
    protected = np.isin(priority, np.asarray(cfg.protected, dtype=np.int64))
    return protected | ~(p_cell[rows] > cfg.theta)


# ---------------------------------------------------------------- scorers

class ModelScorer:
    """P(DETERIORATION) per cell from a trained model, on the newest realized window."""

    def __init__(self, model, topology):
        cfg = model.dataset_config
        if cfg is None:
            raise ConfigMismatch("model carries no dataset configuration")
        expect = (cfg.channels, cfg.window, cfg.cells)
        if tuple(model.input_dims) != expect:
            raise ShapeMismatch(f"model input {tuple(model.input_dims)} does not match dataset config {expect}")
        self.model, self.config = model, cfg
        n = len(topology)
        self.slots = np.full((n, cfg.cells), -1, dtype=np.int64)
        for i, c in enumerate(topology.cells):
            nb = topology.neighbors(c.cell_id)[:cfg.neighbors]
            self.slots[i, 0] = i
            self.slots[i, 1:1 + len(nb)] = np.searchsorted(topology.ids, nb) if nb else []

    def __call__(self, step: int, state: netsim.StepState) -> Optional[np.ndarray]:
        anchor = step - 1
        if anchor < self.config.window - 1:
            return None
        cube = state.kpi
        if self.config.tdr_channels:
            cube = np.concatenate([cube, state.conn_bytes[..., None] / 1.0e6,
                                   state.conn_count[..., None].astype(np.float64)], axis=-1)
        rows = np.arange(len(state.cell_ids))
        X = tensors_from_cube(cube, self.slots, rows, np.full(len(rows), anchor), self.config.window)
        # the dataset stores float32 tensors; score what a model would see offline
        return self.model.predict_proba(X.astype(np.float32))


class OracleScorer:
    """Clairvoyant scorer: 1 where the baseline run is congested at the step being admitted."""

    def __init__(self, ground_truth: netsim.GroundTruth):
        self.congested = ground_truth.congested

    def __call__(self, step: int, state: netsim.StepState) -> np.ndarray:
        return self.congested[:, step].astype(np.float64)


# ---------------------------------------------------------------- replay

@dataclass(frozen=True)
class VariantStats:
    mean_delay_ms: float
    p95_delay_ms: float
    admitted: int
    rejected_low: int
    rejected_high: int

    @property
    def rejected(self) -> int:
        return self.rejected_low + self.rejected_high


@dataclass(eq=False)
class PolicyReport:
    theta: float
    cell_ids: np.ndarray
    xy: np.ndarray  # (cells, 2) km
    timestamps: np.ndarray
    variants: dict  # name -> VariantStats
    per_cell: dict  # name -> list[VariantStats] in cell_ids order
    series: dict  # name -> (cells, steps) mean delay of admitted connections, NaN where none
    offered: int = 0
    p_history: Optional[np.ndarray] = field(default=None, repr=False)  # (cells, steps) scores, NaN unscored


def _stats(delay: np.ndarray, n_admit: int, rej_low: int, rej_high: int) -> VariantStats:
    if len(delay):
        return VariantStats(float(delay.mean()), float(np.percentile(delay, 95)), n_admit, rej_low, rej_high)
    return VariantStats(float("nan"), float("nan"), n_admit, rej_low, rej_high)


def summarize(run: netsim.SimRun, cfg: netsim.SimConfig):
    req = run.requests
    keep = run.admitted
    delay = run.trace_parts[1].delay  # per admitted connection, as emitted into the trace
    rows = req.row[keep]
    steps = req.step[keep]
    n_cells, n_steps = run.utilization.shape
    overall = _stats(delay, int(keep.sum()), int(((~keep) & (req.priority == LOW)).sum()),
                     int(((~keep) & (req.priority == HIGH)).sum()))
    per_cell = []
    for r in range(n_cells):
        m = rows == r
        rr = req.row == r
        per_cell.append(_stats(delay[m], int(m.sum()), int(((~keep) & rr & (req.priority == LOW)).sum()),
                               int(((~keep) & rr & (req.priority == HIGH)).sum())))
    flat = rows * n_steps + steps
    tot = np.bincount(flat, weights=delay, minlength=n_cells * n_steps)
    cnt = np.bincount(flat, minlength=n_cells * n_steps)
    with np.errstate(invalid="ignore", divide="ignore"):
        series = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan).reshape(n_cells, n_steps)
    return overall, per_cell, series


def replay(sim_config: netsim.SimConfig, model, policy_config: PolicyConfig = PolicyConfig(), seed: int = None,
           return_runs: bool = False):
    """Coupled baseline / policy runs; ``model`` is a learn.Model or any scorer callable."""
    cfg = sim_config if seed is None else replace(sim_config, seed=seed)
    topo = netsim.build_topology(cfg)
    rows = np.arange(len(topo))
    scorer = model if callable(model) else ModelScorer(model, topo)
    p_hist = np.full((len(topo), cfg.n_steps), np.nan)

    def admit(step, state):
        p = scorer(step, state)
        if p is None:
            return None
        p = np.asarray(p, dtype=np.float64)
        p_hist[:, step] = p
        return admit_mask(p, state.req_rows, state.req_priority, policy_config)

    base = netsim.simulate_block(cfg, topo, rows)
    pol = netsim.simulate_block(cfg, topo, rows, admit)
    variants, per_cell, series = {}, {}, {}
    for name, run in (("baseline", base), ("policy", pol)):
        variants[name], per_cell[name], series[name] = summarize(run, cfg)
    xy = np.array([[c.x, c.y] for c in topo.cells])
    report = PolicyReport(policy_config.theta, topo.ids.copy(), xy, base.timestamps, variants, per_cell, series,
                          int(len(base.requests.step)), p_hist)
    return (report, base, pol) if return_runs else report


# ---------------------------------------------------------------- outputs

REPORT_HEADER = "variant,cell_id,mean_delay_ms,p95_delay_ms,admitted,rejected_low,rejected_high"


def _row(variant, cell, s: VariantStats) -> str:
    return (f"{variant},{cell},{fmt_real(s.mean_delay_ms)},{fmt_real(s.p95_delay_ms)},"
            f"{s.admitted},{s.rejected_low},{s.rejected_high}")


def report_csv(report: PolicyReport) -> str:
    """Per-variant totals (cell_id ``all``) followed by one row per cell."""
    lines = [REPORT_HEADER]
    for name in ("baseline", "policy"):
        lines.append(_row(name, "all", report.variants[name]))
        for c, s in zip(report.cell_ids.tolist(), report.per_cell[name]):
            lines.append(_row(name, c, s))
    return "\n".join(lines) + "\n"


def write_report(report: PolicyReport, path) -> None:
    Path(path).write_text(report_csv(report))


def comparison_csv(report: PolicyReport) -> str:
    lines = ["cell_id,x_km,y_km,baseline_mean_delay_ms,policy_mean_delay_ms"]
    for i, c in enumerate(report.cell_ids.tolist()):
        b, p = report.per_cell["baseline"][i], report.per_cell["policy"][i]
        lines.append(f"{c},{fmt_real(report.xy[i, 0])},{fmt_real(report.xy[i, 1])},"
                     f"{fmt_real(b.mean_delay_ms)},{fmt_real(p.mean_delay_ms)}")
    return "\n".join(lines) + "\n"


def delay_color(d: float, vmax: float) -> tuple:
    """Linear blue-to-red scale; the red channel encodes delay."""
    f = 0.0 if not np.isfinite(d) or vmax <= 0 else min(max(d / vmax, 0.0), 1.0)
    r = int(round(255 * f))
    return r, 40, 255 - r


def comparison_svg(report: PolicyReport, panel_px: int = 360) -> str:
    means = {n: np.array([s.mean_delay_ms for s in report.per_cell[n]]) for n in ("baseline", "policy")}
    finite = np.concatenate([m[np.isfinite(m)] for m in means.values()])
    vmax = float(finite.max()) if len(finite) else 1.0
    xy = report.xy
    lo, span = xy.min(axis=0), np.maximum(np.ptp(xy, axis=0), 1e-9)
    pad = 24
    scale = (panel_px - 2 * pad) / span.max()
    radius = max(3.0, min(12.0, 0.4 * scale * (span.max() / max(np.sqrt(len(xy)), 1.0))))
    w, h = 2 * panel_px + 120, panel_px + 60
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           '<style>text{font-family:monospace;font-size:12px}</style>',
           f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>']
    titles = {"baseline": "without policy", "policy": f"with policy (theta={fmt_real(report.theta)})"}
    for k, name in enumerate(("baseline", "policy")):
        out.append(f'<text class="title" x="{k * panel_px + panel_px // 2}" y="20" text-anchor="middle">'
                   f'{escape(titles[name])}</text>')
        out.append(f'<g class="panel" transform="translate({k * panel_px},30)">')
        out.append(f'<rect x="0" y="0" width="{panel_px}" height="{panel_px}" fill="none" stroke="#888"/>')
        for i, c in enumerate(report.cell_ids.tolist()):
            cx = pad + (xy[i, 0] - lo[0]) * scale
            cy = panel_px - pad - (xy[i, 1] - lo[1]) * scale
            r, g, b = delay_color(means[name][i], vmax)
            out.append(f'<circle class="cell" cx="{cx:.2f}" cy="{cy:.2f}" r="{radius:.2f}" fill="rgb({r},{g},{b})">'
                       f'<title>cell {c}: {fmt_real(round(float(means[name][i]), 3))} ms</title></circle>')
        out.append("</g>")
    # shared color bar
    bx, by, bh = 2 * panel_px + 30, 30, panel_px
    for j in range(32):
        f = 1.0 - j / 31.0
        r, g, b = delay_color(f * vmax, vmax)
        out.append(f'<rect class="bar" x="{bx}" y="{by + j * bh / 32:.2f}" width="16" height="{bh / 32 + 0.5:.2f}" '
                   f'fill="rgb({r},{g},{b})"/>')
    out.append(f'<text class="scale" x="{bx + 20}" y="{by + 10}">{vmax:.1f} ms</text>')
    out.append(f'<text class="scale" x="{bx + 20}" y="{by + bh}">0 ms</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_delay_comparison(report: PolicyReport, path, fmt: str = None) -> None:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "svg"):
        raise ValueError(f"unsupported comparison format {fmt!r} (use csv or svg)")
    path.write_text(comparison_csv(report) if fmt == "csv" else comparison_svg(report))
