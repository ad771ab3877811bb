"""Deterministic synthetic cellular telemetry.

Offered load per (cell, step) is ``peak * cell_scale * region_profile *
events * lognormal noise``.  Utilization is load over capacity, clamped at
``utilization_cap``; delay follows ``base / (1 - rho)``.  KPIs, QoS samples
(one per admitted connection), TDRs and MRs are emitted from the realized
utilization.  All randomness comes from :mod:`netqos.rng`, keyed by
(cell, step, channel), so generation order does not matter.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import rng
from .config import apply_flat, read_config
from .errors import ConfigInvalid
from .telemetry import (
    KPI_NAMES,
    LOW,
    REGIONS,
    SERVICE_TYPES,
    CellInfo,
    KpiTable,
    MrTable,
    QosTable,
    Topology,
    Trace,
    TrafficTable,
    fmt_real,
    round6,
)

MINUTES_PER_DAY = 1440
GT_HEADER = "timestamp,cell_id,offered_load,utilization,congested"
CHUNK_CELLS = 8  # fixed work unit; keeps results independent of thread count


@dataclass(frozen=True)
class Event:
    cell_ids: tuple
    start_ts: int
    end_ts: int
    load_multiplier: float

    def __post_init__(self):
        if not self.start_ts < self.end_ts:
            raise ConfigInvalid(f"event start {self.start_ts} not before end {self.end_ts}")
        if not self.load_multiplier > 1:
            raise ConfigInvalid(f"event multiplier {self.load_multiplier} must be > 1")

    @classmethod
    def parse(cls, text: str) -> "Event":
        """Parse ``cells:1,2;start:960;end:1200;mult:3.0``."""
        parts = {}
        for item in text.split(";"):
            if ":" not in item:
                raise ConfigInvalid(f"bad event field {item!r}")
            k, v = item.split(":", 1)
            parts[k.strip()] = v.strip()
        if set(parts) != {"cells", "start", "end", "mult"}:
            raise ConfigInvalid(f"event needs cells/start/end/mult, got {sorted(parts)}")
        try:
            cells = tuple(int(c) for c in parts["cells"].split(",") if c.strip())
            return cls(cells, int(parts["start"]), int(parts["end"]), float(parts["mult"]))
        except ValueError as e:
            raise ConfigInvalid(f"bad event {text!r}: {e}") from None

    def format(self) -> str:
        cells = ",".join(str(c) for c in self.cell_ids)
        return f"cells:{cells};start:{self.start_ts};end:{self.end_ts};mult:{self.load_multiplier!r}"


@dataclass(frozen=True)
class RegionProfile:
    floor: float
    bumps: tuple  # (amplitude, center minute, width minutes)
    weekday: float
    weekend: float


REGION_PROFILES = {
    # weekday office hours, weekend near idle
    "work": RegionProfile(0.2, ((1.0, 630.0, 100.0), (0.9, 900.0, 110.0)), 1.0, 0.1),
    # small morning bump, large evening peak, every day
    "residential": RegionProfile(0.3, ((0.45, 480.0, 70.0), (1.0, 1230.0, 110.0)), 0.95, 1.0),
    # daylight activity, weekends ~2.5x weekdays
    "leisure": RegionProfile(0.2, ((1.0, 780.0, 150.0), (0.8, 1020.0, 120.0)), 0.4, 1.0),
}


@dataclass(frozen=True)
class SimConfig:
    n_cells: int = 77
    spacing_km: float = 0.5
    regions: tuple = ()  # explicit per-cell regions; empty = concentric zones
    days: int = 5
    step_minutes: int = 15
    start_dow: int = 3  # 0 = Monday; Thursday start puts a weekend in 5 days
    users_per_cell: int = 400
    demand_per_user: float = 0.3  # resource units/min per user at profile peak
    conn_load: float = 4.0  # resource units/min carried by one connection
    capacity: float = 100.0
    capacity_jitter: float = 0.1
    scale_jitter: float = 0.15
    low_priority_fraction: float = 0.6
    base_delay_ms: float = 20.0
    utilization_cap: float = 0.99
    loss_knee: float = 0.7
    congestion_threshold: float = 0.85
    load_sigma: float = 0.35
    load_noise_corr: float = 0.8  # lag-one correlation of the log-load noise
    kpi_sigma: float = 0.01
    delay_sigma: float = 0.1
    jitter_sigma: float = 0.2
    loss_sigma: float = 0.002
    sinr_sigma: float = 1.0
    events: tuple = ()
    seed: int = 42

    def __post_init__(self):
        if self.n_cells < 1:
            raise ConfigInvalid("n_cells must be >= 1")
        if self.days < 1:
            raise ConfigInvalid("days must be >= 1")
        if self.step_minutes <= 0 or MINUTES_PER_DAY % self.step_minutes:
            raise ConfigInvalid("step_minutes must divide 1440")
        if not 0 < self.utilization_cap < 1:
            raise ConfigInvalid("utilization_cap must lie in (0,1)")
        if not self.base_delay_ms > 0:
            raise ConfigInvalid("base_delay_ms must be > 0")
        if not 0 <= self.start_dow <= 6:
            raise ConfigInvalid("start_dow must be 0..6")
        if not 0 <= self.low_priority_fraction <= 1:
            raise ConfigInvalid("low_priority_fraction must lie in [0,1]")
        if self.capacity <= 0 or self.conn_load <= 0:
            raise ConfigInvalid("capacity and conn_load must be > 0")
        if self.regions and len(self.regions) != self.n_cells:
            raise ConfigInvalid("regions must list one region per cell")
        for r in self.regions:
            if r not in REGIONS:
                raise ConfigInvalid(f"unknown region {r!r}")
        if not 0 <= self.load_noise_corr < 1:
            raise ConfigInvalid("load_noise_corr must lie in [0,1)")
        for s in ("load_sigma", "kpi_sigma", "delay_sigma", "jitter_sigma", "loss_sigma", "sinr_sigma"):
            if getattr(self, s) < 0:
                raise ConfigInvalid(f"{s} must be >= 0")

    @property
    def n_steps(self) -> int:
        return self.days * MINUTES_PER_DAY // self.step_minutes

    def noise_free(self) -> "SimConfig":
        return replace(self, load_sigma=0.0, kpi_sigma=0.0, delay_sigma=0.0, jitter_sigma=0.0,
                       loss_sigma=0.0, sinr_sigma=0.0)


def load_sim_config(path) -> SimConfig:
    """Read a SimConfig file; section names are organizational only."""
    parsed = read_config(path)
    flat: dict = {}
    events = []
    for section, kv in parsed.items():
        for k, v in kv.items():
            if k == "event":
                events.extend(Event.parse(e) for e in v)
            elif k in flat:
                raise ConfigInvalid(f"key {k!r} given twice")
            else:
                flat[k] = v
    cfg = apply_flat(SimConfig, flat)
    if events:
        cfg = replace(cfg, events=cfg.events + tuple(events))
    return cfg


def format_sim_config(cfg: SimConfig) -> str:
    lines = ["[sim]"]
    for k in ("n_cells", "spacing_km", "days", "step_minutes", "start_dow", "seed"):
        lines.append(f"{k} = {getattr(cfg, k)}")
    if cfg.regions:
        lines.append("regions = " + ",".join(cfg.regions))
    lines.append("[load]")
    for k in ("users_per_cell", "demand_per_user", "conn_load", "capacity", "capacity_jitter",
              "scale_jitter", "low_priority_fraction"):
        lines.append(f"{k} = {getattr(cfg, k)}")
    lines.append("[congestion]")
    for k in ("base_delay_ms", "utilization_cap", "loss_knee", "congestion_threshold"):
        lines.append(f"{k} = {getattr(cfg, k)}")
    lines.append("[noise]")
    for k in ("load_sigma", "load_noise_corr", "kpi_sigma", "delay_sigma", "jitter_sigma", "loss_sigma", "sinr_sigma"):
        lines.append(f"{k} = {getattr(cfg, k)}")
    if cfg.events:
        lines.append("[events]")
        lines.extend(f"event = {e.format()}" for e in cfg.events)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- load model

def _shape(profile: RegionProfile, minute) -> np.ndarray:
    m = np.asarray(minute, dtype=np.float64)
    out = np.full(m.shape, profile.floor)
    for amp, center, width in profile.bumps:
        d = np.abs(m - center)
        d = np.minimum(d, MINUTES_PER_DAY - d)  # circular distance wraps midnight
        out = out + amp * np.exp(-0.5 * (d / width) ** 2)
    return out


_PEAK = {name: float(_shape(p, np.arange(MINUTES_PER_DAY)).max()) for name, p in REGION_PROFILES.items()}


def region_load_profile(region: str, day_of_week, minute_of_day, profiles=None):
    """Relative offered-load multiplier (peak weekday-or-weekend value is 1)."""
    if profiles is None:
        profiles = REGION_PROFILES
        peak = _PEAK[region]
    else:
        peak = float(_shape(profiles[region], np.arange(MINUTES_PER_DAY)).max())
    p = profiles[region]
    dow = np.asarray(day_of_week)
    day_mult = np.where(dow >= 5, p.weekend, p.weekday)
    out = day_mult * _shape(p, minute_of_day) / peak
    return float(out) if np.ndim(out) == 0 else out


def cell_delay(utilization, config: SimConfig):
    """Mean delay (ms) at utilization rho: base / (1 - min(rho, cap))."""
    rho = np.minimum(np.maximum(np.asarray(utilization, dtype=np.float64), 0.0), config.utilization_cap)
    d = config.base_delay_ms / (1.0 - rho)
    return float(d) if np.ndim(d) == 0 else d


def build_topology(cfg: SimConfig) -> Topology:
    cols = math.ceil(math.sqrt(cfg.n_cells))
    ids = np.arange(cfg.n_cells)
    x = (ids % cols) * cfg.spacing_km
    y = (ids // cols) * cfg.spacing_km
    if cfg.regions:
        regions = list(cfg.regions)
    else:
        # concentric zones around the layout centroid: work core, residential ring, leisure fringe
        dist = np.hypot(x - x.mean(), y - y.mean())
        order = np.lexsort((ids, np.round(dist, 9)))
        regions = [""] * cfg.n_cells
        for rank, i in enumerate(order):
            regions[i] = REGIONS[min(3 * rank // cfg.n_cells, 2)]
    u = rng.uniform(cfg.seed, ids, rng.CH_CAPACITY)
    cap = round6(cfg.capacity * (1.0 + cfg.capacity_jitter * (2.0 * u - 1.0)))
    return Topology([CellInfo(int(i), float(round6(x[i])), float(round6(y[i])), regions[i], float(cap[i]))
                     for i in ids])


# ---------------------------------------------------------------- ground truth

@dataclass(eq=False)
class GroundTruth:
    """Dense (cell, step) truth; rows follow ``cell_ids``, columns ``timestamps``."""
    cell_ids: np.ndarray
    timestamps: np.ndarray
    offered_load: np.ndarray
    utilization: np.ndarray
    congested: np.ndarray
    connections: Optional[np.ndarray] = None  # admitted connections; absent when read from gt.csv

    def equals(self, other: "GroundTruth") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("cell_ids", "timestamps", "offered_load", "utilization", "congested"))


def write_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(GT_HEADER + "\n")
        for i, cid in enumerate(gt.cell_ids.tolist()):
            for j, ts in enumerate(gt.timestamps.tolist()):
                f.write(f"{ts},{cid},{fmt_real(gt.offered_load[i, j])},"
                        f"{fmt_real(gt.utilization[i, j])},{int(gt.congested[i, j])}\n")


def read_ground_truth(path) -> GroundTruth:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ts = np.unique(data[:, 0]).astype(np.int64)
    cells = np.unique(data[:, 1]).astype(np.int64)
    shape = (len(cells), len(ts))
    ci = np.searchsorted(cells, data[:, 1].astype(np.int64))
    ti = np.searchsorted(ts, data[:, 0].astype(np.int64))
    off, util, cong = np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=bool)
    off[ci, ti] = data[:, 2]
    util[ci, ti] = data[:, 3]
    cong[ci, ti] = data[:, 4] != 0
    return GroundTruth(cells, ts, off, util, cong)


# ---------------------------------------------------------------- engine

@dataclass
class Requests:
    """Connection requests for a block of cells, ordered by (cell, step, index)."""
    cell: np.ndarray  # cell_id
    row: np.ndarray  # row in the block
    step: np.ndarray
    index: np.ndarray
    priority: np.ndarray
    share: np.ndarray  # offered load carried by the request
    nbytes: np.ndarray


@dataclass
class SimRun:
    cell_ids: np.ndarray
    timestamps: np.ndarray
    offered: np.ndarray  # (cells, steps)
    load: np.ndarray  # admitted load
    utilization: np.ndarray
    kpi: np.ndarray  # (cells, steps, K)
    requests: Requests
    admitted: np.ndarray  # bool per request
    trace_parts: tuple  # (kpi, qos, tdr, mr) tables for this block


# admit_fn(step, run_state) -> bool mask over the step's requests, or None to admit all
AdmitFn = Callable[[int, "StepState"], Optional[np.ndarray]]


@dataclass
class StepState:
    """What a controller can observe before deciding on step ``step``'s requests."""
    step: int
    cell_ids: np.ndarray
    kpi: np.ndarray  # (cells, steps, K); columns >= step not yet realized
    conn_count: np.ndarray  # admitted connections per (cell, step)
    conn_bytes: np.ndarray
    req_rows: np.ndarray  # block row of each request this step
    req_priority: np.ndarray


def _ar1(z: np.ndarray, phi: float) -> np.ndarray:
    """Stationary unit-variance AR(1) along axis 1 driven by innovations ``z``."""
    out = np.empty_like(z)
    out[:, 0] = z[:, 0]
    c = np.sqrt(1.0 - phi * phi)
    for s in range(1, z.shape[1]):
        out[:, s] = phi * out[:, s - 1] + c * z[:, s]
    return out


def _offered_load(cfg: SimConfig, topo: Topology, rows: np.ndarray) -> np.ndarray:
    ids = topo.ids[rows]
    steps = np.arange(cfg.n_steps)
    ts = steps * cfg.step_minutes
    dow = (cfg.start_dow + ts // MINUTES_PER_DAY) % 7
    minute = ts % MINUTES_PER_DAY
    prof = np.empty((len(rows), cfg.n_steps))
    for r, i in enumerate(rows):
        prof[r] = region_load_profile(topo.cells[i].region_type, dow, minute)
    scale = 1.0 + cfg.scale_jitter * (2.0 * rng.uniform(cfg.seed, ids, rng.CH_CELL_SCALE) - 1.0)
    mult = np.ones_like(prof)
    for ev in cfg.events:
        hit = np.isin(ids, ev.cell_ids)
        window = (ts >= ev.start_ts) & (ts < ev.end_ts)
        mult[np.ix_(hit, window)] *= ev.load_multiplier
    s = cfg.load_sigma
    z = rng.normal(cfg.seed, ids[:, None], steps[None, :], rng.CH_LOAD)
    if cfg.load_noise_corr > 0:
        z = _ar1(z, cfg.load_noise_corr)
    noise = np.exp(s * z - 0.5 * s * s)
    peak = cfg.users_per_cell * cfg.demand_per_user
    return round6(peak * scale[:, None] * prof * mult * noise)


def kpi_from_utilization(rho, conns, cfg: SimConfig, noise=None) -> np.ndarray:
    """KPI vectors (registry order) for utilization ``rho`` and connection counts."""
    rho = np.asarray(rho, dtype=np.float64)
    clean = np.stack([
        0.05 + 0.6 * rho,                 # prb_util_ul_rate
        rho,                              # prb_util_dl_rate
        0.08 + 0.7 * rho,                 # pdcch_util_rate
        0.02 + 0.25 * rho,                # prach_util_rate
        0.995 - 0.3 * rho ** 4,           # rrc_attconnestab_ue_rate
        0.985 - 0.2 * rho ** 3,           # ho_succoutintraenb_rate
        np.asarray(conns, dtype=np.float64),  # rrc_userconnmax
        0.998 - 0.25 * rho ** 5,          # erab_estab_succ_rate
    ], axis=-1)
    if noise is not None:
        rates = np.ones(len(KPI_NAMES), dtype=bool)
        rates[6] = False
        clean = clean + np.where(rates, noise, 0.0)
        clean[..., rates] = np.clip(clean[..., rates], 0.0, 1.0)
    return round6(clean)


def _make_requests(cfg: SimConfig, topo: Topology, rows: np.ndarray, offered: np.ndarray) -> Requests:
    ids = topo.ids[rows]
    steps = np.arange(cfg.n_steps)
    u = rng.uniform(cfg.seed, ids[:, None], steps[None, :], rng.CH_CONN_COUNT)
    n = np.maximum(1, np.floor(offered / cfg.conn_load + u)).astype(np.int64)
    flat_n = n.ravel()
    total = int(flat_n.sum())
    group = np.repeat(np.arange(flat_n.size), flat_n)
    starts = np.cumsum(flat_n) - flat_n
    index = np.arange(total) - starts[group]
    row = group // cfg.n_steps
    step = group % cfg.n_steps
    cell = ids[row]
    pu = rng.uniform(cfg.seed, cell, step, rng.CH_PRIORITY, index)
    priority = np.where(pu < cfg.low_priority_fraction, LOW, 1 - LOW).astype(np.int64)
    share = offered.ravel()[group] / flat_n[group]
    nbytes = np.floor(share * 1.0e4 * cfg.step_minutes
                      * (0.5 + rng.uniform(cfg.seed, cell, step, rng.CH_BYTES, index))).astype(np.int64)
    return Requests(cell, row, step, index, priority, share, nbytes)


def _emit_connections(cfg: SimConfig, req: Requests, keep: np.ndarray, util: np.ndarray):
    cell, step, index = req.cell[keep], req.step[keep], req.index[keep]
    rho = util[req.row[keep], step]
    ts = step * cfg.step_minutes
    seed = cfg.seed

    base = cell_delay(rho, cfg)
    delay = round6(base * np.exp(cfg.delay_sigma * rng.normal(seed, cell, step, rng.CH_DELAY, index)))
    over = np.maximum(0.0, rho - cfg.loss_knee)
    jit = base * (0.05 + 0.5 * over) * np.exp(cfg.jitter_sigma * rng.normal(seed, cell, step, rng.CH_JITTER, index))
    loss = 0.001 + 2.0 * over ** 2 + cfg.loss_sigma * rng.normal(seed, cell, step, rng.CH_LOSS, index)
    user = cell * 10000 + np.floor(
        rng.uniform(seed, cell, step, rng.CH_USER, index) * cfg.users_per_cell).astype(np.int64)
    qos = QosTable(ts, cell.copy(), user, delay, round6(jit), round6(np.clip(loss, 0.0, 1.0)))

    offset = np.floor(rng.uniform(seed, cell, step, rng.CH_START, index) * cfg.step_minutes).astype(np.int64)
    dur = 1 + np.floor(rng.uniform(seed, cell, step, rng.CH_DURATION, index) * cfg.step_minutes).astype(np.int64)
    nbytes = req.nbytes[keep]
    svc = np.floor(rng.uniform(seed, cell, step, rng.CH_SERVICE, index) * len(SERVICE_TYPES)).astype(np.int64)
    tdr = TrafficTable(ts + offset, ts + offset + dur, cell.copy(), user, nbytes, svc, req.priority[keep])

    user_sinr = 5.0 + 15.0 * rng.uniform(seed, user, rng.CH_USER_SINR)
    sinr = user_sinr - 8.0 * rho + cfg.sinr_sigma * rng.normal(seed, cell, step, rng.CH_SINR, index)
    rsrq = -10.0 - 5.0 * rho + 0.5 * cfg.sinr_sigma * rng.normal(seed, cell, step, rng.CH_RSRQ, index)
    mr = MrTable(ts, cell.copy(), user, round6(sinr), round6(rsrq))
    return qos, tdr, mr


def simulate_block(cfg: SimConfig, topo: Topology, rows, admit_fn: Optional[AdmitFn] = None) -> SimRun:
    """Run the step loop for the cells at topology positions ``rows``."""
    rows = np.asarray(rows, dtype=np.int64)
    ids = topo.ids[rows]
    n_cells, n_steps = len(rows), cfg.n_steps
    timestamps = np.arange(n_steps, dtype=np.int64) * cfg.step_minutes
    offered = _offered_load(cfg, topo, rows)
    req = _make_requests(cfg, topo, rows, offered)
    capacity = topo.capacity[rows]

    # requests sorted by step for the loop; stable keeps (cell, index) order inside a step
    by_step = np.argsort(req.step, kind="stable")
    bounds = np.searchsorted(req.step[by_step], np.arange(n_steps + 1))
    n_req = np.bincount(req.row * n_steps + req.step, minlength=n_cells * n_steps).reshape(n_cells, n_steps)

    admitted = np.ones(len(req.step), dtype=bool)
    load = np.zeros((n_cells, n_steps))
    util = np.zeros((n_cells, n_steps))
    kpi = np.zeros((n_cells, n_steps, len(KPI_NAMES)))
    conn_count = np.zeros((n_cells, n_steps), dtype=np.int64)
    conn_bytes = np.zeros((n_cells, n_steps), dtype=np.int64)
    kpi_noise = cfg.kpi_sigma * rng.normal(cfg.seed, ids[:, None, None], np.arange(n_steps)[None, :, None],
                                           rng.CH_KPI, np.arange(len(KPI_NAMES))[None, None, :])
    req_bytes = req.nbytes

    for s in range(n_steps):
        sel = by_step[bounds[s]:bounds[s + 1]]
        if admit_fn is not None:
            state = StepState(s, ids, kpi, conn_count, conn_bytes, req.row[sel], req.priority[sel])
            mask = admit_fn(s, state)
            if mask is not None:
                admitted[sel] = mask
        a = np.bincount(req.row[sel][admitted[sel]], minlength=n_cells)
        n = n_req[:, s]
        col = np.where(a == n, offered[:, s], offered[:, s] * a / n)
        load[:, s] = round6(col)
        util[:, s] = round6(np.minimum(load[:, s] / capacity, cfg.utilization_cap))
        conn_count[:, s] = a
        conn_bytes[:, s] = np.bincount(req.row[sel][admitted[sel]], weights=req_bytes[sel][admitted[sel]],
                                       minlength=n_cells).astype(np.int64)
        kpi[:, s, :] = kpi_from_utilization(util[:, s], a, cfg, kpi_noise[:, s, :])

    qos, tdr, mr = _emit_connections(cfg, req, admitted, util)
    kpi_table = KpiTable(np.tile(timestamps, n_cells), np.repeat(ids, n_steps), kpi.reshape(-1, len(KPI_NAMES)))
    return SimRun(ids, timestamps, offered, load, util, kpi, req, admitted, (kpi_table, qos, tdr, mr))


def _chunks(n: int):
    return [np.arange(i, min(i + CHUNK_CELLS, n)) for i in range(0, n, CHUNK_CELLS)]


def generate_trace(config: SimConfig, threads: int = 1):
    """Generate ``(Trace, GroundTruth)``; identical for any ``threads``."""
    topo = build_topology(config)
    for ev in config.events:
        for c in ev.cell_ids:
            if c not in topo:
                raise ConfigInvalid(f"event references unknown cell {c}")
    chunks = _chunks(len(topo))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda rows: simulate_block(config, topo, rows), chunks))
    else:
        runs = [simulate_block(config, topo, rows) for rows in chunks]
    return assemble(config, topo, runs)


def assemble(config: SimConfig, topo: Topology, runs):
    parts = list(zip(*(r.trace_parts for r in runs)))
    trace = Trace(topo, KpiTable.concat(parts[0]), QosTable.concat(parts[1]),
                  TrafficTable.concat(parts[2]), MrTable.concat(parts[3]),
                  config.start_dow, config.step_minutes)
    util = np.concatenate([r.utilization for r in runs])
    gt = GroundTruth(np.concatenate([r.cell_ids for r in runs]), runs[0].timestamps,
                     np.concatenate([r.load for r in runs]), util,
                     util >= config.congestion_threshold,
                     np.concatenate([np.bincount(r.requests.row[r.admitted] * config.n_steps
                                                 + r.requests.step[r.admitted],
                                                 minlength=len(r.cell_ids) * config.n_steps
                                                 ).reshape(len(r.cell_ids), -1) for r in runs]))
    return trace.normalized(), gt


def oracle_bayes_accuracy(ground_truth: GroundTruth, dataset_config, examples, sim_config: SimConfig = None) -> float:
    """Accuracy of the clairvoyant rule on ``examples``.

    Predicts deterioration iff the true (noise-free) mean delay over the
    ``horizon`` steps from the anchor exceeds the preceding ``horizon`` steps'
    mean by more than the deadband.  Means are weighted by admitted
    connection counts when the ground truth carries them.
    """
    cfg = sim_config or SimConfig()
    if len(examples) == 0:
        return 0.0
    ts = ground_truth.timestamps
    step = int(ts[1] - ts[0]) if len(ts) > 1 else cfg.step_minutes
    rows = np.searchsorted(ground_truth.cell_ids, examples.cell_id)
    cols = ((examples.t - ts[0]) // step).astype(np.int64)
    delay = cell_delay(ground_truth.utilization, cfg)
    w = (ground_truth.connections.astype(np.float64) if ground_truth.connections is not None
         else np.ones_like(delay))
    h = dataset_config.horizon
    wd = np.cumsum(np.pad(w * delay, ((0, 0), (1, 0))), axis=1)
    ww = np.cumsum(np.pad(w, ((0, 0), (1, 0))), axis=1)
    before = (wd[rows, cols] - wd[rows, cols - h]) / (ww[rows, cols] - ww[rows, cols - h])
    after = (wd[rows, cols + h] - wd[rows, cols]) / (ww[rows, cols + h] - ww[rows, cols])
    pred = after > before * (1.0 + dataset_config.deadband)
    return float(np.mean(pred.astype(np.int64) == examples.y))


def benchmark_config(congested: bool = False, **overrides) -> SimConfig:
    """The standard benchmark: 77 cells, 5 days, 15-minute steps, seed 42."""
    cfg = SimConfig(**overrides)
    if congested:
        cfg = replace(cfg, events=congestion_events(cfg))
    return cfg


def congestion_events(cfg: SimConfig, multiplier: float = 3.0) -> tuple:
    """A daily 16:00-20:00 surge on the third of cells closest to the layout center."""
    topo = build_topology(replace(cfg, events=()))
    xy = np.array([[c.x, c.y] for c in topo.cells])
    dist = np.hypot(xy[:, 0] - xy[:, 0].mean(), xy[:, 1] - xy[:, 1].mean())
    hot = tuple(int(c) for c in topo.ids[np.lexsort((topo.ids, np.round(dist, 9)))][: max(1, len(topo) // 3)])
    hot = tuple(sorted(hot))
    return tuple(Event(hot, d * MINUTES_PER_DAY + 960, d * MINUTES_PER_DAY + 1200, multiplier)
                 for d in range(cfg.days))
