"""Telemetry data model (KPI, DMU QoS, TDR, MR, topology) and CSV I/O.

Tables are stored column-wise in numpy arrays; the per-row record types
(``KpiFrame``, ``QosSample`` ...) are views produced by ``rows()``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InvariantViolation, MalformedRow, MissingFile

KPI_NAMES = (
    "prb_util_ul_rate",
    "prb_util_dl_rate",
    "pdcch_util_rate",
    "prach_util_rate",
    "rrc_attconnestab_ue_rate",
    "ho_succoutintraenb_rate",
    "rrc_userconnmax",
    "erab_estab_succ_rate",
)
KPI_INDEX = {name: i for i, name in enumerate(KPI_NAMES)}
USERCONN = KPI_INDEX["rrc_userconnmax"]
RATE_MASK = np.array([name != "rrc_userconnmax" for name in KPI_NAMES])

REGIONS = ("work", "residential", "leisure")
SERVICE_TYPES = ("web", "email", "streaming", "other")
PRIORITIES = ("low", "high")
LOW, HIGH = 0, 1

TOPOLOGY_HEADER = "cell_id,x_km,y_km,region_type,capacity"
KPI_HEADER = "timestamp,cell_id," + ",".join(KPI_NAMES)
QOS_HEADER = "timestamp,cell_id,user_id,delay_ms,jitter_ms,loss_rate"
TDR_HEADER = "start_ts,end_ts,cell_id,user_id,bytes,service_type,priority"
MR_HEADER = "timestamp,cell_id,user_id,sinr_db,rsrq_db"
META_FILE = "meta.txt"


def fmt_real(v: float) -> str:
    """Fixed-point with up to 6 fractional digits, at least one kept."""
    s = f"{v:.6f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    if s == "-0.0":
        s = "0.0"
    return s


def round6(a):
    return np.round(np.asarray(a, dtype=np.float64), 6)


# ---------------------------------------------------------------- row types

class KpiFrame(NamedTuple):
    cell_id: int
    timestamp: int
    values: tuple


class QosSample(NamedTuple):
    timestamp: int
    cell_id: int
    user_id: int
    delay: float
    jitter: float
    loss_rate: float


class TrafficRecord(NamedTuple):
    start_ts: int
    end_ts: int
    cell_id: int
    user_id: int
    bytes: int
    service_type: str
    priority: str


class MeasureReport(NamedTuple):
    timestamp: int
    cell_id: int
    user_id: int
    sinr_db: float
    rsrq_db: float


@dataclass(frozen=True)
class CellInfo:
    cell_id: int
    x: float
    y: float
    region_type: str
    capacity: float


class Topology:
    """Cells plus neighbor lists ordered by distance, ties by lower cell_id."""

    def __init__(self, cells):
        self.cells = tuple(sorted(cells, key=lambda c: c.cell_id))
        self.ids = np.array([c.cell_id for c in self.cells], dtype=np.int64)
        self._pos = {c.cell_id: i for i, c in enumerate(self.cells)}
        xy = np.array([[c.x, c.y] for c in self.cells], dtype=np.float64).reshape(-1, 2)
        d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
        self._neighbors = {}
        for i, c in enumerate(self.cells):
            order = np.lexsort((self.ids, d[i]))
            self._neighbors[c.cell_id] = tuple(int(self.ids[j]) for j in order if j != i)

    def __len__(self):
        return len(self.cells)

    def __eq__(self, other):
        return isinstance(other, Topology) and self.cells == other.cells

    def __contains__(self, cell_id):
        return int(cell_id) in self._pos

    def index(self, cell_id) -> int:
        return self._pos[int(cell_id)]

    def cell(self, cell_id) -> CellInfo:
        return self.cells[self._pos[int(cell_id)]]

    def neighbors(self, cell_id) -> tuple:
        return self._neighbors[int(cell_id)]

    @property
    def capacity(self) -> np.ndarray:
        return np.array([c.capacity for c in self.cells], dtype=np.float64)


# ---------------------------------------------------------------- tables

class _Table:
    """Column-store helper; subclasses declare ``_cols``."""

    _cols: tuple = ()

    def __len__(self):
        return len(getattr(self, self._cols[0]))

    def take(self, idx):
        return type(self)(**{c: getattr(self, c)[idx] for c in self._cols})

    def equals(self, other) -> bool:
        return type(self) is type(other) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in self._cols)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{c: np.concatenate([getattr(p, c) for p in parts]) for c in cls._cols})

    def sorted(self):
        """Stable sort by (cell_id, timestamp)."""
        order = np.lexsort((self.timestamp, self.cell_id))
        return self.take(order)


@dataclass(eq=False)
class KpiTable(_Table):
    timestamp: np.ndarray
    cell_id: np.ndarray
    values: np.ndarray
    _cols = ("timestamp", "cell_id", "values")

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, len(KPI_NAMES))))

    @classmethod
    def from_rows(cls, frames):
        frames = list(frames)
        if not frames:
            return cls.empty()
        return cls(np.array([f.timestamp for f in frames], np.int64),
                   np.array([f.cell_id for f in frames], np.int64),
                   np.array([f.values for f in frames], np.float64).reshape(len(frames), -1))

    def rows(self) -> Iterator[KpiFrame]:
        for i in range(len(self)):
            yield KpiFrame(int(self.cell_id[i]), int(self.timestamp[i]), tuple(self.values[i].tolist()))


@dataclass(eq=False)
class QosTable(_Table):
    timestamp: np.ndarray
    cell_id: np.ndarray
    user_id: np.ndarray
    delay: np.ndarray
    jitter: np.ndarray
    loss_rate: np.ndarray
    _cols = ("timestamp", "cell_id", "user_id", "delay", "jitter", "loss_rate")

    @classmethod
    def empty(cls):
        i, f = np.zeros(0, np.int64), np.zeros(0)
        return cls(i, i, i, f, f, f)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        if not rows:
            return cls.empty()
        c = list(zip(*rows))
        return cls(*(np.array(c[k], np.int64) for k in range(3)),
                   *(np.array(c[k], np.float64) for k in range(3, 6)))

    def rows(self) -> Iterator[QosSample]:
        for r in zip(*(getattr(self, c).tolist() for c in self._cols)):
            yield QosSample(*r)


@dataclass(eq=False)
class TrafficTable(_Table):
    start_ts: np.ndarray
    end_ts: np.ndarray
    cell_id: np.ndarray
    user_id: np.ndarray
    bytes: np.ndarray
    service_type: np.ndarray  # index into SERVICE_TYPES
    priority: np.ndarray  # index into PRIORITIES
    _cols = ("start_ts", "end_ts", "cell_id", "user_id", "bytes", "service_type", "priority")

    @property
    def timestamp(self):
        return self.start_ts

    @classmethod
    def empty(cls):
        i = np.zeros(0, np.int64)
        return cls(i, i, i, i, i, i, i)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        if not rows:
            return cls.empty()
        c = list(zip(*rows))
        svc = np.array([SERVICE_TYPES.index(s) for s in c[5]], np.int64)
        pri = np.array([PRIORITIES.index(p) for p in c[6]], np.int64)
        return cls(*(np.array(c[k], np.int64) for k in range(5)), svc, pri)

    def rows(self) -> Iterator[TrafficRecord]:
        for r in zip(*(getattr(self, c).tolist() for c in self._cols)):
            yield TrafficRecord(*r[:5], SERVICE_TYPES[r[5]], PRIORITIES[r[6]])


@dataclass(eq=False)
class MrTable(_Table):
    timestamp: np.ndarray
    cell_id: np.ndarray
    user_id: np.ndarray
    sinr_db: np.ndarray
    rsrq_db: np.ndarray
    _cols = ("timestamp", "cell_id", "user_id", "sinr_db", "rsrq_db")

    @classmethod
    def empty(cls):
        i, f = np.zeros(0, np.int64), np.zeros(0)
        return cls(i, i, i, f, f)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        if not rows:
            return cls.empty()
        c = list(zip(*rows))
        return cls(*(np.array(c[k], np.int64) for k in range(3)),
                   *(np.array(c[k], np.float64) for k in range(3, 5)))

    def rows(self) -> Iterator[MeasureReport]:
        for r in zip(*(getattr(self, c).tolist() for c in self._cols)):
            yield MeasureReport(*r)


@dataclass(eq=False)
class Trace:
    topology: Topology
    kpi: KpiTable = field(default_factory=KpiTable.empty)
    qos: QosTable = field(default_factory=QosTable.empty)
    tdr: TrafficTable = field(default_factory=TrafficTable.empty)
    mr: MrTable = field(default_factory=MrTable.empty)
    start_dow: int = 0
    step_minutes: int = 15

    def normalized(self) -> "Trace":
        return Trace(self.topology, self.kpi.sorted(), self.qos.sorted(), self.tdr.sorted(),
                     self.mr.sorted(), self.start_dow, self.step_minutes)

    def equals(self, other: "Trace") -> bool:
        return (self.topology == other.topology and self.kpi.equals(other.kpi)
                and self.qos.equals(other.qos) and self.tdr.equals(other.tdr)
                and self.mr.equals(other.mr) and self.start_dow == other.start_dow
                and self.step_minutes == other.step_minutes)

    def timestamps(self) -> np.ndarray:
        return np.unique(self.kpi.timestamp)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


def _unknown_cells(table, name, topo_ids, out):
    bad = ~np.isin(table.cell_id, topo_ids)
    for i in np.flatnonzero(bad):
        out.append(Violation(f"{name}[{i}]", f"unknown cell_id {int(table.cell_id[i])}"))


def validate_trace(trace: Trace) -> list:
    """Every type-invariant violation in ``trace``; empty list means valid."""
    out: list[Violation] = []
    topo = trace.topology
    ids = [c.cell_id for c in topo.cells]
    seen = set()
    for c in topo.cells:
        loc = f"topology[cell {c.cell_id}]"
        if c.cell_id in seen:
            out.append(Violation(loc, "duplicate cell_id"))
        seen.add(c.cell_id)
        if c.cell_id < 0:
            out.append(Violation(loc, "negative cell_id"))
        if not (c.capacity > 0):
            out.append(Violation(loc, f"capacity {c.capacity} not > 0"))
        if c.region_type not in REGIONS:
            out.append(Violation(loc, f"unknown region_type {c.region_type!r}"))
        if not (math.isfinite(c.x) and math.isfinite(c.y)):
            out.append(Violation(loc, "non-finite coordinates"))
    topo_ids = np.array(ids, dtype=np.int64)

    k = trace.kpi
    if k.values.ndim != 2 or k.values.shape[1] != len(KPI_NAMES):
        out.append(Violation("kpi", f"expected {len(KPI_NAMES)} KPI values per frame"))
        return out
    _unknown_cells(k, "kpi", topo_ids, out)
    vals = k.values
    finite = np.isfinite(vals)
    for i, j in zip(*np.nonzero(~finite)):
        out.append(Violation(f"kpi[{i}]", f"{KPI_NAMES[j]} not finite"))
    rates = vals[:, RATE_MASK]
    rate_names = [n for n, m in zip(KPI_NAMES, RATE_MASK) if m]
    bad = finite[:, RATE_MASK] & ((rates < 0) | (rates > 1))
    for i, j in zip(*np.nonzero(bad)):
        out.append(Violation(f"kpi[{i}] (cell {int(k.cell_id[i])}, t {int(k.timestamp[i])})",
                             f"{rate_names[j]} = {rates[i, j]} outside [0,1]"))
    for i in np.flatnonzero(finite[:, USERCONN] & (vals[:, USERCONN] < 0)):
        out.append(Violation(f"kpi[{i}]", "rrc_userconnmax negative"))
    if len(k):
        order = np.lexsort((k.timestamp, k.cell_id))
        c_s, t_s = k.cell_id[order], k.timestamp[order]
        dup = (c_s[1:] == c_s[:-1]) & (t_s[1:] == t_s[:-1])
        for i in np.flatnonzero(dup):
            out.append(Violation("kpi", f"duplicate frame (cell_id={int(c_s[i])}, timestamp={int(t_s[i])})"))
        step = trace.step_minutes
        t0, t1 = int(k.timestamp.min()), int(k.timestamp.max())
        if step <= 0 or (t1 - t0) % step or np.any((k.timestamp - t0) % step):
            out.append(Violation("kpi", f"timestamps not on a {step}-minute grid"))
        else:
            n_grid = (t1 - t0) // step + 1
            for cid in ids:
                have = np.unique(t_s[c_s == cid])
                if len(have) != n_grid:
                    out.append(Violation(f"kpi[cell {cid}]",
                                         f"{n_grid - len(have)} missing steps on the time grid"))

    q = trace.qos
    _unknown_cells(q, "qos", topo_ids, out)
    for i in np.flatnonzero(~(q.delay > 0)):
        out.append(Violation(f"qos[{i}]", f"delay {q.delay[i]} not > 0"))
    for i in np.flatnonzero(~(q.jitter >= 0)):
        out.append(Violation(f"qos[{i}]", f"jitter {q.jitter[i]} negative"))
    for i in np.flatnonzero(~((q.loss_rate >= 0) & (q.loss_rate <= 1))):
        out.append(Violation(f"qos[{i}]", f"loss_rate {q.loss_rate[i]} outside [0,1]"))

    t = trace.tdr
    _unknown_cells(t, "tdr", topo_ids, out)
    for i in np.flatnonzero(t.start_ts > t.end_ts):
        out.append(Violation(f"tdr[{i}]", "start_ts after end_ts"))
    for i in np.flatnonzero(t.bytes < 0):
        out.append(Violation(f"tdr[{i}]", "negative bytes"))
    for i in np.flatnonzero((t.service_type < 0) | (t.service_type >= len(SERVICE_TYPES))):
        out.append(Violation(f"tdr[{i}]", "unknown service_type"))
    for i in np.flatnonzero((t.priority < 0) | (t.priority >= len(PRIORITIES))):
        out.append(Violation(f"tdr[{i}]", "unknown priority"))

    m = trace.mr
    _unknown_cells(m, "mr", topo_ids, out)
    for i in np.flatnonzero(~(np.isfinite(m.sinr_db) & np.isfinite(m.rsrq_db))):
        out.append(Violation(f"mr[{i}]", "non-finite signal value"))
    return out


# ---------------------------------------------------------------- CSV I/O

def _write_lines(path: Path, header: str, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for line in lines:
            f.write(line)
            f.write("\n")


def write_trace(trace: Trace, dir_path) -> None:
    """Write the five CSV files plus ``meta.txt`` (epoch metadata)."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    tr = trace.normalized()
    _write_lines(d / "topology.csv", TOPOLOGY_HEADER,
                 (f"{c.cell_id},{fmt_real(c.x)},{fmt_real(c.y)},{c.region_type},{fmt_real(c.capacity)}"
                  for c in tr.topology.cells))
    k = tr.kpi
    _write_lines(d / "kpi.csv", KPI_HEADER,
                 (f"{ts},{cid}," + ",".join(map(fmt_real, row))
                  for ts, cid, row in zip(k.timestamp.tolist(), k.cell_id.tolist(), k.values.tolist())))
    q = tr.qos
    _write_lines(d / "qos.csv", QOS_HEADER,
                 (f"{a},{b},{c},{fmt_real(e)},{fmt_real(f)},{fmt_real(g)}"
                  for a, b, c, e, f, g in zip(*(getattr(q, n).tolist() for n in q._cols))))
    t = tr.tdr
    _write_lines(d / "tdr.csv", TDR_HEADER,
                 (f"{a},{b},{c},{u},{n},{SERVICE_TYPES[s]},{PRIORITIES[p]}"
                  for a, b, c, u, n, s, p in zip(*(getattr(t, n).tolist() for n in t._cols))))
    m = tr.mr
    _write_lines(d / "mr.csv", MR_HEADER,
                 (f"{a},{b},{c},{fmt_real(e)},{fmt_real(f)}"
                  for a, b, c, e, f in zip(*(getattr(m, n).tolist() for n in m._cols))))
    with open(d / META_FILE, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"start_dow = {tr.start_dow}\nstep_minutes = {tr.step_minutes}\n")


def _read_csv(path: Path, header: str, converters):
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None or ",".join(first) != header:
            raise MalformedRow(path.name, 1, f"expected header {header!r}")
        n = len(converters)
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != n:
                raise MalformedRow(path.name, line_no, f"expected {n} fields, got {len(rec)}")
            try:
                rows.append([conv(v) for conv, v in zip(converters, rec)])
            except ValueError as e:
                raise MalformedRow(path.name, line_no, str(e)) from None
    return rows


def _enum(values):
    def conv(v):
        try:
            return values.index(v)
        except ValueError:
            raise ValueError(f"unknown value {v!r}") from None
    return conv


def _columns(rows, n):
    if not rows:
        return [[] for _ in range(n)]
    return list(zip(*rows))


def read_trace(dir_path) -> Trace:
    """Read and validate a trace directory; rows come back (cell_id, timestamp) sorted."""
    d = Path(dir_path)
    topo_rows = _read_csv(d / "topology.csv", TOPOLOGY_HEADER, (int, float, float, str, float))
    kpi_rows = _read_csv(d / "kpi.csv", KPI_HEADER, (int, int) + (float,) * len(KPI_NAMES))
    qos_rows = _read_csv(d / "qos.csv", QOS_HEADER, (int, int, int, float, float, float))
    tdr_rows = _read_csv(d / "tdr.csv", TDR_HEADER,
                         (int, int, int, int, int, _enum(SERVICE_TYPES), _enum(PRIORITIES)))
    mr_rows = _read_csv(d / "mr.csv", MR_HEADER, (int, int, int, float, float))

    topo = Topology([CellInfo(*r) for r in topo_rows])
    kpi = KpiTable(np.array([r[0] for r in kpi_rows], np.int64),
                   np.array([r[1] for r in kpi_rows], np.int64),
                   np.array([r[2:] for r in kpi_rows], np.float64).reshape(len(kpi_rows), len(KPI_NAMES)))
    c = _columns(qos_rows, 6)
    qos = QosTable(*(np.array(c[i], np.int64) for i in range(3)),
                   *(np.array(c[i], np.float64) for i in range(3, 6)))
    c = _columns(tdr_rows, 7)
    tdr = TrafficTable(*(np.array(c[i], np.int64) for i in range(7)))
    c = _columns(mr_rows, 5)
    mr = MrTable(*(np.array(c[i], np.int64) for i in range(3)),
                 *(np.array(c[i], np.float64) for i in range(3, 5)))

    start_dow, step = 0, None
    meta = d / META_FILE
    if meta.is_file():
        for line in meta.read_text(encoding="utf-8").splitlines():
            if "=" in line:
                key, val = (s.strip() for s in line.split("=", 1))
                if key == "start_dow":
                    start_dow = int(val)
                elif key == "step_minutes":
                    step = int(val)
    if step is None:
        ts = np.unique(kpi.timestamp)
        step = int(np.min(np.diff(ts))) if len(ts) > 1 else 15

    trace = Trace(topo, kpi, qos, tdr, mr, start_dow, step).normalized()
    problems = validate_trace(trace)
    if problems:
        more = f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""
        raise InvariantViolation(f"{problems[0]}{more}")
    return trace
