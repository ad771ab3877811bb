"""Labeled spatio-temporal examples built from a trace.

A state tensor has shape ``(K, W, C)``: KPI channel, time (oldest first),
and cell slot (self first, then neighbors by distance).  The label says
whether mean QoS delay over the next ``horizon`` steps rises more than
``deadband`` relative to the previous ``horizon`` steps.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import rng
from .config import apply_flat, read_config
from .errors import (ConfigInvalid, EmptyInput, InsufficientHistory, NoQosSamples, TooFewExamples,
                     UnknownCell)
from .telemetry import KPI_NAMES, Trace

IMPROVEMENT, DETERIORATION = 0, 1
LABEL_NAMES = ("IMPROVEMENT", "DETERIORATION")
MAGIC = b"NQDS1"


@dataclass(frozen=True)
class DatasetConfig:
    window: int = 6
    neighbors: int = 4
    horizon: int = 2
    deadband: float = 0.10
    split_ratios: tuple = (0.70, 0.20, 0.10)
    split_seed: int = 42
    chronological: bool = False
    tdr_channels: bool = False

    def __post_init__(self):
        if self.window < 1 or self.neighbors < 0 or self.horizon < 1:
            raise ConfigInvalid("need window >= 1, neighbors >= 0, horizon >= 1")
        if self.deadband < 0:
            raise ConfigInvalid("deadband must be >= 0")
        r = self.split_ratios
        if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigInvalid("split_ratios must be three positive numbers summing to 1")

    @property
    def channels(self) -> int:
        return len(KPI_NAMES) + (2 if self.tdr_channels else 0)

    @property
    def cells(self) -> int:
        return self.neighbors + 1


def load_dataset_config(path) -> DatasetConfig:
    flat = {}
    for kv in read_config(path).values():
        for k, v in kv.items():
            if k in flat:
                raise ConfigInvalid(f"key {k!r} given twice")
            flat[k] = v
    return apply_flat(DatasetConfig, flat)


class StateTensor(NamedTuple):
    values: np.ndarray  # (K, W, C)
    mask: np.ndarray  # (C,) True where the slot holds a real cell


class LabeledExample(NamedTuple):
    cell_id: int
    t: int
    tensor: StateTensor
    label: int
    provenance: str = ""


@dataclass(eq=False)
class ExampleSet:
    """Examples stored column-wise; ``X`` is float32 ``(n, K, W, C)``."""
    cell_id: np.ndarray
    t: np.ndarray
    X: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    provenance: str = ""

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(int(self.cell_id[i]), int(self.t[i]), StateTensor(self.X[i], self.mask),
                              int(self.y[i]), self.provenance)

    def take(self, idx) -> "ExampleSet":
        return ExampleSet(self.cell_id[idx], self.t[idx], self.X[idx], self.y[idx], self.mask, self.provenance)

    def with_X(self, X) -> "ExampleSet":
        return ExampleSet(self.cell_id, self.t, X, self.y, self.mask, self.provenance)

    @property
    def class_balance(self) -> float:
        """Fraction labeled DETERIORATION."""
        return float(np.mean(self.y == DETERIORATION)) if len(self) else 0.0

    @classmethod
    def from_examples(cls, examples) -> "ExampleSet":
        ex = list(examples)
        if not ex:
            raise EmptyInput("no examples")
        return cls(np.array([e.cell_id for e in ex], np.int64), np.array([e.t for e in ex], np.int64),
                   np.stack([e.tensor.values for e in ex]).astype(np.float32),
                   np.array([e.label for e in ex], np.uint8), ex[0].tensor.mask, ex[0].provenance)


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple
    flagged: tuple  # channels with zero spread, passed through unchanged


@dataclass(eq=False)
class SplitDataset:
    train: ExampleSet
    test: ExampleSet
    validation: ExampleSet
    config: DatasetConfig = field(default_factory=DatasetConfig)
    stats: Optional[ChannelStats] = None

    def part(self, name: str) -> ExampleSet:
        return {"train": self.train, "test": self.test, "validation": self.validation}[name]


# ---------------------------------------------------------------- trace index

class TraceIndex:
    """Dense (cell, step) views of a trace for fast tensor and label lookup."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.topology = trace.topology
        self.step = trace.step_minutes
        ts = trace.timestamps()
        self.t0 = int(ts[0]) if len(ts) else 0
        self.n_steps = int((ts[-1] - ts[0]) // self.step + 1) if len(ts) else 0
        n_cells = len(self.topology)
        K = len(KPI_NAMES)
        self.kpi = np.zeros((n_cells, self.n_steps, K))
        k = trace.kpi
        if len(k):
            self.kpi[self._rows(k.cell_id), self._cols(k.timestamp)] = k.values
        shape = (n_cells, self.n_steps)
        q = trace.qos
        cols = self._cols(q.timestamp)
        ok = (cols >= 0) & (cols < self.n_steps)
        flat = self._rows(q.cell_id[ok]) * self.n_steps + cols[ok]
        size = n_cells * self.n_steps
        self.delay_sum = np.bincount(flat, weights=q.delay[ok], minlength=size).reshape(shape)
        self.qos_count = np.bincount(flat, minlength=size).reshape(shape)
        tdr = trace.tdr
        cols = self._cols(tdr.start_ts)
        ok = (cols >= 0) & (cols < self.n_steps)
        flat = self._rows(tdr.cell_id[ok]) * self.n_steps + cols[ok]
        self.tdr_bytes = np.bincount(flat, weights=tdr.bytes[ok].astype(np.float64), minlength=size).reshape(shape)
        self.tdr_count = np.bincount(flat, minlength=size).reshape(shape).astype(np.float64)

    def _rows(self, cell_ids):
        return np.searchsorted(self.topology.ids, np.asarray(cell_ids))

    def _cols(self, ts):
        return (np.asarray(ts, dtype=np.int64) - self.t0) // self.step

    def slots(self, neighbors: int):
        """(n_cells, C) topology rows per cell slot, -1 for padding."""
        n = len(self.topology)
        out = np.full((n, neighbors + 1), -1, dtype=np.int64)
        for i, c in enumerate(self.topology.cells):
            nb = self.topology.neighbors(c.cell_id)[:neighbors]
            out[i, 0] = i
            out[i, 1:1 + len(nb)] = self._rows(list(nb)) if nb else []
        return out

    def channels(self, config: DatasetConfig) -> np.ndarray:
        """(cells, steps, K') feature cube including optional TDR channels."""
        if not config.tdr_channels:
            return self.kpi
        return np.concatenate([self.kpi, self.tdr_bytes[..., None] / 1.0e6, self.tdr_count[..., None]], axis=-1)


def tensors_from_cube(cube: np.ndarray, slots: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                      window: int) -> np.ndarray:
    """Gather ``(n, K, W, C)`` tensors anchored at ``cols`` for cell rows ``rows``.

    ``cube`` is (cells, steps, K); ``slots`` maps a cell row to its C slot rows
    (-1 = padding, zero-filled).
    """
    cell_slots = slots[rows]  # (n, C)
    steps = cols[:, None] + np.arange(-(window - 1), 1)[None, :]  # (n, W)
    safe = np.where(cell_slots < 0, 0, cell_slots)
    g = cube[safe[:, None, :], steps[:, :, None]]  # (n, W, C, K)
    g = np.where((cell_slots < 0)[:, None, :, None], 0.0, g)
    return np.transpose(g, (0, 3, 1, 2))


def _mask(slots: np.ndarray) -> np.ndarray:
    return slots[0] >= 0 if len(slots) else np.zeros(0, dtype=bool)


def build_tensor(trace: Trace, cell_id: int, t: int, config: DatasetConfig,
                 index: TraceIndex = None) -> StateTensor:
    idx = index or TraceIndex(trace)
    if cell_id not in trace.topology:
        raise UnknownCell(f"cell {cell_id} not in topology")
    col = (t - idx.t0) // idx.step
    if (t - idx.t0) % idx.step or col >= idx.n_steps:
        raise InsufficientHistory(f"t={t} not on the trace grid")
    if col - (config.window - 1) < 0:
        raise InsufficientHistory(f"t={t} has fewer than {config.window} steps of history")
    slots = idx.slots(config.neighbors)
    row = idx._rows([cell_id])
    X = tensors_from_cube(idx.channels(config), slots, row, np.array([col]), config.window)[0]
    return StateTensor(X, slots[row[0]] >= 0)


def label_rule(d_before: float, d_after: float, deadband: float) -> int:
    return DETERIORATION if d_after > d_before * (1.0 + deadband) else IMPROVEMENT


def make_label(trace: Trace, cell_id: int, t: int, config: DatasetConfig, index: TraceIndex = None) -> int:
    idx = index or TraceIndex(trace)
    if cell_id not in trace.topology:
        raise UnknownCell(f"cell {cell_id} not in topology")
    row = int(idx._rows([cell_id])[0])
    col = (t - idx.t0) // idx.step
    h = config.horizon
    lo, hi = max(col - h, 0), min(col + h, idx.n_steps)
    nb, na = idx.qos_count[row, lo:col].sum(), idx.qos_count[row, col:hi].sum()
    if col - h < 0 or nb == 0:
        raise NoQosSamples(f"no QoS samples for cell {cell_id} in [{t - h * idx.step}, {t})")
    if col + h > idx.n_steps or na == 0:
        raise NoQosSamples(f"no QoS samples for cell {cell_id} in [{t}, {t + h * idx.step})")
    before = idx.delay_sum[row, lo:col].sum() / nb
    after = idx.delay_sum[row, col:hi].sum() / na
    return label_rule(before, after, config.deadband)


# ---------------------------------------------------------------- standardization

def fit_stats(examples: ExampleSet) -> ChannelStats:
    if len(examples) < 2:
        raise EmptyInput("standardization fit needs at least 2 examples")
    X = examples.X[..., examples.mask].astype(np.float64)  # (n, K, W, C')
    K = X.shape[1]
    v = np.moveaxis(X, 1, 0).reshape(K, -1)
    mean = v.mean(axis=1)
    std = v.std(axis=1)
    flagged = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return ChannelStats(tuple(mean.tolist()), tuple(np.where(flagged, 1.0, std).tolist()),
                        tuple(bool(f) for f in flagged))


def apply_stats(X: np.ndarray, mask: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Z-score channels of float64 ``X`` (n, K, W, C); padded slots stay zero."""
    mean = np.where(stats.flagged, 0.0, stats.mean)[None, :, None, None]
    std = np.asarray(stats.std)[None, :, None, None]
    Z = (np.asarray(X, dtype=np.float64) - mean) / std
    return np.where(np.asarray(mask)[None, None, None, :], Z, 0.0)


def standardize(examples: ExampleSet, stats: ChannelStats = None):
    """Fit (``stats is None``) or apply channel z-scoring; returns (examples', stats)."""
    if len(examples) == 0:
        raise EmptyInput("no examples to standardize")
    if stats is None:
        stats = fit_stats(examples)
    return examples.with_X(apply_stats(examples.X, examples.mask, stats)), stats


# ---------------------------------------------------------------- split / build

def split(examples: ExampleSet, config: DatasetConfig) -> SplitDataset:
    n = len(examples)
    if n < 10:
        raise TooFewExamples(f"need at least 10 examples, got {n}")
    if config.chronological:
        order = np.lexsort((examples.cell_id, examples.t))
    else:
        order = rng.permutation(config.split_seed, n, rng.CH_SPLIT)
    a = int(np.floor(config.split_ratios[0] * n + 1e-9))
    b = a + int(np.floor(config.split_ratios[1] * n + 1e-9))
    return SplitDataset(examples.take(order[:a]), examples.take(order[a:b]), examples.take(order[b:]), config)


def build_examples(trace: Trace, config: DatasetConfig, provenance: str = "") -> ExampleSet:
    """One example per (cell, t) with full history, horizon and QoS coverage."""
    idx = TraceIndex(trace)
    W, H = config.window, config.horizon
    n_cells = len(trace.topology)
    anchors = np.arange(W, idx.n_steps - H)
    slots = idx.slots(config.neighbors)
    if n_cells == 0 or len(anchors) == 0:
        return ExampleSet(np.zeros(0, np.int64), np.zeros(0, np.int64),
                          np.zeros((0, config.channels, W, config.cells), np.float32),
                          np.zeros(0, np.uint8), _mask(slots), provenance)
    rows = np.repeat(np.arange(n_cells), len(anchors))
    cols = np.tile(anchors, n_cells)
    pad = ((0, 0), (1, 0))
    csum = np.cumsum(np.pad(idx.delay_sum, pad), axis=1)
    ccnt = np.cumsum(np.pad(idx.qos_count, pad), axis=1)
    nb = ccnt[rows, cols] - ccnt[rows, cols - H]
    na = ccnt[rows, cols + H] - ccnt[rows, cols]
    ok = (nb > 0) & (na > 0)
    rows, cols, nb, na = rows[ok], cols[ok], nb[ok], na[ok]
    before = (csum[rows, cols] - csum[rows, cols - H]) / nb
    after = (csum[rows, cols + H] - csum[rows, cols]) / na
    y = (after > before * (1.0 + config.deadband)).astype(np.uint8)
    X = tensors_from_cube(idx.channels(config), slots, rows, cols, W).astype(np.float32)
    return ExampleSet(trace.topology.ids[rows], idx.t0 + cols * idx.step, X, y, _mask(slots), provenance)


def build_dataset(trace: Trace, config: DatasetConfig, provenance: str = "") -> SplitDataset:
    examples = build_examples(trace, config, provenance)
    ds = split(examples, config)
    ds.stats = fit_stats(ds.train)
    return ds


# ---------------------------------------------------------------- binary export

def write_examples(examples: ExampleSet, path) -> None:
    rec = struct.Struct("<IIB")
    with open(path, "wb") as f:
        f.write(MAGIC)
        X = np.ascontiguousarray(examples.X, dtype="<f4")
        for i in range(len(examples)):
            f.write(rec.pack(int(examples.cell_id[i]), int(examples.t[i]), int(examples.y[i])))
            f.write(X[i].tobytes())


def read_examples(path, shape, mask, provenance: str = "") -> ExampleSet:
    K, W, C = shape
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ConfigInvalid(f"{path}: not an {MAGIC.decode()} file")
    rec = np.dtype([("cell", "<u4"), ("t", "<u4"), ("y", "u1"), ("x", "<f4", (K, W, C))])
    body = data[5:]
    if len(body) % rec.itemsize:
        raise ConfigInvalid(f"{path}: truncated record")
    arr = np.frombuffer(body, dtype=rec)
    return ExampleSet(arr["cell"].astype(np.int64), arr["t"].astype(np.int64),
                      arr["x"].astype(np.float32), arr["y"].astype(np.uint8), np.asarray(mask, bool), provenance)


def _fmt_floats(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def save_dataset(ds: SplitDataset, dir_path) -> None:
    """Write ``{train,test,validation}.bin`` and ``examples.meta``."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("train", "test", "validation"):
        write_examples(ds.part(name), d / f"{name}.bin")
    c, s = ds.config, ds.stats
    K, W, C = ds.train.X.shape[1:]
    lines = [
        "format = NQDS1",
        f"shape = {K} {W} {C}",
        "mask = " + " ".join(str(int(m)) for m in ds.train.mask),
        f"window = {c.window}",
        f"neighbors = {c.neighbors}",
        f"horizon = {c.horizon}",
        f"deadband = {c.deadband!r}",
        "split_ratios = " + ",".join(repr(r) for r in c.split_ratios),
        f"split_seed = {c.split_seed}",
        f"chronological = {str(c.chronological).lower()}",
        f"tdr_channels = {str(c.tdr_channels).lower()}",
        f"provenance = {ds.train.provenance}",
        "stats_mean = " + _fmt_floats(s.mean),
        "stats_std = " + _fmt_floats(s.std),
        "stats_flagged = " + " ".join(str(int(f)) for f in s.flagged),
    ]
    for name in ("train", "test", "validation"):
        part = ds.part(name)
        lines.append(f"n_{name} = {len(part)}")
        lines.append(f"balance_{name} = {part.class_balance!r}")
    (d / "examples.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(dir_path) -> SplitDataset:
    d = Path(dir_path)
    meta_path = d / "examples.meta"
    if not meta_path.is_file():
        raise ConfigInvalid(f"{d} has no examples.meta")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    shape = tuple(int(x) for x in meta["shape"].split())
    mask = np.array([x == "1" for x in meta["mask"].split()])
    cfg = DatasetConfig(
        window=int(meta["window"]), neighbors=int(meta["neighbors"]), horizon=int(meta["horizon"]),
        deadband=float(meta["deadband"]),
        split_ratios=tuple(float(x) for x in meta["split_ratios"].split(",")),
        split_seed=int(meta["split_seed"]), chronological=meta["chronological"] == "true",
        tdr_channels=meta["tdr_channels"] == "true")
    stats = ChannelStats(tuple(float(x) for x in meta["stats_mean"].split()),
                         tuple(float(x) for x in meta["stats_std"].split()),
                         tuple(x == "1" for x in meta["stats_flagged"].split()))
    prov = meta.get("provenance", "")
    parts = {name: read_examples(d / f"{name}.bin", shape, mask, prov) for name in ("train", "test", "validation")}
    return SplitDataset(parts["train"], parts["test"], parts["validation"], cfg, stats)
