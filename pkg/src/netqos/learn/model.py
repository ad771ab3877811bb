"""Model container, prediction, metrics, baseline training and the model file format.

Model file layout (all text lines are UTF-8, ``\\n`` terminated)::

    NQOS-MODEL v1
    kind = cnn | knn | svm | dt | gbm
    config_hash = <16 hex>
    input_dims = K,W,C
    mask = 1,1,0,...            slot mask (1 = real cell)
    stats.mean = <repr floats>  channel standardization (absent if none)
    stats.std = ...
    stats.flagged = 0,1,...
    dataset.<field> = ...       dataset config used to build the inputs
    arch = conv1,conv2,pool,fc1,n_classes          (cnn)
    hyper.<name> = ...          estimator hyperparameters
    meta.<name> = ...           seed, epochs, version, class weights
    param <name> <d0>x<d1>...   one line per array, in payload order
    end
    <payload>

The payload is the concatenation of every ``param`` array as little-endian
float32 (cnn, svm).  knn stores one record per training row: a u8 label then
the features as little-endian float64.  dt and gbm store text node records
``node <i> <feature> <threshold> <left> <right> <value>`` with floats in
``repr`` form (exact round trip); gbm prefixes each tree with ``tree <n>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..config import config_hash
from ..dataset import (DETERIORATION, IMPROVEMENT, ChannelStats, DatasetConfig, ExampleSet, SplitDataset,
                       apply_stats)
from ..errors import BadHyper, EmptyInput, EmptyTrainSet, KindUnsupported, MalformedRow, ShapeMismatch
from ..telemetry import KPI_NAMES
from . import baselines, cnn as cnn_mod, trees
from .layers import softmax

KINDS = ("cnn", "knn", "svm", "dt", "gbm")
HEADER = "NQOS-MODEL v1"

BASELINE_DEFAULTS = {
    "knn": {"k": 5},
    "svm": {"lam": 1e-4, "epochs": 20, "batch": 16, "seed": 42},
    "dt": {"max_depth": 8, "min_split": 2},
    "gbm": {"stages": 100, "shrinkage": 0.1, "max_depth": 3, "min_split": 2, "l2": 1.0},
}


@dataclass(eq=False)
class Model:
    kind: str
    params: dict = field(default_factory=dict)
    arch: Optional[cnn_mod.CnnArch] = None
    input_dims: tuple = ()
    stats: Optional[ChannelStats] = None
    dataset_config: Optional[DatasetConfig] = None
    meta: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    mask: Optional[tuple] = None
    tree: Optional[trees.Tree] = None
    boosted: Optional[trees.Boosted] = None

    def net(self):
        return cnn_mod.build_net(self.arch, self.input_dims)

    def prepare(self, X) -> np.ndarray:
        """Raw tensors -> standardized float64 inputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or tuple(X.shape[1:]) != tuple(self.input_dims):
            raise ShapeMismatch(f"expected tensors of shape {tuple(self.input_dims)}, got {X.shape[1:]}")
        if self.stats is None:
            return X
        mask = np.ones(X.shape[-1], bool) if self.mask is None else np.asarray(self.mask, bool)
        return apply_stats(X, mask, self.stats)

    def features(self, X) -> np.ndarray:
        F = baselines.feature_vectors(self.prepare(X), self.hyper.get("channels"))
        if "f_mean" in self.params:
            F = (F - self.params["f_mean"]) / self.params["f_std"]
        return F

    def predict_proba(self, X) -> np.ndarray:
        """P(DETERIORATION) for each raw tensor in ``X`` (n, K, W, C)."""
        if self.kind == "cnn":
            return cnn_mod.predict_proba(self.net(), self.params, self.prepare(X))[:, 1]
        F = self.features(X)
        if self.kind == "knn":
            return baselines.knn_proba(self.params["train_F"], self.params["train_y"], F, int(self.hyper["k"]))
        if self.kind == "svm":
            return baselines.svm_proba(self.params["w"], float(self.params["b"][0]), F)
        if self.kind == "dt":
            return self.tree.predict(F)
        if self.kind == "gbm":
            return trees.sigmoid(self.boosted.decision(F))
        raise KindUnsupported(f"unknown model kind {self.kind!r}")

    def predict(self, X) -> np.ndarray:
        return labels_from_proba(self.predict_proba(X))


def labels_from_proba(p) -> np.ndarray:
    """argmax over (1-p, p); an exact tie goes to IMPROVEMENT."""
    p = np.asarray(p, dtype=np.float64)
    return np.where(p > 1.0 - p, DETERIORATION, IMPROVEMENT).astype(np.uint8)


def predict(model: Model, example) -> tuple:
    """(label, P(DETERIORATION)) for one LabeledExample, StateTensor or raw array."""
    values = getattr(example, "tensor", example)
    values = getattr(values, "values", values)
    p = float(model.predict_proba(np.asarray(values)[None])[0])
    return int(labels_from_proba(p)), p


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    confusion: tuple  # confusion[true][pred]
    precision: tuple  # per class
    recall: tuple

    @property
    def n(self) -> int:
        return int(sum(sum(r) for r in self.confusion))


def metrics_from_labels(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise EmptyInput("no examples to evaluate")
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    prec = tuple(float(cm[c, c] / col[c]) if col[c] else 0.0 for c in range(2))
    rec = tuple(float(cm[c, c] / row[c]) if row[c] else 0.0 for c in range(2))
    return Metrics(float(np.trace(cm) / cm.sum()), tuple(tuple(int(v) for v in r) for r in cm), prec, rec)


def evaluate(model: Model, examples: ExampleSet) -> Metrics:
    if len(examples) == 0:
        raise EmptyInput("no examples to evaluate")
    return metrics_from_labels(examples.y, model.predict(examples.X))


# ---------------------------------------------------------------- training entry points

def _check_hyper(kind, hyper):
    if kind not in BASELINE_DEFAULTS:
        raise KindUnsupported(f"baseline kind must be one of knn, svm, dt, gbm; got {kind!r}")
    h = dict(BASELINE_DEFAULTS[kind])
    extra = set(hyper or {}) - set(h) - {"kpis"}
    if extra:
        raise BadHyper(f"unknown {kind} hyperparameter(s): {', '.join(sorted(extra))}")
    h.update(hyper or {})
    positive_int = {"k", "epochs", "batch", "stages", "min_split"}
    for key, v in h.items():
        if key in positive_int and (int(v) != v or v < 1):
            raise BadHyper(f"{key} must be a positive integer, got {v!r}")
    if kind in ("dt", "gbm") and h["max_depth"] is not None and (int(h["max_depth"]) != h["max_depth"] or h["max_depth"] < 1):
        raise BadHyper(f"max_depth must be a positive integer or None, got {h['max_depth']!r}")
    if kind == "svm" and not h["lam"] > 0:
        raise BadHyper("lam must be > 0")
    if kind == "gbm" and not (0 < h["shrinkage"] <= 1 and h["l2"] >= 0):
        raise BadHyper("need 0 < shrinkage <= 1 and l2 >= 0")
    kpis = h.pop("kpis", None)
    if kpis:
        names = [kpis] if isinstance(kpis, str) else list(kpis)
        unknown = [k for k in names if k not in KPI_NAMES]
        if unknown:
            raise BadHyper(f"unknown KPI name(s) in kpis: {', '.join(unknown)}")
        h["channels"] = tuple(KPI_NAMES.index(k) for k in names)
    return h


def baseline_train(kind: str, split: SplitDataset, hyper: dict = None) -> Model:
    """Fit a knn / svm / dt / gbm model on window features of ``split.train``."""
    h = _check_hyper(kind, hyper)
    train = split.train
    if len(train) == 0:
        raise EmptyTrainSet("empty training split")
    model = Model(kind, input_dims=tuple(train.X.shape[1:]), stats=split.stats, dataset_config=split.config,
                  hyper=h, mask=tuple(bool(m) for m in train.mask))
    F = baselines.feature_vectors(model.prepare(train.X), h.get("channels"))
    y = train.y.astype(np.int64)
    if kind == "knn":
        mean, std = baselines.fit_scaler(F)
        model.params = {"f_mean": mean, "f_std": std, "train_F": (F - mean) / std, "train_y": y.astype(np.uint8)}
    elif kind == "svm":
        mean, std = baselines.fit_scaler(F)
        sh = baselines.SvmHyper(float(h["lam"]), int(h["epochs"]), int(h["batch"]), int(h["seed"]))
        w, b = baselines.fit_linear_svm((F - mean) / std, y, sh)
        model.params = {"f_mean": mean, "f_std": std, "w": w, "b": np.array([b])}
        model.params = {k: v.astype(np.float32).astype(np.float64) for k, v in model.params.items()}
        model.meta["seed"] = int(h["seed"])
    elif kind == "dt":
        model.tree = trees.fit_classification_tree(F, y, h["max_depth"], int(h["min_split"]))
    else:
        model.boosted, losses = trees.fit_boosted(F, y, int(h["stages"]), float(h["shrinkage"]),
                                                  int(h["max_depth"]), int(h["min_split"]), float(h["l2"]))
        model.meta["train_loss"] = losses
    return model


def init_model(kind: str, split: SplitDataset, seed: int, arch=None, init_scale: float = 1.0) -> Model:
    dims = tuple(split.train.X.shape[1:])
    m = cnn_mod.cnn_init(arch or cnn_mod.CnnArch(), dims, seed, split.config, split.stats, init_scale)
    m.mask = tuple(bool(v) for v in split.train.mask)
    return m


def fit(kind: str, split: SplitDataset, seed: int = 42, train_config=None, hyper=None):
    """Train any kind; returns (model, history rows). History is empty for baselines."""
    if kind == "cnn":
        cfg = train_config or cnn_mod.TrainConfig(seed=seed)
        m = init_model(kind, split, cfg.seed, init_scale=cfg.init_scale)
        return cnn_mod.train(m, split, cfg)
    h = dict(hyper or {})
    if kind == "svm":
        h.setdefault("seed", seed)
    return baseline_train(kind, split, h), []


# ---------------------------------------------------------------- serialization

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def model_hash(model: Model) -> str:
    if "config_hash" in model.meta:
        return model.meta["config_hash"]
    tc = model.meta.get("train_config")
    return config_hash(model.kind, model.dataset_config, tc, sorted(model.hyper.items()), model.arch)


def _header(model: Model) -> list:
    lines = [HEADER, f"kind = {model.kind}", f"config_hash = {model_hash(model)}",
             f"input_dims = {_fmt(tuple(model.input_dims))}"]
    if model.mask is not None:
        lines.append(f"mask = {_fmt(tuple(model.mask))}")
    if model.stats is not None:
        lines += [f"stats.mean = {_fmt(tuple(float(x) for x in model.stats.mean))}",
                  f"stats.std = {_fmt(tuple(float(x) for x in model.stats.std))}",
                  f"stats.flagged = {_fmt(tuple(bool(x) for x in model.stats.flagged))}"]
    if model.dataset_config is not None:
        for f in fields(DatasetConfig):
            lines.append(f"dataset.{f.name} = {_fmt(getattr(model.dataset_config, f.name))}")
    if model.arch is not None:
        a = model.arch
        lines.append(f"arch = {_fmt((a.conv1, a.conv2, a.pool, a.fc1, a.n_classes))}")
    for k in sorted(model.hyper):
        lines.append(f"hyper.{k} = {_fmt(model.hyper[k]) if model.hyper[k] is not None else 'none'}")
    for k in ("seed", "epochs", "version", "class_weights"):
        if k in model.meta:
            lines.append(f"meta.{k} = {_fmt(model.meta[k])}")
    return lines


def _blob_params(model):
    if model.kind == "cnn":
        return [(k, model.params[k]) for k in model.net().param_names()]
    if model.kind == "svm":
        return [(k, model.params[k]) for k in ("f_mean", "f_std", "w", "b")]
    return []


def _tree_lines(t: trees.Tree) -> list:
    return [f"node {i} {int(t.feature[i])} {float(t.threshold[i])!r} {int(t.left[i])} {int(t.right[i])} "
            f"{float(t.value[i])!r}" for i in range(len(t))]


def model_bytes(model: Model) -> bytes:
    lines = _header(model)
    payload = b""
    if model.kind in ("cnn", "svm"):
        for name, arr in _blob_params(model):
            lines.append(f"param {name} {'x'.join(str(d) for d in np.shape(arr))}")
            payload += np.asarray(arr, dtype="<f4").tobytes()
    elif model.kind == "knn":
        F, y = model.params["train_F"], model.params["train_y"]
        lines.append(f"param f_mean {len(model.params['f_mean'])}")
        lines.append(f"param f_std {len(model.params['f_std'])}")
        lines.append(f"records {F.shape[0]} {F.shape[1]}")
        rec = np.zeros(len(F), dtype=np.dtype([("y", "u1"), ("f", "<f8", (F.shape[1],))]))
        rec["y"], rec["f"] = y, F
        payload = (np.asarray(model.params["f_mean"], "<f8").tobytes() + np.asarray(model.params["f_std"], "<f8").tobytes()
                   + rec.tobytes())
    elif model.kind == "dt":
        payload = ("\n".join(_tree_lines(model.tree)) + "\n").encode()
    elif model.kind == "gbm":
        b = model.boosted
        out = [f"init {b.init!r}", f"shrinkage {b.shrinkage!r}", f"stages {len(b.trees)}"]
        for i, t in enumerate(b.trees):
            out.append(f"tree {i} {len(t)}")
            out += _tree_lines(t)
        payload = ("\n".join(out) + "\n").encode()
    return ("\n".join(lines + ["end"]) + "\n").encode() + payload


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def _floats(s):
    return tuple(float(x) for x in s.split(",")) if s else ()


def _ints(s):
    return tuple(int(x) for x in s.split(",")) if s else ()


def _parse_value(s):
    if s == "none":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if "," in s:
        return tuple(_parse_value(x) for x in s.split(","))
    return s


def _parse_tree(lines, where) -> trees.Tree:
    b = trees._Builder()
    for ln in lines:
        parts = ln.split()
        if len(parts) != 7 or parts[0] != "node" or int(parts[1]) != len(b.feature):
            raise MalformedRow(where, 0, f"bad node record {ln!r}")
        b.feature.append(int(parts[2]))
        b.threshold.append(float(parts[3]))
        b.left.append(int(parts[4]))
        b.right.append(int(parts[5]))
        b.value.append(float(parts[6]))
    return b.tree()


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    where = str(path)
    end = data.find(b"\nend\n")
    if not data.startswith(HEADER.encode() + b"\n") or end < 0:
        raise MalformedRow(where, 1, f"not a model file (expected '{HEADER}' header and 'end' line)")
    lines = data[:end].decode().split("\n")[1:]
    payload = data[end + 5:]
    kv, params, records = {}, [], None
    for i, ln in enumerate(lines, start=2):
        if ln.startswith("param "):
            _, name, shape = ln.split()
            params.append((name, tuple(int(d) for d in shape.split("x")) if shape else ()))
        elif ln.startswith("records "):
            records = tuple(int(x) for x in ln.split()[1:])
        elif " = " in ln:
            k, v = ln.split(" = ", 1)
            kv[k] = v
        else:
            raise MalformedRow(where, i, f"unrecognized header line {ln!r}")
    kind = kv.get("kind")
    if kind not in KINDS:
        raise MalformedRow(where, 2, f"unknown model kind {kind!r}")
    m = Model(kind, input_dims=_ints(kv["input_dims"]))
    if "mask" in kv:
        m.mask = tuple(bool(x) for x in _ints(kv["mask"]))
    if "stats.mean" in kv:
        m.stats = ChannelStats(_floats(kv["stats.mean"]), _floats(kv["stats.std"]),
                               tuple(bool(x) for x in _ints(kv["stats.flagged"])))
    ds = {k[8:]: v for k, v in kv.items() if k.startswith("dataset.")}
    if ds:
        vals = {}
        for f in fields(DatasetConfig):
            v = ds[f.name]
            vals[f.name] = (_floats(v) if f.name == "split_ratios" else bool(int(v)) if f.type in ("bool", bool)
                            else float(v) if f.name == "deadband" else int(v))
        m.dataset_config = DatasetConfig(**vals)
    if "arch" in kv:
        m.arch = cnn_mod.CnnArch(*_ints(kv["arch"]))
    m.meta["config_hash"] = kv.get("config_hash", "")
    m.hyper = {k[6:]: _parse_value(v) for k, v in kv.items() if k.startswith("hyper.")}
    if "channels" in m.hyper and not isinstance(m.hyper["channels"], tuple):
        m.hyper["channels"] = (m.hyper["channels"],)
    for k, v in kv.items():
        if k.startswith("meta."):
            m.meta[k[5:]] = _floats(v) if k == "meta.class_weights" else int(v)
    if kind in ("cnn", "svm"):
        off = 0
        for name, shape in params:
            size = int(np.prod(shape)) * 4
            if off + size > len(payload):
                raise MalformedRow(where, 0, f"parameter blob truncated at {name}")
            m.params[name] = np.frombuffer(payload[off:off + size], dtype="<f4").astype(np.float64).reshape(shape)
            off += size
        if off != len(payload):
            raise MalformedRow(where, 0, "parameter blob length does not match header")
    elif kind == "knn":
        n, d = records
        dm = dict(params)
        nf = dm["f_mean"][0]
        m.params["f_mean"] = np.frombuffer(payload[:8 * nf], "<f8").astype(np.float64)
        m.params["f_std"] = np.frombuffer(payload[8 * nf:16 * nf], "<f8").astype(np.float64)
        rec = np.frombuffer(payload[16 * nf:], dtype=np.dtype([("y", "u1"), ("f", "<f8", (d,))]), count=n)
        m.params["train_F"] = rec["f"].astype(np.float64)
        m.params["train_y"] = rec["y"].astype(np.uint8)
    elif kind == "dt":
        m.tree = _parse_tree(payload.decode().splitlines(), where)
    else:
        body = payload.decode().splitlines()
        init = float(body[0].split()[1])
        shrink = float(body[1].split()[1])
        n_trees = int(body[2].split()[1])
        pos, ts = 3, []
        for _ in range(n_trees):
            n_nodes = int(body[pos].split()[2])
            ts.append(_parse_tree(body[pos + 1:pos + 1 + n_nodes], where))
            pos += 1 + n_nodes
        m.boosted = trees.Boosted(init, shrink, ts)
    return m


def write_history(history, path) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for e, tl, vl, va in history:
        lines.append(f"{e},{tl:.6f},{vl:.6f},{va:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
