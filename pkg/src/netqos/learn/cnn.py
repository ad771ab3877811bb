"""Two-conv / avg-pool / two-dense classifier trained with momentum SGD."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import rng
from ..errors import EmptyTrainSet, KindUnsupported, ShapeMismatch
from .layers import AvgPool2D, Conv2D, Dense, Flatten, ReLU, Sequential, softmax, weighted_xent


@dataclass(frozen=True)
class CnnArch:
    conv1: int = 8
    conv2: int = 16
    pool: int = 2
    fc1: int = 32
    n_classes: int = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    class_weights: str = "sqrt"  # "balanced" (inverse frequency), "sqrt" (its square root) or "none"
    init_scale: float = 1.0  # multiplies the Glorot-uniform bound
    patience: int = 8
    seed: int = 42
    online_lr_scale: float = 0.1
    online_epochs: int = 1

    def __post_init__(self):
        from ..errors import ConfigInvalid
        if self.epochs < 1 or self.batch_size < 1 or not self.lr >= 0:
            raise ConfigInvalid("epochs and batch_size must be positive, lr non-negative")
        if self.class_weights not in ("balanced", "sqrt", "none"):
            raise ConfigInvalid("class_weights must be 'balanced', 'sqrt' or 'none'")


def build_net(arch: CnnArch, in_shape) -> Sequential:
    K, H, W = in_shape
    if H < 1 or W < 1 or H // arch.pool < 1 or W // arch.pool < 1:
        raise ShapeMismatch(f"input {in_shape} too small for {arch.pool}x{arch.pool} pooling")
    flat = arch.conv2 * (H // arch.pool) * (W // arch.pool)
    return Sequential([
        Conv2D("conv1", K, arch.conv1), ReLU(),
        Conv2D("conv2", arch.conv1, arch.conv2), ReLU(),
        AvgPool2D(arch.pool), Flatten(),
        Dense("fc1", flat, arch.fc1), ReLU(),
        Dense("fc2", arch.fc1, arch.n_classes),
    ], in_shape)


def init_params(net: Sequential, seed: int, scale: float = 1.0) -> dict:
    """Glorot-uniform weights, zero biases, rounded to float32 values."""
    params = {}
    for li, layer in enumerate(net.layers):
        if not hasattr(layer, "fans"):
            continue
        fan_in, fan_out = layer.fans()
        for name, shape in layer.param_shapes(None).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
                continue
            bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniform(seed, rng.CH_INIT, li, np.arange(int(np.prod(shape)))).reshape(shape)
            params[name] = (bound * (2.0 * u - 1.0)).astype(np.float32).astype(np.float64)
    return {k: params[k] for k in net.param_names()}


def to_f32(params: dict) -> dict:
    return {k: np.asarray(v, np.float32).astype(np.float64) for k, v in params.items()}


def predict_proba(net: Sequential, params: dict, X: np.ndarray, batch: int = 2048) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.in_shape:
        raise ShapeMismatch(f"expected input {net.in_shape}, got {X.shape[1:]}")
    out = [softmax(net.forward(params, X[i:i + batch])[0]) for i in range(0, len(X), batch)]
    return np.concatenate(out) if out else np.zeros((0, 2))


def loss_and_grads(net, params, X, y, weights):
    logits, caches = net.forward(params, X)
    loss, dlogits = weighted_xent(logits, y, weights)
    _, grads = net.backward(params, caches, dlogits)
    return loss, grads


def dataset_loss(net, params, X, y, weights, batch=4096) -> float:
    total = 0.0
    for i in range(0, len(X), batch):
        logits, _ = net.forward(params, X[i:i + batch])
        l, _ = weighted_xent(logits, y[i:i + batch], weights)
        total += l * len(X[i:i + batch])
    return total / max(len(X), 1)


def class_weights(y, mode="balanced") -> tuple:
    if mode == "none":
        return (1.0, 1.0)
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=2).astype(np.float64)
    n = counts.sum()
    w = [float(n / (2.0 * c)) if c > 0 else 1.0 for c in counts]
    return tuple(float(np.sqrt(v)) for v in w) if mode == "sqrt" else tuple(w)


def sgd(net, params, X, y, weights, cfg: TrainConfig, lr: float, epochs: int, seed: int,
        X_val=None, y_val=None, history=None):
    """Momentum SGD; keeps the parameters of the best validation-loss epoch when validating."""
    params = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    best = (dataset_loss(net, params, X_val, y_val, weights), params) if X_val is not None and len(X_val) else None
    stale = 0
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(seed, n, rng.CH_SHUFFLE, epoch)
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            _, grads = loss_and_grads(net, params, X[idx], y[idx], weights)
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] - lr * grads[k]
                params[k] = params[k] + velocity[k]
        train_loss = dataset_loss(net, params, X, y, weights)
        if best is not None:
            val_loss = dataset_loss(net, params, X_val, y_val, weights)
            probs = predict_proba(net, params, X_val)
            val_acc = float(np.mean((probs[:, 1] > probs[:, 0]).astype(np.int64) == y_val))
            if history is not None:
                history.append((epoch + 1, train_loss, val_loss, val_acc))
            if val_loss < best[0]:
                best, stale = (val_loss, {k: v.copy() for k, v in params.items()}), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        elif history is not None:
            history.append((epoch + 1, train_loss, float("nan"), float("nan")))
    return best[1] if best is not None else params


# ---------------------------------------------------------------- gradient check

def _perturbed_losses(net, params, name, flat_idx, eps, x, y, weight):
    """Loss with parameter ``name`` shifted by ``+eps`` / ``-eps`` at ``flat_idx``; also ReLU patterns."""
    base = params[name]
    P = len(flat_idx)
    stacks = []
    for sign in (1.0, -1.0):
        st = np.broadcast_to(base, (P,) + base.shape).copy().reshape(P, -1)
        st[np.arange(P), flat_idx] += sign * np.broadcast_to(eps, (P,))
        stacks.append(st.reshape((P,) + base.shape))
    out = []
    for st in stacks:
        p = dict(params)
        p[name] = st
        logits, pats = net.forward_multi(p, x, patterns=True)
        lp = logits - logits.max(axis=1, keepdims=True)
        lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
        out.append((-weight * lp[:, y], pats))
    return out


def check_gradients(net: Sequential, params: dict, x: np.ndarray, y: int, eps: float = 1e-4,
                    weight: float = 1.0, chunk: int = 256) -> float:
    """Max relative error between backprop and central differences over every parameter.

    A difference whose +/- evaluations change any ReLU sign pattern straddles a
    kink; it is retried with eps/10 and eps/100.  If it still straddles, the
    input is shifted by +1e-6 and the whole check restarts (up to 5 times).
    """
    x = np.asarray(x, dtype=np.float64)[None]
    for _attempt in range(5):
        _, grads = loss_and_grads(net, params, x, np.array([y]), (weight, weight))
        base_pat = net.relu_patterns(params, x)[0]
        worst, kinked = 0.0, False
        for name in net.param_names():
            ga = grads[name].ravel()
            for start in range(0, ga.size, chunk):
                idx = np.arange(start, min(start + chunk, ga.size))
                e = np.full(len(idx), eps)
                gn = np.zeros(len(idx))
                todo = np.ones(len(idx), dtype=bool)
                for shrink in (1.0, 0.1, 0.01):
                    sub = np.flatnonzero(todo)
                    if not len(sub):
                        break
                    (lp, pp), (lm, pm) = _perturbed_losses(net, params, name, idx[sub], e[sub] * shrink, x, y, weight)
                    stable = (pp == base_pat).all(axis=1) & (pm == base_pat).all(axis=1)
                    gn[sub[stable]] = (lp[stable] - lm[stable]) / (2.0 * eps * shrink)
                    todo[sub[stable]] = False
                if todo.any():
                    kinked = True
                    break
                a = ga[idx]
                rel = np.abs(a - gn) / np.maximum(np.abs(a) + np.abs(gn), 1e-8)
                worst = max(worst, float(rel.max()))
            if kinked:
                break
        if not kinked:
            return worst
        x = x + 1e-6
    return worst


# ---------------------------------------------------------------- model-level ops

def cnn_init(arch: CnnArch, input_dims, seed: int, dataset_config=None, stats=None, scale: float = 1.0):
    from .model import Model
    net = build_net(arch, tuple(input_dims))
    params = init_params(net, seed, scale)
    return Model("cnn", params=params, arch=arch, input_dims=tuple(input_dims), stats=stats,
                 dataset_config=dataset_config, meta={"seed": seed, "version": 0})


def forward(model, tensor) -> tuple:
    """(p_improve, p_deteriorate) for one raw state tensor."""
    values = tensor.values if hasattr(tensor, "values") else tensor
    p = model.predict_proba(np.asarray(values)[None])[0]
    return float(1.0 - p), float(p)


def grad_check(model, example, eps: float = 1e-4) -> float:
    """Relative-error gradient check of ``model`` (cnn) on one example."""
    net = model.net()
    x = model.prepare(np.asarray(example.tensor.values)[None])[0]
    w = model.meta.get("class_weights", (1.0, 1.0))
    return check_gradients(net, model.params, x, int(example.label), eps, float(w[int(example.label)]))


def train(model, split, cfg: TrainConfig = TrainConfig()):
    """Train a cnn model on ``split.train``; returns (model, history rows)."""
    if model.kind != "cnn":
        raise KindUnsupported("train() is for cnn models; use baseline_train for the others")
    if len(split.train) == 0:
        raise EmptyTrainSet("empty training split")
    if model.stats is None:
        model = replace(model, stats=split.stats)
    if model.dataset_config is None:
        model = replace(model, dataset_config=split.config)
    net = model.net()
    X = model.prepare(split.train.X)
    y = split.train.y.astype(np.int64)
    Xv = model.prepare(split.validation.X) if len(split.validation) else None
    yv = split.validation.y.astype(np.int64) if len(split.validation) else None
    weights = class_weights(y, cfg.class_weights)
    history = []
    params = sgd(net, model.params, X, y, weights, cfg, cfg.lr, cfg.epochs, cfg.seed, Xv, yv, history)
    meta = dict(model.meta, seed=cfg.seed, epochs=len(history), class_weights=weights,
                train_config=cfg)
    return replace(model, params=to_f32(params), meta=meta), history


def online_update(model, batch, cfg: TrainConfig = TrainConfig()):
    """Continue SGD on ``batch`` only at ``online_lr_scale * lr``; bumps the version counter."""
    if model.kind != "cnn":
        raise KindUnsupported(f"{model.kind} models are retrain-only")
    if len(batch) == 0:
        raise EmptyTrainSet("empty online batch")
    net = model.net()
    X = model.prepare(batch.X)
    y = batch.y.astype(np.int64)
    weights = model.meta.get("class_weights", class_weights(y, cfg.class_weights))
    lr = cfg.lr * cfg.online_lr_scale
    version = int(model.meta.get("version", 0)) + 1
    if lr == 0:
        return replace(model, meta=dict(model.meta, version=version))
    seed = cfg.seed + version
    params = sgd(net, model.params, X, y, weights, cfg, lr, cfg.online_epochs, seed)
    return replace(model, params=to_f32(params), meta=dict(model.meta, version=version))
