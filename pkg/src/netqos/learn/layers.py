"""Minimal numpy layers with explicit backward passes.

Tensors are ``(batch, channels, height, width)``.  Parameters live in a flat
``dict`` keyed ``"<layer>.W"`` / ``"<layer>.b"`` so that they serialize in a
fixed order.

Each parametric layer also implements ``forward_multi``, which evaluates one
input (leading axis 1) under a *stack* of parameter variants (leading axis P).
Activations keep leading axis 1 until the first stacked parameter, so layers
upstream of the perturbation run once.  The gradient checker uses it to run
thousands of perturbed forwards at once; it is a separate code path from
``forward`` on purpose.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _kernel_view(W):
    """Kernel used by the input-gradient of a convolution (hook for fault injection)."""
    return W


class Conv2D:
    """3x3-style convolution, stride 1, same padding."""

    def __init__(self, name, in_ch, out_ch, k=3):
        self.name, self.in_ch, self.out_ch, self.k = name, in_ch, out_ch, k
        self.pad = k // 2

    def param_shapes(self, in_shape):
        return {f"{self.name}.W": (self.out_ch, self.in_ch, self.k, self.k), f"{self.name}.b": (self.out_ch,)}

    def fans(self):
        return self.in_ch * self.k * self.k, self.out_ch * self.k * self.k

    def out_shape(self, in_shape):
        return (self.out_ch,) + tuple(in_shape[1:])

    def _cols(self, x):
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))  # (B, Cin, H, W, k, k)
        B, _, H, Wd = win.shape[:4]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(B, H * Wd, -1), (B, H, Wd)

    def forward(self, params, x):
        W, b = params[f"{self.name}.W"], params[f"{self.name}.b"]
        cols, (B, H, Wd) = self._cols(x)
        out = cols @ W.reshape(self.out_ch, -1).T + b
        return out.reshape(B, H, Wd, self.out_ch).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, params, cache, dout):
        x_shape, cols = cache
        W = params[f"{self.name}.W"]
        B, _, H, Wd = dout.shape
        d2 = dout.transpose(0, 2, 3, 1).reshape(B, H * Wd, self.out_ch)
        dW = np.einsum("bpo,bpk->ok", d2, cols).reshape(W.shape)
        db = d2.sum(axis=(0, 1))
        dcols = (d2 @ _kernel_view(W).reshape(self.out_ch, -1)).reshape(B, H, Wd, self.in_ch, self.k, self.k)
        p = self.pad
        dxp = np.zeros((B, self.in_ch, H + 2 * p, Wd + 2 * p))
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i:i + H, j:j + Wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + H, p:p + Wd], {f"{self.name}.W": dW, f"{self.name}.b": db}

    def forward_multi(self, params, x):
        W, b = params[f"{self.name}.W"], params[f"{self.name}.b"]
        cols, (B, H, Wd) = self._cols(x)
        if W.ndim == 5:
            Wm = W.reshape(W.shape[0], self.out_ch, -1)
            out = np.einsum("pok,qk->pqo", Wm, cols[0]) if B == 1 else np.einsum("pok,pqk->pqo", Wm, cols)
        else:
            out = cols @ W.reshape(self.out_ch, -1).T
        out = out + (b[:, None, :] if b.ndim == 2 else b)
        return out.reshape(out.shape[0], H, Wd, self.out_ch).transpose(0, 3, 1, 2)


class ReLU:
    name = "relu"

    def param_shapes(self, in_shape):
        return {}

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, params, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, params, mask, dout):
        return np.where(mask, dout, 0.0), {}

    def forward_multi(self, params, x):
        return np.where(x > 0, x, 0.0)


class AvgPool2D:
    """Non-overlapping average pooling; trailing rows/cols that do not fill a window are dropped."""

    name = "pool"

    def __init__(self, size=2):
        self.size = size

    def param_shapes(self, in_shape):
        return {}

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.size, w // self.size)

    def forward(self, params, x):
        s = self.size
        B, C, H, W = x.shape
        Ho, Wo = H // s, W // s
        v = x[:, :, :Ho * s, :Wo * s].reshape(B, C, Ho, s, Wo, s)
        return v.mean(axis=(3, 5)), x.shape

    def backward(self, params, x_shape, dout):
        s = self.size
        B, C, Ho, Wo = dout.shape
        dx = np.zeros(x_shape)
        spread = np.repeat(np.repeat(dout, s, axis=2), s, axis=3) / (s * s)
        dx[:, :, :Ho * s, :Wo * s] = spread
        return dx, {}

    def forward_multi(self, params, x):
        return self.forward(params, x)[0]


class Flatten:
    name = "flatten"

    def param_shapes(self, in_shape):
        return {}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, shape, dout):
        return dout.reshape(shape), {}

    def forward_multi(self, params, x):
        return x.reshape(x.shape[0], -1)


class Dense:
    def __init__(self, name, n_in, n_out):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def param_shapes(self, in_shape):
        return {f"{self.name}.W": (self.n_in, self.n_out), f"{self.name}.b": (self.n_out,)}

    def fans(self):
        return self.n_in, self.n_out

    def out_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, params, x):
        return x @ params[f"{self.name}.W"] + params[f"{self.name}.b"], x

    def backward(self, params, x, dout):
        W = params[f"{self.name}.W"]
        return dout @ W.T, {f"{self.name}.W": x.T @ dout, f"{self.name}.b": dout.sum(axis=0)}

    def forward_multi(self, params, x):
        W, b = params[f"{self.name}.W"], params[f"{self.name}.b"]
        if W.ndim == 3:
            out = x[0] @ W if x.shape[0] == 1 else np.einsum("pi,pio->po", x, W)
        else:
            out = x @ W
        return out + b


class Sequential:
    def __init__(self, layers, in_shape):
        self.layers = list(layers)
        self.in_shape = tuple(in_shape)
        self.shapes = {}
        shape = self.in_shape
        for layer in self.layers:
            self.shapes.update(layer.param_shapes(shape))
            shape = layer.out_shape(shape)
        self.out_shape = shape

    def param_names(self):
        return list(self.shapes)

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params, caches, dout):
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dout, g = layer.backward(params, cache, dout)
            grads.update(g)
        return dout, grads

    def forward_multi(self, params, x, patterns=False):
        """Logits (P, classes); with ``patterns`` also the sign pattern of every ReLU input."""
        pats = []
        for layer in self.layers:
            if patterns and isinstance(layer, ReLU):
                pats.append((x > 0).reshape(x.shape[0], -1))
            x = layer.forward_multi(params, x)
        if not patterns:
            return x
        P = x.shape[0]
        pats = [np.broadcast_to(p, (P, p.shape[1])) for p in pats]
        return x, (np.concatenate(pats, axis=1) if pats else np.zeros((P, 0), dtype=bool))

    def relu_patterns(self, params, x):
        """Sign patterns of every ReLU input, for kink detection."""
        return self.forward_multi(params, x, patterns=True)[1]


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def weighted_xent(logits, y, weights):
    """Mean of ``weights[y] * cross-entropy`` and its gradient w.r.t. logits."""
    n = logits.shape[0]
    lp = log_softmax(logits)
    w = np.asarray(weights, dtype=np.float64)[y]
    loss = -np.sum(w * lp[np.arange(n), y]) / n
    g = np.exp(lp)
    g[np.arange(n), y] -= 1.0
    return loss, g * (w / n)[:, None]
