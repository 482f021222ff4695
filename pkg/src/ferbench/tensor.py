"""Minimal reverse-mode autodiff on dense numpy arrays.

A Tensor wraps an ndarray, remembers the op that produced it, and can
backpropagate gradients to every tensor in its graph that requires them.
Only the ops needed for a small GAP-headed CNN, its losses, and the
mask-optimization saliency method are implemented.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "add_const",
    "matmul_linear",
    "relu",
    "sigmoid",
    "conv2d",
    "avg_pool2d",
    "global_avg_pool",
    "tensor_sum",
    "tensor_mean",
    "select",
    "upsample_bilinear",
    "sorted_ref_penalty",
    "softmax_cross_entropy",
]


class Tensor:
    """Dense n-d array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._backward is None and not self._parents:
            raise RuntimeError("backward called on a tensor with no recorded graph; run forward first")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(data, (a,), bwd)


def add_const(a: Tensor, c) -> Tensor:
    data = a.data + c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)

    return _make(data, (a,), bwd)


def matmul_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[N,C] @ w[K,C].T + b[K] -> [N,K]."""
    data = x.data @ w.data.T + b.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(data, (x, w, b), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def _corr2d(x, w):
    """Valid cross-correlation of x[N,C,H,W] with w[F,C,kh,kw] -> [N,F,Ho,Wo]."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    cols = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(f, -1).T
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 0) -> Tensor:
    """2-d convolution (cross-correlation), stride 1, zero padding."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects [N,C,H,W] input, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out, cols = _corr2d(xp, w.data)
    out = out + b.data[None, :, None, None]
    n, f, ho, wo = out.shape
    kh, kw = w.shape[2], w.shape[3]

    def bwd(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.shape))
        if x.requires_grad:
            # scatter columns-space gradient back by summing the kh*kw shifts;
            # accumulate channel-last to keep the inner stride contiguous
            c = x.shape[1]
            prod = (g2 @ w.data.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
            hp, wp = ho + 2 * p, wo + 2 * p
            gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, dy:dy + ho, dx:dx + wo, :] += prod[:, :, :, :, dy, dx]
            gxp = gxp.transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, p:hp - p, p:wp - p] if p else gxp)

    return _make(out, (x, w, b), bwd)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {k}")
    data = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bwd(g):
        if x.requires_grad:
            gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
            x._accumulate(gx)

    return _make(data, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def bwd(g):
        if x.requires_grad:
            gx = np.broadcast_to(g[:, :, None, None], (n, c, h, w)) / (h * w)
            x._accumulate(gx)

    return _make(data, (x,), bwd)


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), bwd)


def tensor_mean(a: Tensor) -> Tensor:
    data = np.asarray(a.data.mean())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g / a.data.size, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), bwd)


def select(a: Tensor, index) -> Tensor:
    """Pick one element; returns a scalar tensor."""
    data = np.asarray(a.data[index])

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[index] = g
            a._accumulate(ga)

    return _make(data, (a,), bwd)


def _bilinear_coeffs(size_in, size_out):
    """Source indices and weights per output position (half-pixel centers)."""
    pos = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    i0c = np.clip(i0, 0, size_in - 1)
    i1c = np.clip(i0 + 1, 0, size_in - 1)
    return i0c, i1c, frac


def upsample_bilinear(x: Tensor, out_hw) -> Tensor:
    """Bilinear resize of x[N,C,H,W] to out_hw, half-pixel-center convention."""
    n, c, h, w = x.shape
    oh, ow = out_hw
    y0, y1, fy = _bilinear_coeffs(h, oh)
    x0, x1, fx = _bilinear_coeffs(w, ow)
    fy = fy[:, None]
    fx = fx[None, :]
    d = x.data
    top = d[:, :, y0][:, :, :, x0] * (1 - fx) + d[:, :, y0][:, :, :, x1] * fx
    bot = d[:, :, y1][:, :, :, x0] * (1 - fx) + d[:, :, y1][:, :, :, x1] * fx
    data = top * (1 - fy) + bot * fy

    def bwd(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        w00 = ((1 - fy) * (1 - fx))
        w01 = ((1 - fy) * fx)
        w10 = (fy * (1 - fx))
        w11 = (fy * fx)
        yy0 = np.broadcast_to(y0[:, None], (oh, ow))
        yy1 = np.broadcast_to(y1[:, None], (oh, ow))
        xx0 = np.broadcast_to(x0[None, :], (oh, ow))
        xx1 = np.broadcast_to(x1[None, :], (oh, ow))
        for wgt, yy, xx in ((w00, yy0, xx0), (w01, yy0, xx1), (w10, yy1, xx0), (w11, yy1, xx1)):
            np.add.at(gx, (slice(None), slice(None), yy, xx), g * wgt)
        x._accumulate(gx)

    return _make(data, (x,), bwd)


def sorted_ref_penalty(m: Tensor, reference: np.ndarray) -> Tensor:
    """Sum of squared deviations between descending-sorted values and a reference vector."""
    flat = m.data.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    diff = flat[order] - reference
    data = np.asarray((diff * diff).sum())

    def bwd(g):
        if m.requires_grad:
            gflat = np.zeros_like(flat)
            gflat[order] = 2.0 * diff * g
            m._accumulate(gflat.reshape(m.shape))

    return _make(data, (m,), bwd)


def softmax_cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Mean over the batch of -w[y] * log softmax(logits)[y].

    Unweighted when class_weights is None. Rejects non-finite logits.
    """
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax_cross_entropy: non-finite logits")
    labels = np.asarray(labels)
    n, k = z.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0,{k}), got range [{labels.min()},{labels.max()}]")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    if class_weights is None:
        wy = np.ones(n, dtype=z.dtype)
    else:
        wy = np.asarray(class_weights, dtype=z.dtype)[labels]
    data = np.asarray(-(wy * logp[np.arange(n), labels]).mean())

    def bwd(g):
        if logits.requires_grad:
            probs = ez / sez
            onehot = np.zeros_like(z)
            onehot[np.arange(n), labels] = 1.0
            glogits = (probs - onehot) * wy[:, None] * (g / n)
            logits._accumulate(glogits.astype(z.dtype, copy=False))

    return _make(data, (logits,), bwd)
