"""Reverse-mode automatic differentiation over numpy arrays.

A small define-by-run tape: each Var wraps an ndarray and remembers how to
push its output gradient to its parents. Only the operations the sparse
networks and losses need are provided. Dtype follows the inputs, so one
graph definition runs in float32 for training and float64 for gradient
checking.
"""

from __future__ import annotations

import numpy as np


class Var:
    """Node in the autodiff graph: a value, its gradient, and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data, dtype=self.data.dtype)
        self.grad += g

    def backward(self, seed=None):
        """Backpropagate from this node; seeds with ones if no seed given."""
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self._accumulate(np.ones_like(self.data) if seed is None else np.asarray(seed))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_var(x, requires_grad=False) -> Var:
    return x if isinstance(x, Var) else Var(x, requires_grad=requires_grad)


def values(x) -> np.ndarray:
    """Plain ndarray view of a Var or array."""
    return x.data if isinstance(x, Var) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to the given broadcast-source shape."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.data - b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = backward
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = backward
    return out


def transpose(a, axes) -> Var:
    a = as_var(a)
    out = Var(np.transpose(a.data, axes), parents=(a,))
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    out._backward = backward
    return out


def reshape(a, shape) -> Var:
    a = as_var(a)
    out = Var(a.data.reshape(shape), parents=(a,))

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    out._backward = backward
    return out


def gather_rows(a, idx) -> Var:
    """out[i] = a[idx[i]]; gradient scatter-adds back."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Var(a.data[idx], parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a._accumulate(acc)

    out._backward = backward
    return out


def scatter_sum_rows(a, idx, num_rows: int) -> Var:
    """out[r] = sum of a rows with idx == r; out has num_rows rows."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    data = np.zeros((num_rows,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(data, idx, a.data)
    out = Var(data, parents=(a,))

    def backward(g):
        a._accumulate(g[idx])

    out._backward = backward
    return out


def take_row(a, index: int) -> Var:
    """Select a[index] along axis 0 (drops the axis)."""
    a = as_var(a)
    out = Var(a.data[index], parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[index] = g
        a._accumulate(acc)

    out._backward = backward
    return out


def concat_cols(parts) -> Var:
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, a:b])

    out._backward = backward
    return out


def slice_cols(a, start: int, stop: int) -> Var:
    a = as_var(a)
    out = Var(a.data[:, start:stop], parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[:, start:stop] = g
        a._accumulate(acc)

    out._backward = backward
    return out


def leaky_relu(a, slope: float = 0.01) -> Var:
    a = as_var(a)
    mask = a.data > 0
    out = Var(np.where(mask, a.data, slope * a.data), parents=(a,))

    def backward(g):
        a._accumulate(np.where(mask, g, slope * g))

    out._backward = backward
    return out


def sigmoid(a) -> Var:
    a = as_var(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Var(s, parents=(a,))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


def log(a) -> Var:
    a = as_var(a)
    out = Var(np.log(a.data), parents=(a,))

    def backward(g):
        a._accumulate(g / a.data)

    out._backward = backward
    return out


def pow_const(a, exponent: float) -> Var:
    a = as_var(a)
    out = Var(a.data ** exponent, parents=(a,))

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    out._backward = backward
    return out


def clip(a, lo: float, hi: float) -> Var:
    """Clamp values; gradient passes through only inside [lo, hi]."""
    a = as_var(a)
    clipped = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    out = Var(clipped, parents=(a,))

    def backward(g):
        a._accumulate(np.where(mask, g, 0.0))

    out._backward = backward
    return out


def huber(a) -> Var:
    """Elementwise 0.5*x^2 for |x| < 1 else |x| - 0.5 (continuously differentiable)."""
    a = as_var(a)
    absx = np.abs(a.data)
    small = absx < 1.0
    out = Var(np.where(small, 0.5 * a.data * a.data, absx - 0.5), parents=(a,))

    def backward(g):
        a._accumulate(g * np.where(small, a.data, np.sign(a.data)))

    out._backward = backward
    return out


def sum_all(a) -> Var:
    a = as_var(a)
    out = Var(np.asarray(a.data.sum()), parents=(a,))

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    out._backward = backward
    return out


def mean_all(a) -> Var:
    a = as_var(a)
    n = a.data.size
    out = Var(np.asarray(a.data.mean()) if n else np.asarray(0.0), parents=(a,))

    def backward(g):
        if n:
            a._accumulate(np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype))

    out._backward = backward
    return out


def scale(a, factor: float) -> Var:
    a = as_var(a)
    out = Var(a.data * factor, parents=(a,))

    def backward(g):
        a._accumulate(g * factor)

    out._backward = backward
    return out


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax on a plain array."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets, reduction: str = "sum") -> Var:
    """-log softmax(logits)[target] summed or averaged over rows."""
    logits = as_var(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.data.shape[0]
    if n == 0:
        return Var(np.asarray(0.0, dtype=logits.data.dtype), parents=(logits,), backward=lambda g: None)
    p = softmax(logits.data, axis=1)
    rows = np.arange(n)
    losses = -np.log(np.clip(p[rows, targets], 1e-300, None))
    total = losses.sum() if reduction == "sum" else losses.mean()
    out = Var(np.asarray(total, dtype=logits.data.dtype), parents=(logits,))

    def backward(g):
        grad = p.copy()
        grad[rows, targets] -= 1.0
        if reduction == "mean":
            grad /= n
        logits._accumulate(g * grad.astype(logits.data.dtype))

    out._backward = backward
    return out


def conv2d_same(x, w, b=None) -> Var:
    """Dense 2D convolution, stride 1, zero 'same' padding.

    x: (H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,) or None.
    """
    x, w = as_var(x), as_var(w)
    h, wid, cin = x.data.shape
    kh, kw, cin_w, cout = w.data.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((h + 2 * ph, wid + 2 * pw, cin), dtype=x.data.dtype)
    padded[ph:ph + h, pw:pw + wid] = x.data

    cols = np.empty((h, wid, kh * kw * cin), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, (i * kw + j) * cin:(i * kw + j + 1) * cin] = padded[i:i + h, j:j + wid]
    flat_w = w.data.reshape(kh * kw * cin, cout)
    data = cols.reshape(h * wid, -1) @ flat_w
    parents = (x, w)
    if b is not None:
        b = as_var(b)
        data = data + b.data
        parents = (x, w, b)
    out = Var(data.reshape(h, wid, cout), parents=parents)

    def backward(g):
        g2 = g.reshape(h * wid, cout)
        if w.requires_grad:
            w._accumulate((cols.reshape(h * wid, -1).T @ g2).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ flat_w.T).reshape(h, wid, kh * kw * cin)
            gpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    gpad[i:i + h, j:j + wid] += gcols[:, :, (i * kw + j) * cin:(i * kw + j + 1) * cin]
            x._accumulate(gpad[ph:ph + h, pw:pw + wid])

    out._backward = backward
    return out
