"""Minimal reverse-mode automatic differentiation over numpy arrays.

All math runs in float64. A Tensor records the closure that routes its
upstream gradient to its parents; backward() walks the graph in reverse
topological order and accumulates into .grad.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigError(ValueError):
    """Raised for invalid structural configuration (head counts, kernel sizes)."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    # sum over leading axes added by broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            # copy: upstream closures may hand the same buffer to two parents
            self.grad = np.array(grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += grad

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without gradient requires a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(_as_array(grad))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    def __neg__(self):
        return self * Tensor(-1.0)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    __radd__ = __add__
    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.shape[-1] != other.data.shape[0]:
            raise ShapeError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor(out_data, parents=(self, other), backward=bwd)

    __matmul__ = matmul

    def power(self, p: float) -> "Tensor":
        out_data = self.data ** p

        def bwd(g):
            self._accumulate(g * p * self.data ** (p - 1))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def sum(self) -> "Tensor":
        out_data = np.array(self.data.sum())

        def bwd(g):
            self._accumulate(np.full_like(self.data, float(g)))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def mean(self) -> "Tensor":
        n = self.data.size
        out_data = np.array(self.data.mean())

        def bwd(g):
            self._accumulate(np.full_like(self.data, float(g) / n))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def mean_rows(self) -> "Tensor":
        """Per-row mean, shape (R, 1)."""
        n = self.data.shape[1]
        out_data = self.data.mean(axis=1, keepdims=True)

        def bwd(g):
            self._accumulate(np.repeat(g / n, n, axis=1))

        return Tensor(out_data, parents=(self,), backward=bwd)

    # -- nonlinearities ------------------------------------------------------

    def sigmoid(self) -> "Tensor":
        # split by sign to avoid exp overflow
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def bwd(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - out_data ** 2))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def swish(self) -> "Tensor":
        return self * self.sigmoid()

    def softmax_rows(self) -> "Tensor":
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=-1, keepdims=True)

        def bwd(g):
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            self._accumulate(out_data * (g - dot))

        return Tensor(out_data, parents=(self,), backward=bwd)

    # -- structural ops ------------------------------------------------------

    def transpose(self) -> "Tensor":
        out_data = self.data.T

        def bwd(g):
            self._accumulate(g.T)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        out_data = self.data[:, start:stop]

        def bwd(g):
            full = np.zeros_like(self.data)
            full[:, start:stop] = g
            self._accumulate(full)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def slice_rows(self, start: int, stop: int) -> "Tensor":
        out_data = self.data[start:stop, :]

        def bwd(g):
            full = np.zeros_like(self.data)
            full[start:stop, :] = g
            self._accumulate(full)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def pad_rows(self, before: int, after: int) -> "Tensor":
        out_data = np.pad(self.data, ((before, after), (0, 0)))

        def bwd(g):
            self._accumulate(g[before:before + self.data.shape[0], :])

        return Tensor(out_data, parents=(self,), backward=bwd)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    widths = [t.data.shape[1] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)

    def bwd(g):
        off = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(g[:, off:off + w])
            off += w

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    heights = [t.data.shape[0] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)

    def bwd(g):
        off = 0
        for t, h in zip(tensors, heights):
            if t.requires_grad:
                t._accumulate(g[off:off + h, :])
            off += h

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = None


# -- composite operators -----------------------------------------------------

def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if x.data.shape[1] != weights.data.shape[0]:
        raise ShapeError(
            f"linear: input dim {x.data.shape} incompatible with weights "
            f"{weights.data.shape}"
        )
    return x @ weights + bias


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.data.shape[-1] != x.data.shape[1]:
        raise ShapeError(
            f"layer_norm: gain shape {gain.data.shape} vs input {x.data.shape}"
        )
    mu = x.mean_rows()
    centered = x - mu
    var = centered.power(2.0).mean_rows()
    inv = (var + Tensor(eps)).power(-0.5)
    return centered * inv * gain + shift


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor, heads: int,
                         wq, wk, wv, wo, bo) -> Tensor:
    """Scaled dot-product attention with learned Q/K/V/output projections."""
    d_model = wq.data.shape[1]
    if d_model % heads != 0:
        raise ConfigError(f"model dim {d_model} not divisible by {heads} heads")
    if key.data.shape[0] != value.data.shape[0]:
        raise ShapeError("key and value row counts differ")
    d_head = d_model // heads
    q = query @ wq
    k = key @ wk
    v = value @ wv
    scale = Tensor(1.0 / np.sqrt(d_head))
    outs = []
    for h in range(heads):
        a, b = h * d_head, (h + 1) * d_head
        qh, kh, vh = q.slice_cols(a, b), k.slice_cols(a, b), v.slice_cols(a, b)
        att = ((qh @ kh.transpose()) * scale).softmax_rows()
        outs.append(att @ vh)
    return concat_cols(outs) @ wo + bo


def depthwise_conv1d(x: Tensor, kernel: Tensor, kernel_size: int) -> Tensor:
    """Per-channel 1-D convolution along rows, zero-padded to same length.

    kernel has shape (kernel_size, channels).
    """
    if kernel_size % 2 == 0:
        raise ConfigError(f"depthwise kernel size must be odd, got {kernel_size}")
    half = kernel_size // 2
    rows = x.data.shape[0]
    padded = x.pad_rows(half, half)
    out = None
    for tap in range(kernel_size):
        term = padded.slice_rows(tap, tap + rows) * kernel.slice_rows(tap, tap + 1)
        out = term if out is None else out + term
    return out


def mse_loss(scores: Tensor, targets: Tensor) -> Tensor:
    if scores.data.shape != np.asarray(targets.data).shape:
        raise ShapeError(
            f"mse_loss length mismatch: {scores.data.shape} vs {targets.data.shape}"
        )
    return (scores - targets).power(2.0).mean()
