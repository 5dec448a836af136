"""A small dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record a tape of vector-Jacobian products as
operations are applied.  Calling ``backward()`` on a scalar walks the tape in
reverse topological order and leaves fresh gradients on every reachable leaf
that has ``requires_grad`` set.  Gradients are overwritten on each call, never
accumulated across calls.

The op set is deliberately small: exactly what a windowed-attention denoiser
and its losses need (batched matmul, softmax, layer norm, GELU, 2-D
convolution, cyclic roll, slicing, row gather, and elementwise arithmetic
with broadcasting).
"""

from __future__ import annotations

import numbers

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import NumericalError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting expanded it."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _unbroadcast_batch(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Like _unbroadcast, but the trailing two (matrix) dims already match."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """An n-dimensional real array, optionally attached to the gradient tape.

    Attributes:
        data: the backing numpy array (float32 or float64).
        requires_grad: whether backward() should produce a gradient here.
        grad: same-shape gradient array, populated by backward(); None before.
    """

    __slots__ = ("data", "requires_grad", "grad", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # list of (parent, vjp) pairs; empty for leaves
        self._vjps: list = []

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def constant(data) -> "Tensor":
        """Wrap data with no tape attachment (detaches Tensors)."""
        if isinstance(data, Tensor):
            return Tensor(data.data)
        return Tensor(data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _make(self, data: np.ndarray, vjps: list) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p, _ in vjps):
            out.requires_grad = True
            out._vjps = [(p, f) for p, f in vjps if p.requires_grad]
        return out

    # -- autodiff --------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar, overwriting leaf gradients."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._vjps:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._vjps:
                if node.requires_grad:
                    node.grad = g.copy() if g.base is not None else g
                continue
            for parent, vjp in node._vjps:
                pg = vjp(g)
                acc = grads.get(id(parent))
                # vjps may return views or shared arrays; never mutate in place
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- elementwise arithmetic -------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        if isinstance(other, numbers.Number):
            return Tensor(np.asarray(other, dtype=self.data.dtype))
        return Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data + other.data
        return self._make(
            data,
            [
                (self, lambda g: _unbroadcast(g, self.data.shape)),
                (other, lambda g: _unbroadcast(g, other.data.shape)),
            ],
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data - other.data
        return self._make(
            data,
            [
                (self, lambda g: _unbroadcast(g, self.data.shape)),
                (other, lambda g: _unbroadcast(-g, other.data.shape)),
            ],
        )

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other).__sub__(self)

    def __neg__(self) -> "Tensor":
        return self._make(-self.data, [(self, lambda g: -g)])

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data * other.data
        return self._make(
            data,
            [
                (self, lambda g: _unbroadcast(g * other.data, self.data.shape)),
                (other, lambda g: _unbroadcast(g * self.data, other.data.shape)),
            ],
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data / other.data
        return self._make(
            data,
            [
                (self, lambda g: _unbroadcast(g / other.data, self.data.shape)),
                (
                    other,
                    lambda g: _unbroadcast(
                        -g * self.data / (other.data * other.data), other.data.shape
                    ),
                ),
            ],
        )

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other).__truediv__(self)

    def abs(self) -> "Tensor":
        # subgradient 0 at exact ties
        return self._make(np.abs(self.data), [(self, lambda g: g * np.sign(self.data))])

    __abs__ = abs

    # -- matmul ------------------------------------------------------------------

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return self._make(
            self.data.reshape(shape), [(self, lambda g: g.reshape(old))]
        )

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return self._make(
            self.data.transpose(axes), [(self, lambda g: g.transpose(inv))]
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return self._make(
            self.data.swapaxes(a, b), [(self, lambda g: g.swapaxes(a, b))]
        )

    def __getitem__(self, idx) -> "Tensor":
        data = self.data[idx]
        if np.isscalar(data) or data.ndim == 0:
            data = np.asarray(data)

        def vjp(g, idx=idx):
            buf = np.zeros_like(self.data)
            np.add.at(buf, idx, g)
            return buf

        return self._make(data.copy(), [(self, vjp)])

    def roll(self, shifts, axes) -> "Tensor":
        neg = tuple(-s for s in shifts) if isinstance(shifts, tuple) else -shifts
        return self._make(
            np.roll(self.data, shifts, axis=axes),
            [(self, lambda g: np.roll(g, neg, axis=axes))],
        )

    # -- reductions -----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, self.data.shape).copy()
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, self.data.shape).copy()

        return self._make(np.asarray(data), [(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading dimensions."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(
            f"matmul batch dimensions not broadcastable: {a.data.shape} vs {b.data.shape}"
        ) from exc

    def vjp_a(g):
        return _unbroadcast_batch(g @ b.data.swapaxes(-1, -2), a.data.shape)

    def vjp_b(g):
        return _unbroadcast_batch(a.data.swapaxes(-1, -2) @ g, b.data.shape)

    return a._make(data, [(a, vjp_a), (b, vjp_b)])


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; slices sum to one."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if np.isnan(x.data).any():
        raise NumericalError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return x._make(y, [(x, vjp)])


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply gamma, beta."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def vjp_x(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    def vjp_gamma(g):
        return (g * xhat).reshape(-1, d).sum(axis=0)

    def vjp_beta(g):
        return g.reshape(-1, d).sum(axis=0)

    return x._make(y, [(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)])


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * phi

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return g * (phi + x.data * pdf)

    return x._make(y, [(x, vjp)])


def _corr2d(x: np.ndarray, w: np.ndarray, padding: int) -> tuple:
    """Cross-correlate (b,h,w,cin) with (kh,kw,cin,cout); returns (out, cols)."""
    kh, kw, cin, cout = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (b,ho,wo,cin,kh,kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        x.shape[0], win.shape[1], win.shape[2], kh * kw * cin
    )
    out = cols @ w.reshape(kh * kw * cin, cout)
    return out, cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """2-D cross-correlation, stride 1, channels-last.

    x: (b, h, w, cin); weight: (kh, kw, cin, cout); bias: (cout,) or None.
    Output spatial size is h + 2*padding - kh + 1 (same for width).
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects x (b,h,w,cin) and weight (kh,kw,cin,cout), got "
            f"{x.data.shape} and {weight.data.shape}"
        )
    kh, kw, cin, cout = weight.data.shape
    if x.data.shape[-1] != cin:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs weight {weight.data.shape}"
        )
    if x.data.shape[1] + 2 * padding < kh or x.data.shape[2] + 2 * padding < kw:
        raise ShapeError(
            f"conv2d input {x.data.shape} smaller than kernel ({kh},{kw}) at padding {padding}"
        )
    out, cols = _corr2d(x.data, weight.data, padding)
    if bias is not None:
        out = out + bias.data

    def vjp_x(g):
        # full correlation with the spatially flipped, channel-swapped kernel
        wt = np.ascontiguousarray(weight.data[::-1, ::-1].transpose(0, 1, 3, 2))
        dx, _ = _corr2d(g, wt, kh - 1 - padding)
        return dx

    def vjp_w(g):
        dw = cols.reshape(-1, kh * kw * cin).T @ g.reshape(-1, cout)
        return dw.reshape(kh, kw, cin, cout)

    vjps = [(x, vjp_x), (weight, vjp_w)]
    if bias is not None:
        vjps.append((bias, lambda g: g.sum(axis=(0, 1, 2))))
    return x._make(out, vjps)


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D table by integer index; differentiable in the table."""
    index = np.asarray(index)
    data = table.data[index]

    def vjp(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, index, g)
        return buf

    return table._make(data, [(table, vjp)])
