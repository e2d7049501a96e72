"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations run while a :class:`Tape` is active are appended to it in execution
order, so replaying the tape backwards visits every node after all of its
consumers. Outside a tape the same functions just compute values.

    with Tape() as tape:
        loss = mean(square(linear(x, W, b)))
    tape.backward(loss)
    W.grad  # d loss / d W
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from tpavc.errors import DimensionError, NumericError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: "Tensor", grad: np.ndarray | None = None) -> None:
        if grad is None:
            if loss.data.size != 1:
                raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        if not loss.requires_grad:
            return
        loss.grad = np.asarray(grad, dtype=np.float64)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


class ParamTensor(Tensor):
    """Learnable parameter; ``grad`` always has the same shape as ``values``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "") -> None:
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def values(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                tape.records.append((out, backward))
                break
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _result(x.data * x.data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g):
        x._accumulate(0.5 * g / out)

    return _result(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out)

    return _result(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g / x.data)

    return _result(np.log(x.data), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out * out))

    return _result(out, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _result(x.data * mask, (x,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(out, (a, b), backward)


def linear(x, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W + bias`` over the last axis of ``x`` (any number of leading axes)."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[0] or (bias is not None and bias.shape != (W.shape[1],)):
        raise DimensionError(
            f"linear: input {x.shape} vs weight {W.shape}"
            + (f" and bias {bias.shape}" if bias is not None else "")
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ W.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (W.shape[1],))
    parents = (x, W) if bias is None else (x, W, bias)

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        if x.requires_grad:
            x._accumulate((g2 @ W.data.T).reshape(x.shape))
        if W.requires_grad:
            W._accumulate(x2.T @ g2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    return _result(out, parents, backward)


def swap_last(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(x.data, -1, -2), (x,), backward)


# -- reductions and reshaping -----------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(_unbroadcast(g, x.shape))

    return _result(np.broadcast_to(x.data, shape), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        for t, piece in zip(xs, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(out, xs, backward)


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _result(np.array(out), (x,), backward)


def take_rows(table: Tensor, rows) -> Tensor:
    """Gather ``table[rows]``; gradient is scattered back onto the picked rows only."""
    rows = np.asarray(rows)
    if rows.dtype.kind not in "iu":
        raise IndexError("row indices must be integers")
    k = table.shape[0]
    if rows.size and (rows.min() < 0 or rows.max() >= k):
        raise IndexError(f"row index out of range for table with {k} rows")
    out = table.data[rows]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, rows, g)
        table._accumulate(full)

    return _result(out, (table,), backward)


def masked_min(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Minimum over entries where ``mask`` is true; gradient goes to the argmin."""
    masked = np.where(mask, x.data, np.inf)
    arg = np.expand_dims(masked.argmin(axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        x._accumulate(full)

    return _result(out, (x,), backward)


# -- fused neural-network primitives ------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(n)
    out = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        logits._accumulate(g * p / n)

    return _result(np.asarray(out), (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gain`` and ``bias``."""
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)

    return _result(out, (x, gain, bias), backward)


def lstm(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x`` of shape [B, T, a]; return the final hidden state [B, H].

    Gate layout along the 4H axis is (input, forget, cell, output). Initial
    hidden and cell states are zero. ``reverse`` consumes the sequence from
    the last element to the first.
    """
    if x.ndim != 3:
        raise DimensionError(f"lstm expects [B, T, a], got {x.shape}")
    B, T, a = x.shape
    if T < 1:
        raise ValueError("lstm needs a sequence of length >= 1")
    H = Wh.shape[0]
    if Wx.shape != (a, 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(f"lstm weights {Wx.shape}, {Wh.shape}, {b.shape} do not match input {x.shape}")
    xs = x.data[:, ::-1, :] if reverse else x.data
    # one tanh per step serves all gates: sigmoid(z) = 0.5 + 0.5 * tanh(z / 2)
    half = np.full(4 * H, 0.5)
    half[2 * H:3 * H] = 1.0
    offset = np.full(4 * H, 0.5)
    offset[2 * H:3 * H] = 0.0
    xw = ((xs.reshape(B * T, a) @ Wx.data).reshape(B, T, 4 * H) + b.data) * half
    WhD = Wh.data
    Whs = WhD * half
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs, cs, gates = [h], [c], []
    for t in range(T):
        act = np.tanh(xw[:, t] + h @ Whs) * half + offset
        i = act[:, :H]
        f = act[:, H:2 * H]
        gg = act[:, 2 * H:3 * H]
        o = act[:, 3 * H:]
        c = f * c + i * gg
        tc = np.tanh(c)
        h = o * tc
        gates.append((i, f, gg, o, tc))
        hs.append(h)
        cs.append(c)

    def backward(g):
        dh = g
        dc = np.zeros((B, H))
        dz_all = np.empty((B, T, 4 * H))
        for t in range(T - 1, -1, -1):
            i, f, gg, o, tc = gates[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dc = dc * f
            dh = dz @ WhD.T
        dz2 = dz_all.reshape(B * T, 4 * H)
        if Wh.requires_grad:
            hprev = np.stack(hs[:-1], axis=1).reshape(B * T, H)
            Wh._accumulate(hprev.T @ dz2)
        if Wx.requires_grad:
            Wx._accumulate(xs.reshape(B * T, a).T @ dz2)
        if b.requires_grad:
            b._accumulate(dz2.sum(axis=0))
        if x.requires_grad:
            dx = (dz2 @ Wx.data.T).reshape(B, T, a)
            x._accumulate(dx[:, ::-1, :].copy() if reverse else dx)

    return _result(h, (x, Wx, Wh, b), backward)


def check_finite(x: Tensor, what: str = "value") -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite {what}")
    return x
