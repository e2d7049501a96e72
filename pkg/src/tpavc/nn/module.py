"""Parameter containers and the standard layers built on the tape."""
from __future__ import annotations

import math

import numpy as np

from tpavc.errors import CompatibilityError, DimensionError, NumericError
from tpavc.nn import tensor as T
from tpavc.nn.tensor import ParamTensor, Tensor


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def parameters(self, prefix: str = "") -> dict[str, ParamTensor]:
        found: dict[str, ParamTensor] = {}
        seen: set[int] = set()
        self._collect(prefix, found, seen)
        return found

    def _collect(self, prefix: str, found: dict, seen: set) -> None:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, ParamTensor):
                if id(value) not in seen:
                    seen.add(id(value))
                    found[name] = value
            elif isinstance(value, Module):
                value._collect(name + ".", found, seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect(f"{name}.{i}.", found, seen)
                    elif isinstance(item, ParamTensor) and id(item) not in seen:
                        seen.add(id(item))
                        found[f"{name}.{i}"] = item

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise CompatibilityError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, p in params.items():
            if k not in state:
                continue
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise CompatibilityError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
        for k, p in params.items():
            if k in state:
                p.data = np.array(state[k], dtype=np.float64)
                p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.W = ParamTensor(uniform_init(rng, n_in, (n_in, n_out)), "W")
        self.b = ParamTensor(np.zeros(n_out), "b") if bias else None

    def forward(self, x) -> Tensor:
        return T.linear(x, self.W, self.b)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator) -> None:
        self.table = ParamTensor(uniform_init(rng, n, (n, dim)), "table")

    def forward(self, idx) -> Tensor:
        return T.take_rows(self.table, idx)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-8) -> None:
        self.gain = ParamTensor(np.ones(dim), "gain")
        self.bias = ParamTensor(np.zeros(dim), "bias")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(T.as_tensor(x), self.gain, self.bias, self.eps)


class LSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator) -> None:
        self.Wx = ParamTensor(uniform_init(rng, hidden, (n_in, 4 * hidden)), "Wx")
        self.Wh = ParamTensor(uniform_init(rng, hidden, (hidden, 4 * hidden)), "Wh")
        self.b = ParamTensor(np.zeros(4 * hidden), "b")
        self.hidden = hidden

    def forward(self, seq, reverse: bool = False) -> Tensor:
        return T.lstm(T.as_tensor(seq), self.Wx, self.Wh, self.b, reverse=reverse)


class BiLSTM(Module):
    """Forward and backward LSTMs whose final hidden states are concatenated."""

    def __init__(self, n_in: int, out_dim: int, rng: np.random.Generator) -> None:
        if out_dim % 2:
            raise DimensionError("BiLSTM output dimension must be even")
        self.fwd = LSTM(n_in, out_dim // 2, rng)
        self.bwd = LSTM(n_in, out_dim // 2, rng)

    def forward(self, seq) -> Tensor:
        seq = T.as_tensor(seq)
        squeeze = seq.ndim == 2
        if squeeze:
            seq = T.reshape(seq, (1,) + seq.shape)
        if seq.shape[1] < 1:
            raise ValueError("BiLSTM needs a non-empty sequence")
        out = T.concat([self.fwd(seq), self.bwd(seq, reverse=True)], axis=-1)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class AttentionBlock(Module):
    """Single-head self-attention with a residual connection and layer norm.

    Rows of ``E`` attend to each other; no positional information is added,
    so the block is equivariant to row permutations.
    """

    def __init__(self, dim: int, rng: np.random.Generator) -> None:
        self.W_Q = ParamTensor(uniform_init(rng, dim, (dim, dim)), "W_Q")
        self.W_K = ParamTensor(uniform_init(rng, dim, (dim, dim)), "W_K")
        self.W_V = ParamTensor(uniform_init(rng, dim, (dim, dim)), "W_V")
        self.W_Y = ParamTensor(uniform_init(rng, dim, (dim, dim)), "W_Y")
        self.norm = LayerNorm(dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, E, return_weights: bool = False):
        E = T.as_tensor(E)
        if E.shape[-1] != self.W_Q.shape[0] or E.shape[-2] < 1:
            raise DimensionError(f"attention input {E.shape} vs model dim {self.W_Q.shape[0]}")
        if not np.all(np.isfinite(E.data)):
            raise NumericError("non-finite attention input")
        Q = T.linear(E, self.W_Q)
        K = T.linear(E, self.W_K)
        V = T.linear(E, self.W_V)
        A = T.softmax(T.mul(T.matmul(Q, T.swap_last(K)), self.scale), axis=-1)
        Y = T.matmul(A, V)
        out = self.norm(T.add(E, T.linear(Y, self.W_Y)))
        return (out, A.data) if return_weights else out


class MLP(Module):
    def __init__(self, sizes: list[int], rng: np.random.Generator) -> None:
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h
