"""Season-owned prototype bank, similarity matching and the prototype losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpavc.errors import CompatibilityError, ConfigError, NumericError, ProfileError
from tpavc.nn import tensor as T
from tpavc.nn.checkpoint import load_checkpoint, save_checkpoint
from tpavc.nn.module import LSTM, Linear, Module, uniform_init
from tpavc.nn.tensor import ParamTensor, Tensor
from tpavc.profiles import DEFAULT_CALENDAR, STEPS_PER_DAY, ProfileSet, SeasonCalendar

N_PROTOTYPES = 24
PER_SEASON = 6


@dataclass
class PrototypeHyper:
    eps: float = 1e-4
    xi: float = 0.3
    lambda_clst: float = 0.1
    lambda_sep: float = 0.05
    lambda_div: float = 0.001
    # bank rows are kept inside a ball of radius max_norm * sqrt(dim); <= 0 disables
    max_norm: float = 1.0

    def validate(self) -> None:
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not -1 <= self.xi < 1:
            raise ConfigError("xi must lie in [-1, 1)")
        if min(self.lambda_clst, self.lambda_sep, self.lambda_div) < 0:
            raise ConfigError("loss weights must be nonnegative")


class PrototypeBank(Module):
    """24 vectors of size 2h; rows 6k..6k+5 belong to season k."""

    def __init__(self, vectors: np.ndarray, frozen: bool = False) -> None:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != N_PROTOTYPES:
            raise ValueError(f"a bank holds exactly {N_PROTOTYPES} prototypes, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise NumericError("prototype vectors must be finite")
        self.bank = ParamTensor(vectors, "bank")
        self.frozen = frozen
        self._owner = np.repeat(np.arange(4), PER_SEASON)

    @property
    def owner(self) -> np.ndarray:
        return self._owner

    @property
    def dim(self) -> int:
        return self.bank.shape[1]

    def trainable(self) -> dict[str, ParamTensor]:
        return {} if self.frozen else self.parameters("prototypes.")

    def project(self, max_norm: float) -> None:
        """Shrink rows longer than ``max_norm * sqrt(dim)`` back onto that sphere."""
        if self.frozen or max_norm <= 0:
            return
        radius = max_norm * np.sqrt(self.dim)
        norms = np.linalg.norm(self.bank.data, axis=1, keepdims=True)
        over = norms > radius
        if np.any(over):
            self.bank.data = np.where(over, self.bank.data * (radius / np.maximum(norms, 1e-300)), self.bank.data)

    def save(self, path) -> None:
        save_checkpoint(path, {"prototypes.bank": self.bank.data},
                        {"kind": "prototype_bank", "owner": self._owner.tolist(), "dim": self.dim})

    @classmethod
    def load(cls, path, expected_dim: int | None = None, frozen: bool = True) -> "PrototypeBank":
        tensors, meta = load_checkpoint(path)
        if "prototypes.bank" not in tensors:
            raise CompatibilityError(f"{path} holds no prototype bank")
        vec = tensors["prototypes.bank"]
        if meta.get("owner") is not None and list(meta["owner"]) != np.repeat(np.arange(4), PER_SEASON).tolist():
            raise CompatibilityError("bank season ownership is not 6 per season in order")
        if expected_dim is not None and vec.shape[1] != expected_dim:
            raise CompatibilityError(
                f"bank prototypes have size {vec.shape[1]} but the encoder produces {expected_dim} (2h)")
        return cls(vec, frozen=frozen)


def _representative_days(profiles: ProfileSet, calendar: SeasonCalendar) -> list[int]:
    by_season: list[list[int]] = [[], [], [], []]
    for d in range(profiles.horizon_days):
        _, month, _ = profiles.day_month(d)
        by_season[calendar.season_index(month)].append(d)
    chosen = []
    for k, days in enumerate(by_season):
        if len(days) < PER_SEASON:
            raise ProfileError(
                f"season {k} has {len(days)} days of data; data-mode initialisation needs {PER_SEASON}")
        pos = np.round(np.linspace(0, len(days) - 1, PER_SEASON)).astype(int)
        chosen += [days[i] for i in pos]
    return chosen


def day_signature(profiles: ProfileSet, day: int) -> np.ndarray:
    """Whole-day [steps, 3] sequence of total load p, total load q and total PV p."""
    sl = slice(day * STEPS_PER_DAY, (day + 1) * STEPS_PER_DAY)
    return np.stack([profiles.load_p[sl].sum(axis=1), profiles.load_q[sl].sum(axis=1),
                     profiles.pv_p[sl].sum(axis=1)], axis=1)


def init_prototypes(profiles: ProfileSet | None, h: int, mode: str = "data", seed: int = 0,
                    calendar: SeasonCalendar = DEFAULT_CALENDAR, frozen: bool = False) -> PrototypeBank:
    """Build a bank of size-2h prototypes.

    ``data`` mode encodes 24 evenly spaced days (6 per season) with a seeded
    LSTM whose final hidden state is projected to 2h, centred across the bank
    and standardised per prototype, which places prototypes on the same scale
    as layer-normalised features.
    ``random`` mode draws uniform entries.
    """
    rng = np.random.default_rng(seed)
    dim = 2 * h
    if mode == "random":
        return PrototypeBank(uniform_init(rng, dim, (N_PROTOTYPES, dim)), frozen=frozen)
    if mode != "data":
        raise ConfigError(f"unknown prototype init mode {mode!r}")
    if profiles is None:
        raise ProfileError("data-mode initialisation needs a profile set")
    days = _representative_days(profiles, calendar)
    seqs = np.stack([day_signature(profiles, d) for d in days])  # [24, steps, 3]
    scale = np.abs(seqs).reshape(-1, 3).max(axis=0)
    seqs = seqs / np.where(scale > 0, scale, 1.0)
    lstm = LSTM(3, h, rng)
    proj = Linear(h, dim, rng)
    hidden = lstm(seqs).data
    vec = proj(hidden).data
    # day encodings share a large common component; keep only what varies between days
    vec = vec - vec.mean(axis=0, keepdims=True)
    vec = (vec - vec.mean(axis=1, keepdims=True)) / (vec.std(axis=1, keepdims=True) + 1e-12)
    return PrototypeBank(vec, frozen=frozen)


# -- similarity and matching ---------------------------------------------------


def similarity(p, F, eps: float = 1e-4):
    """``log((|p - F|^2 + 1) / (|p - F|^2 + eps))`` for plain arrays (last axis is the vector)."""
    d2 = np.sum((np.asarray(p, dtype=np.float64) - np.asarray(F, dtype=np.float64)) ** 2, axis=-1)
    out = np.log((d2 + 1.0) / (d2 + eps))
    return float(out) if np.ndim(out) == 0 else out


def squared_distances(F: Tensor, bank: Tensor) -> Tensor:
    """[B, 24] squared distances, computed from explicit differences so zero stays exactly zero."""
    B, D = F.shape
    diff = T.sub(T.reshape(F, (B, 1, D)), T.reshape(bank, (1,) + bank.shape))
    return T.sum(T.square(diff), axis=-1)


def similarity_vector(d2: Tensor, eps: float) -> Tensor:
    return T.sub(T.log(T.add(d2, 1.0)), T.log(T.add(d2, eps)))


def match_prototype(bank: PrototypeBank, F_z, eps: float = 1e-4):
    """Index of the most similar prototype per row (lowest index on ties) and the similarity vectors."""
    F = T.as_tensor(F_z)
    squeeze = F.ndim == 1
    if squeeze:
        F = T.reshape(F, (1, -1))
    s = similarity_vector(squared_distances(F, bank.bank), eps)
    idx = np.argmax(s.data, axis=1)
    if squeeze:
        return int(idx[0]), s.data[0]
    return idx, s


# -- losses ----------------------------------------------------------------------


def loss_cluster(d2: Tensor, season: np.ndarray, owner: np.ndarray) -> Tensor:
    own = owner[None, :] == np.asarray(season)[:, None]
    return T.mean(T.masked_min(d2, own, axis=1))


def loss_separation(d2: Tensor, season: np.ndarray, owner: np.ndarray) -> Tensor:
    other = owner[None, :] != np.asarray(season)[:, None]
    return T.mul(T.mean(T.masked_min(d2, other, axis=1)), -1.0)


def loss_diversity(bank: Tensor, owner: np.ndarray, xi: float) -> Tensor:
    """Sum over ordered same-season pairs i != j of ``relu(cos(p_i, p_j) - xi)``."""
    norm = T.sqrt(T.sum(T.square(bank), axis=1, keepdims=True))
    unit = T.div(bank, norm)
    cos = T.matmul(unit, T.swap_last(unit))
    mask = (owner[:, None] == owner[None, :]) & ~np.eye(len(owner), dtype=bool)
    return T.sum(T.mul(T.relu(T.sub(cos, xi)), mask.astype(np.float64)))


@dataclass
class PrototypeLosses:
    ce: Tensor
    clst: Tensor
    sep: Tensor
    div: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("ce", "clst", "sep", "div", "total")}


def loss_prototype_total(logits: Tensor, d2: Tensor, season, bank: PrototypeBank,
                         hyper: PrototypeHyper) -> PrototypeLosses:
    season = np.asarray(season)
    ce = T.cross_entropy(logits, season)
    clst = loss_cluster(d2, season, bank.owner)
    sep = loss_separation(d2, season, bank.owner)
    div = loss_diversity(bank.bank, bank.owner, hyper.xi)
    total = T.add(T.add(T.add(ce, T.mul(clst, hyper.lambda_clst)), T.mul(sep, hyper.lambda_sep)),
                  T.mul(div, hyper.lambda_div))
    return PrototypeLosses(ce, clst, sep, div, total)
