"""Two-branch attention encoder over zone observations, memory and season."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpavc.errors import ConfigError, DimensionError, NumericError
from tpavc.nn import tensor as T
from tpavc.nn.module import AttentionBlock, BiLSTM, Embedding, Linear, Module
from tpavc.nn.tensor import Tensor


@dataclass
class EncoderConfig:
    h: int = 64
    layers: int = 3
    region_size: int = 4
    n_features: int = 6
    memory: int = 20

    def validate(self) -> None:
        if self.h < 2 or self.h % 2:
            raise ConfigError(f"latent size h must be even and >= 2, got {self.h}")
        if self.layers < 1:
            raise ConfigError("need at least one attention layer per branch")
        if self.region_size < 1:
            raise ConfigError("a zone needs at least one bus")
        if self.memory < 1:
            raise ConfigError("memory window must be >= 1")


@dataclass
class EncodedFeatures:
    F_m: Tensor  # [B, 2h] memory-aware zone summary
    F_m_hat: Tensor  # [B, h]
    F_z: Tensor  # [B, 2h] final features


class AttentionStack(Module):
    def __init__(self, dim: int, layers: int, rng: np.random.Generator) -> None:
        self.blocks = [AttentionBlock(dim, rng) for _ in range(layers)]

    def forward(self, E) -> Tensor:
        for block in self.blocks:
            E = block(E)
        return E


class MultiScaleEncoder(Module):
    """Fine branch over per-bus rows plus memory, coarse branch over its summary plus season.

    Inputs are batched: bus features ``[B, r, n_features]``, memory
    ``[B, K]`` and integer season ``[B]``. ``use_memory=False`` feeds a
    zero window and ``use_season=False`` zeroes the season embedding, which
    are the two input ablations.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 use_memory: bool = True, use_season: bool = True) -> None:
        cfg.validate()
        self.cfg = cfg
        h = cfg.h
        self.g_o = Linear(cfg.n_features, h, rng)
        self.g_m = BiLSTM(1, h, rng)
        self.fine = AttentionStack(2 * h, cfg.layers, rng)
        self.g_h = Linear(2 * h, h, rng)
        self.g_z = Embedding(4, h, rng)
        self.coarse = AttentionStack(2 * h, cfg.layers, rng)
        self._use_memory = use_memory
        self._use_season = use_season

    @property
    def h(self) -> int:
        return self.cfg.h

    def project_observation(self, feats) -> Tensor:
        feats = T.as_tensor(feats)
        if feats.shape[-2:] != (self.cfg.region_size, self.cfg.n_features):
            raise DimensionError(
                f"zone features {feats.shape} do not match ({self.cfg.region_size}, {self.cfg.n_features})")
        return self.g_o(feats)

    def encode_memory(self, memory) -> Tensor:
        """BiLSTM summary of the window, shape [B, h] (broadcast over rows by the caller)."""
        memory = np.asarray(memory.data if isinstance(memory, Tensor) else memory, dtype=np.float64)
        if memory.shape[-1] != self.cfg.memory:
            raise DimensionError(f"memory window length {memory.shape[-1]} != {self.cfg.memory}")
        if not self._use_memory:
            memory = np.zeros_like(memory)
        return self.g_m(memory.reshape(memory.shape[:-1] + (self.cfg.memory, 1)))

    def fine_grain(self, x_o: Tensor, x_m: Tensor) -> Tensor:
        B, r, h = x_o.shape
        E0 = T.concat([x_o, T.broadcast_to(T.reshape(x_m, (B, 1, h)), (B, r, h))], axis=-1)
        return T.mean(self.fine(E0), axis=1)

    def coarse_grain(self, F_m: Tensor, season) -> tuple[Tensor, Tensor]:
        season = np.asarray(season)
        if season.dtype.kind not in "iu" or season.size and (season.min() < 0 or season.max() > 3):
            raise IndexError("season index must be an integer in 0..3")
        B = F_m.shape[0]
        r, h = self.cfg.region_size, self.h
        F_m_hat = self.g_h(F_m)
        x_z = self.g_z(season)
        if not self._use_season:
            x_z = T.mul(x_z, 0.0)
        rows = T.concat([T.broadcast_to(T.reshape(F_m_hat, (B, 1, h)), (B, r, h)),
                         T.broadcast_to(T.reshape(x_z, (B, 1, h)), (B, r, h))], axis=-1)
        return T.mean(self.coarse(rows), axis=1), F_m_hat

    def forward(self, feats, memory, season) -> EncodedFeatures:
        x_o = self.project_observation(feats)
        x_m = self.encode_memory(memory)
        F_m = self.fine_grain(x_o, x_m)
        F_z, F_m_hat = self.coarse_grain(F_m, season)
        if not np.all(np.isfinite(F_z.data)):
            raise NumericError("encoder produced non-finite features")
        return EncodedFeatures(F_m, F_m_hat, F_z)
