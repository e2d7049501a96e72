"""Per-agent actors: the prototype-aware policy and a plain MLP baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpavc.env import ObsLayout
from tpavc.nn import tensor as T
from tpavc.nn.module import MLP, Linear, Module
from tpavc.nn.tensor import Tensor
from tpavc.tpa.encoder import EncoderConfig, MultiScaleEncoder
from tpavc.tpa.prototype import (
    N_PROTOTYPES,
    PrototypeBank,
    PrototypeHyper,
    PrototypeLosses,
    loss_prototype_total,
    similarity_vector,
    squared_distances,
)


@dataclass
class ActorInputs:
    feats: np.ndarray  # [B, r, 6] scaled bus features
    memory: np.ndarray  # [B, K] scaled reactive history
    season: np.ndarray  # [B] integer season
    flat: np.ndarray  # [B, r*6] scaled features, flattened


class InputScaler:
    """Turns packed raw observations into scaled network inputs."""

    def __init__(self, layout: ObsLayout, shift: np.ndarray, scale: np.ndarray) -> None:
        self.layout = layout
        self.shift = shift
        self.scale = scale
        # q_pv_prev column shares the power scale
        self.memory_scale = scale[3]

    def __call__(self, packed: np.ndarray) -> ActorInputs:
        feats, memory, season = self.layout.unpack(packed)
        feats = (feats - self.shift) * self.scale
        B = feats.shape[0]
        return ActorInputs(feats, memory * self.memory_scale, np.argmax(season, axis=-1),
                           feats.reshape(B, -1))


@dataclass
class ActorOutput:
    action: Tensor  # [B]
    F_z: Tensor | None = None
    d2: Tensor | None = None
    similarity: Tensor | None = None
    logits: Tensor | None = None
    match: np.ndarray | None = None


class TPAActor(Module):
    """Encoder, prototype retrieval and a tanh-squashed action head.

    ``use_prototypes=False`` skips matching and feeds ``g_h(F_z)`` straight
    to the action head; ``use_memory``/``use_season`` switch the encoder
    input ablations.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, action_bound: float = 0.8,
                 use_memory: bool = True, use_season: bool = True, use_prototypes: bool = True,
                 eps: float = 1e-4) -> None:
        h = cfg.h
        self.encoder = MultiScaleEncoder(cfg, rng, use_memory=use_memory, use_season=use_season)
        self.g_c = Linear(4 * h, h, rng)
        self.g_a = MLP([h, h, 1], rng)
        self.classifier = Linear(N_PROTOTYPES, 4, rng)
        self._c = action_bound
        self._eps = eps
        self._use_prototypes = use_prototypes

    @property
    def uses_prototypes(self) -> bool:
        return self._use_prototypes

    def action_head(self, F_p) -> Tensor:
        out = self.g_a(F_p)
        return T.mul(T.tanh(T.reshape(out, (out.shape[0],))), self._c)

    def retrieval_features(self, F_z: Tensor, p_star: Tensor) -> Tensor:
        return self.g_c(T.concat([F_z, p_star], axis=-1))

    def season_logits(self, sim: Tensor) -> Tensor:
        return self.classifier(sim)

    def forward(self, x: ActorInputs, bank: PrototypeBank | None = None) -> ActorOutput:
        enc = self.encoder(x.feats, x.memory, x.season)
        F_z = enc.F_z
        if not self._use_prototypes:
            return ActorOutput(self.action_head(self.encoder.g_h(F_z)), F_z)
        d2 = squared_distances(F_z, bank.bank)
        sim = similarity_vector(d2, self._eps)
        match = np.argmax(sim.data, axis=1)
        p_star = T.take_rows(bank.bank, match)
        action = self.action_head(self.retrieval_features(F_z, p_star))
        return ActorOutput(action, F_z, d2, sim, self.season_logits(sim), match)

    def prototype_losses(self, out: ActorOutput, season, bank: PrototypeBank,
                         hyper: PrototypeHyper) -> PrototypeLosses | None:
        if not self._use_prototypes:
            return None
        return loss_prototype_total(out.logits, out.d2, season, bank, hyper)


class MLPActor(Module):
    """Plain per-agent policy over the flattened zone features."""

    def __init__(self, n_in: int, rng: np.random.Generator, hidden: int = 64, action_bound: float = 0.8) -> None:
        self.net = MLP([n_in, hidden, hidden, 1], rng)
        self._c = action_bound

    @property
    def uses_prototypes(self) -> bool:
        return False

    def forward(self, x: ActorInputs, bank=None) -> ActorOutput:
        out = self.net(x.flat)
        return ActorOutput(T.mul(T.tanh(T.reshape(out, (out.shape[0],))), self._c))

    def prototype_losses(self, out, season, bank, hyper):
        return None
