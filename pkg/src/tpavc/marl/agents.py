"""Centralised-critic actor-critic learners (MADDPG and MATD3) over per-agent actors."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from tpavc.env import N_FEATURES, VoltageControlEnv, feature_scale
from tpavc.errors import ConfigError, NumericError
from tpavc.nn import tensor as T
from tpavc.nn.module import MLP, Module
from tpavc.nn.optim import Adam
from tpavc.nn.tensor import ParamTensor, Tape
from tpavc.marl.buffer import Batch
from tpavc.tpa.encoder import EncoderConfig
from tpavc.tpa.policy import InputScaler, MLPActor, TPAActor
from tpavc.tpa.prototype import PrototypeBank, PrototypeHyper

ALGORITHMS = ("MADDPG", "MATD3")
ACTORS = ("TPA", "MLP")


@dataclass
class TrainConfig:
    algorithm: str = "MADDPG"
    actor: str = "TPA"
    gamma: float = 0.98
    tau: float = 0.01
    batch_size: int = 32
    epochs: int = 400
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    buffer_capacity: int = 5000
    warmup: int = 500
    update_every: int = 1
    noise_start: float = 0.2  # fraction of the action bound
    noise_end: float = 0.02
    noise_decay_fraction: float = 0.5
    policy_delay: int = 2
    target_noise: float = 0.05
    target_noise_clip: float = 0.1
    critic_hidden: int = 128
    mlp_hidden: int = 64
    val_every: int = 20
    checkpoint_every: int = 0
    max_grad_norm: float = 10.0
    # critic targets use reward * reward_scale; sets the weight of the Q term against the prototype losses
    reward_scale: float = 1.0

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.actor not in ACTORS:
            raise ConfigError(f"unknown actor {self.actor!r}; choose from {ACTORS}")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("need batch_size >= 1, epochs >= 1 and capacity >= batch_size")
        if self.warmup < self.batch_size:
            raise ConfigError("warmup must cover at least one batch")
        if self.update_every < 1 or self.policy_delay < 1 or self.val_every < 1:
            raise ConfigError("update_every, policy_delay and val_every must be >= 1")
        if min(self.actor_lr, self.critic_lr) <= 0:
            raise ConfigError("learning rates must be positive")
        if not self.reward_scale > 0:
            raise ConfigError("reward_scale must be positive")


def soft_update(online: dict[str, ParamTensor], target: dict[str, ParamTensor], tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` elementwise."""
    for name, p in online.items():
        t = target[name]
        t.data = tau * p.data + (1.0 - tau) * t.data


class Critic(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator) -> None:
        self.net = MLP([n_in, hidden, hidden, 1], rng)

    def forward(self, x):
        out = self.net(x)
        return T.reshape(out, (out.shape[0],))


@dataclass
class Ablation:
    memory: bool = True
    season: bool = True
    prototypes: bool = True


class AgentSet:
    """Actors (one per PV inverter), the shared prototype bank and the global critic(s)."""

    def __init__(self, env: VoltageControlEnv, cfg: TrainConfig, enc_cfg: EncoderConfig,
                 hyper: PrototypeHyper, bank: PrototypeBank | None, seed: int,
                 ablation: Ablation | None = None) -> None:
        cfg.validate()
        hyper.validate()
        self.cfg = cfg
        self.hyper = hyper
        self.ablation = ablation or Ablation()
        self.n_agents = env.n_agents
        self.c = env.cfg.action_bound
        self.topology_dict = env.topology.to_dict()
        rng = np.random.default_rng(seed)
        shift, scale = feature_scale(env.topology)
        self.scalers = [InputScaler(lay, shift, scale) for lay in env.layouts]
        self.actors: list[Module] = []
        for lay in env.layouts:
            if cfg.actor == "TPA":
                ecfg = EncoderConfig(h=enc_cfg.h, layers=enc_cfg.layers, region_size=lay.n_rows,
                                     n_features=N_FEATURES, memory=env.cfg.memory)
                self.actors.append(TPAActor(ecfg, rng, self.c, self.ablation.memory, self.ablation.season,
                                            self.ablation.prototypes, hyper.eps))
            else:
                self.actors.append(MLPActor(lay.n_rows * N_FEATURES, rng, cfg.mlp_hidden, self.c))
        self.uses_bank = cfg.actor == "TPA" and self.ablation.prototypes
        if self.uses_bank and bank is None:
            raise ConfigError("the prototype-aware actor needs a prototype bank")
        self.bank = bank if self.uses_bank else None
        n_critics = 2 if cfg.algorithm == "MATD3" else 1
        self.state_shift = np.concatenate([np.tile(shift, env.n_bus), np.zeros(4)])
        self.state_scale = np.concatenate([np.tile(scale, env.n_bus), np.ones(4)])
        self.critics = [Critic(env.state_dim + self.n_agents, cfg.critic_hidden, rng) for _ in range(n_critics)]
        self.target_actors = copy.deepcopy(self.actors)
        self.target_critics = copy.deepcopy(self.critics)
        if self.bank is not None and not self.bank.frozen:
            self.target_bank = copy.deepcopy(self.bank)
        else:
            self.target_bank = self.bank
        self._refresh_views()
        self.actor_opt = Adam(self.actor_parameters().values(), lr=cfg.actor_lr, max_grad_norm=cfg.max_grad_norm)
        self.critic_opt = Adam(self._critic_params.values(), lr=cfg.critic_lr, max_grad_norm=cfg.max_grad_norm)
        self.critic_steps = 0

    def _refresh_views(self) -> None:
        """Cache (online, target) parameter pairs; tensors are updated in place, so views stay valid."""
        pairs = [(a.parameters(), t.parameters()) for a, t in zip(self.actors, self.target_actors)]
        pairs += [(c.parameters(), t.parameters()) for c, t in zip(self.critics, self.target_critics)]
        if self.bank is not None and self.target_bank is not self.bank:
            pairs.append((self.bank.parameters(), self.target_bank.parameters()))
        self._target_pairs = pairs
        self._critic_params = self.critic_parameters()

    # -- parameter views -------------------------------------------------------

    def actor_parameters(self, actors=None, bank=None, trainable_only: bool = True) -> dict[str, ParamTensor]:
        actors = self.actors if actors is None else actors
        out: dict[str, ParamTensor] = {}
        for i, a in enumerate(actors):
            out.update(a.parameters(f"agents.{i}."))
        bank = self.bank if bank is None else bank
        if bank is not None:
            out.update(bank.trainable() if trainable_only else bank.parameters("prototypes."))
        return out

    def critic_parameters(self, critics=None) -> dict[str, ParamTensor]:
        critics = self.critics if critics is None else critics
        out: dict[str, ParamTensor] = {}
        for k, c in enumerate(critics):
            out.update(c.parameters(f"critic.{k}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        tensors = {k: p.data.copy() for k, p in self.actor_parameters(trainable_only=False).items()}
        tensors.update({k: p.data.copy() for k, p in self.critic_parameters().items()})
        return tensors

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        for i, a in enumerate(self.actors):
            prefix = f"agents.{i}."
            a.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        if self.bank is not None:
            self.bank.load_state_dict({"bank": tensors["prototypes.bank"]})
        for k, c in enumerate(self.critics):
            prefix = f"critic.{k}."
            c.load_state_dict({n[len(prefix):]: v for n, v in tensors.items() if n.startswith(prefix)})
        self.target_actors = copy.deepcopy(self.actors)
        self.target_critics = copy.deepcopy(self.critics)
        if self.bank is not None and not self.bank.frozen:
            self.target_bank = copy.deepcopy(self.bank)
        self._refresh_views()

    # -- acting ------------------------------------------------------------------

    def _policy(self, actors, bank, obs: list[np.ndarray]):
        return [a(scaler(o), bank) for a, scaler, o in zip(actors, self.scalers, obs)]

    def act(self, obs: list[np.ndarray], explore: bool = False, sigma: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
        """Joint actions [B, n_agents]; exploration adds N(0, sigma^2) then clips to the bound."""
        outs = self._policy(self.actors, self.bank, obs)
        a = np.stack([o.action.data for o in outs], axis=1)
        if explore and sigma > 0:
            a = np.clip(a + sigma * rng.standard_normal(a.shape), -self.c, self.c)
        return a

    def __call__(self, obs: list[np.ndarray]) -> np.ndarray:
        return self.act(obs)

    # -- updates -------------------------------------------------------------------

    def _critic_input(self, state: np.ndarray, actions) -> T.Tensor:
        s = (state - self.state_shift) * self.state_scale
        return T.concat([T.Tensor(s), T.mul(T.as_tensor(actions), 1.0 / self.c)], axis=1)

    def target_values(self, batch: Batch, rng: np.random.Generator | None = None) -> np.ndarray:
        outs = self._policy(self.target_actors, self.target_bank, batch.next_obs)
        a_next = np.stack([o.action.data for o in outs], axis=1)
        if self.cfg.algorithm == "MATD3":
            noise = np.clip(self.cfg.target_noise * self.c * rng.standard_normal(a_next.shape),
                            -self.cfg.target_noise_clip * self.c, self.cfg.target_noise_clip * self.c)
            a_next = np.clip(a_next + noise, -self.c, self.c)
        x = self._critic_input(batch.next_state, a_next)
        q_next = np.min(np.stack([c(x).data for c in self.target_critics]), axis=0)
        return self.cfg.reward_scale * batch.reward + self.cfg.gamma * np.where(batch.terminal, 0.0, q_next)

    def critic_update(self, batch: Batch, rng: np.random.Generator | None = None) -> float:
        y = self.target_values(batch, rng)
        self.critic_opt.zero_grad()
        x = self._critic_input(batch.state, batch.actions)
        with Tape() as tape:
            loss = None
            for c in self.critics:
                term = T.mean(T.square(T.sub(c(x), y)))
                loss = term if loss is None else T.add(loss, term)
        if not np.isfinite(loss.data):
            raise NumericError(f"critic loss is not finite (rewards {batch.reward.min()}..{batch.reward.max()})")
        tape.backward(loss)
        self.critic_opt.step()
        self.critic_steps += 1
        return float(loss.data)

    def actor_objective(self, batch: Batch):
        """Build ``sum_i L_ac_i + mean_i L_pl_i`` on the active tape; returns (total, parts)."""
        outs = self._policy(self.actors, self.bank, batch.obs)
        B, n = batch.actions.shape
        blocks = []
        for i, out in enumerate(outs):
            cols = [T.Tensor(batch.actions[:, j:j + 1]) if j != i else T.reshape(out.action, (B, 1))
                    for j in range(n)]
            blocks.append(T.concat(cols, axis=1))
        joint = T.concat(blocks, axis=0)  # [n*B, n], block i replaces agent i's action
        x = self._critic_input(np.tile(batch.state, (n, 1)), joint)
        q = self.critics[0](x)
        l_ac = T.mul(T.mean(q), -float(n))  # sum over agents of -mean Q
        parts = {"L_ac": l_ac}
        pl_terms = []
        comps: dict[str, list] = {}
        for actor, out, obs in zip(self.actors, outs, batch.obs):
            season = np.argmax(obs[:, -4:], axis=1)
            losses = actor.prototype_losses(out, season, self.bank, self.hyper)
            if losses is None:
                continue
            pl_terms.append(losses.total)
            for k, v in (("L_ce", losses.ce), ("L_clst", losses.clst), ("L_sep", losses.sep),
                         ("L_div", losses.div)):
                comps.setdefault(k, []).append(float(v.data))
        total = l_ac
        if pl_terms:
            l_pl = pl_terms[0]
            for t in pl_terms[1:]:
                l_pl = T.add(l_pl, t)
            l_pl = T.mul(l_pl, 1.0 / len(pl_terms))
            total = T.add(l_ac, l_pl)
            parts["L_pl"] = l_pl
        parts.update({k: float(np.mean(v)) for k, v in comps.items()})
        return total, parts

    def policy_update(self, batch: Batch) -> dict[str, float]:
        self.actor_opt.zero_grad()
        with Tape() as tape:
            total, parts = self.actor_objective(batch)
        if not np.isfinite(total.data):
            raise NumericError("actor objective is not finite")
        tape.backward(total)
        self.actor_opt.step()
        # the critic (and a frozen bank) saw gradients they must not keep
        for p in self._critic_params.values():
            p.zero_grad()
        if self.bank is not None:
            if self.bank.frozen:
                self.bank.zero_grad()
            else:
                self.bank.project(self.hyper.max_norm)
        return {k: (float(v.data) if isinstance(v, T.Tensor) else v) for k, v in parts.items()}

    def update_targets(self) -> None:
        for online, target in self._target_pairs:
            soft_update(online, target, self.cfg.tau)

    def update(self, batch: Batch, rng: np.random.Generator) -> dict[str, float]:
        stats = {"L_critic": self.critic_update(batch, rng)}
        delay = self.cfg.policy_delay if self.cfg.algorithm == "MATD3" else 1
        if self.critic_steps % delay == 0:
            stats.update(self.policy_update(batch))
            self.update_targets()
        return stats
