"""Experiment harnesses built on the learner: transfer runs and season-classifier scoring."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from tpavc.env import EnvConfig, VoltageControlEnv
from tpavc.errors import CompatibilityError, ConfigError
from tpavc.evaluation import CycleResult, eval_cycle
from tpavc.grid.topology import FeederTopology
from tpavc.marl.agents import Ablation, AgentSet, TrainConfig
from tpavc.marl.train import TrainResult, train
from tpavc.profiles import STEPS_PER_DAY, ProfileSet, slice_episodes
from tpavc.tpa.encoder import EncoderConfig
from tpavc.tpa.prototype import PrototypeBank, PrototypeHyper


@dataclass
class TransferResult:
    transfer: TrainResult
    scratch: TrainResult
    transfer_day: CycleResult
    scratch_day: CycleResult
    bank_unchanged: bool

    @property
    def cr_gap(self) -> float:
        """From-scratch day CR minus transferred day CR."""
        return self.scratch_day.cr - self.transfer_day.cr


def transfer_eval(bank: PrototypeBank, topology: FeederTopology, profiles: ProfileSet, env_cfg: EnvConfig,
                  cfg: TrainConfig, enc_cfg: EncoderConfig, hyper: PrototypeHyper, seed: int,
                  proto_init: str = "data", log_paths: tuple | None = None) -> TransferResult:
    """Train a fresh prototype-aware agent set around a frozen bank, plus a from-scratch control run."""
    if cfg.actor != "TPA":
        raise ConfigError("transfer needs the prototype-aware actor")
    if bank.dim != 2 * enc_cfg.h:
        raise CompatibilityError(
            f"bank prototypes have size {bank.dim} but the encoder produces {2 * enc_cfg.h} (2h)")
    frozen = PrototypeBank(bank.bank.data.copy(), frozen=True)
    before = frozen.bank.data.tobytes()
    logs = log_paths or (None, None)
    moved = train(topology, profiles, env_cfg, cfg, enc_cfg, hyper, seed, bank=frozen, log_path=logs[0])
    unchanged = frozen.bank.data.tobytes() == before
    scratch = train(topology, profiles, env_cfg, cfg, enc_cfg, hyper, seed, proto_init=proto_init,
                    log_path=logs[1])
    return TransferResult(
        moved, scratch,
        eval_cycle(moved.agents, topology, profiles, env_cfg, "day"),
        eval_cycle(scratch.agents, topology, profiles, env_cfg, "day"),
        unchanged,
    )


def season_accuracy(agents: AgentSet, topology: FeederTopology, profiles: ProfileSet, env_cfg: EnvConfig,
                    split: str = "test", stride: int = 4) -> float:
    """Share of (step, agent) pairs whose classifier head names the true season.

    Observations come from no-control day runs over ``split`` days, sampled
    every ``stride`` steps.
    """
    if not agents.uses_bank:
        raise ConfigError("the season classifier needs prototype-aware actors")
    env = VoltageControlEnv(topology, profiles, env_cfg)
    starts = slice_episodes(profiles, split)
    obs, _ = env.reset(starts, length=STEPS_PER_DAY)
    truth = env.season_index(np.asarray(starts))
    hits = total = 0
    zeros = np.zeros((len(starts), env.n_agents))
    for k in range(STEPS_PER_DAY):
        if k % stride == 0:
            for actor, scaler, o in zip(agents.actors, agents.scalers, obs):
                out = actor(scaler(o), agents.bank)
                pred = np.argmax(out.logits.data, axis=1)
                hits += int((pred == truth).sum())
                total += len(truth)
        obs = env.step(zeros).obs
    return hits / total


def ablation_variants() -> dict[str, Ablation]:
    return {
        "full": Ablation(),
        "no_memory": Ablation(memory=False),
        "no_season": Ablation(season=False),
        "no_prototypes": Ablation(prototypes=False),
    }


def with_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    return replace(cfg, epochs=epochs)
