"""Episode loop: explore, store, update, validate, log."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tpavc.env import EnvConfig, VoltageControlEnv
from tpavc.errors import NumericError
from tpavc.evaluation import validate_policy
from tpavc.grid.topology import FeederTopology
from tpavc.marl.agents import Ablation, AgentSet, TrainConfig
from tpavc.marl.buffer import ReplayBuffer
from tpavc.nn.checkpoint import load_checkpoint, save_checkpoint
from tpavc.profiles import ProfileSet, slice_episodes
from tpavc.tpa.encoder import EncoderConfig
from tpavc.tpa.prototype import PrototypeBank, PrototypeHyper, init_prototypes

LOSS_KEYS = ("L_critic", "L_ac", "L_pl", "L_ce", "L_clst", "L_sep", "L_div")


def exploration_sigma(cfg: TrainConfig, step: int, total_steps: int, bound: float) -> float:
    """Gaussian noise scale: linear from ``noise_start`` to ``noise_end`` (times the bound), then flat."""
    horizon = max(1, int(total_steps * cfg.noise_decay_fraction))
    frac = min(1.0, step / horizon)
    return bound * (cfg.noise_start + frac * (cfg.noise_end - cfg.noise_start))


@dataclass
class TrainResult:
    agents: AgentSet
    log: list[dict] = field(default_factory=list)
    val_cr: float = float("nan")
    val_ql: float = float("nan")


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def train(topology: FeederTopology, profiles: ProfileSet, env_cfg: EnvConfig, cfg: TrainConfig,
          enc_cfg: EncoderConfig, hyper: PrototypeHyper, seed: int, bank: PrototypeBank | None = None,
          ablation: Ablation | None = None, proto_init: str = "data", log_path=None,
          checkpoint_path=None, progress=None) -> TrainResult:
    """Train a full agent set; every random draw derives from ``seed``."""
    cfg.validate()
    streams = np.random.SeedSequence(seed).spawn(4)
    explore_rng, sample_rng, update_rng = (np.random.default_rng(s) for s in streams[1:])
    init_seed = int(streams[0].generate_state(1)[0])
    ablation = ablation or Ablation()
    env = VoltageControlEnv(topology, profiles, env_cfg)
    val_env = VoltageControlEnv(topology, profiles, env_cfg)
    if bank is None and cfg.actor == "TPA" and ablation.prototypes:
        bank = init_prototypes(profiles, enc_cfg.h, proto_init, seed=init_seed)
    agents = AgentSet(env, cfg, enc_cfg, hyper, bank, init_seed, ablation)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim, [lay.dim for lay in env.layouts], env.n_agents)
    cursors = slice_episodes(profiles, "train", seed=seed, episode_length=env_cfg.episode_length)
    total_steps = cfg.epochs * env_cfg.episode_length
    result = TrainResult(agents)
    log_fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w")
    step = 0
    try:
        for epoch in range(cfg.epochs):
            obs, state = env.reset([cursors[epoch % len(cursors)]])
            rewards = []
            sums: dict[str, list[float]] = {}
            while not env.done:
                sigma = exploration_sigma(cfg, step, total_steps, env_cfg.action_bound)
                a = agents.act(obs, explore=True, sigma=sigma, rng=explore_rng)
                res = env.step(a)
                buffer.add(state[0], [o[0] for o in obs], a[0], res.reward[0], res.state[0],
                           [o[0] for o in res.obs], terminal=not bool(res.info["converged"][0]),
                           done=res.done)
                rewards.append(float(res.reward[0]))
                step += 1
                if len(buffer) >= cfg.warmup and step % cfg.update_every == 0:
                    batch = buffer.sample(cfg.batch_size, sample_rng)
                    try:
                        stats = agents.update(batch, update_rng)
                    except NumericError as err:
                        raise NumericError(
                            f"{err} at epoch {epoch}, step {step}; batch rewards {batch.reward.tolist()}, "
                            f"actions {batch.actions.tolist()}") from err
                    for k, v in stats.items():
                        sums.setdefault(k, []).append(v)
                obs, state = res.obs, res.state
            record = {"epoch": epoch, "mean_reward": float(np.mean(rewards))}
            last = epoch == cfg.epochs - 1
            if (epoch + 1) % cfg.val_every == 0 or last:
                result.val_cr, result.val_ql = validate_policy(agents, val_env)
                record["val_CR"], record["val_QL"] = result.val_cr, result.val_ql
            else:
                record["val_CR"] = record["val_QL"] = None
            for k in LOSS_KEYS:
                record[k] = float(np.mean(sums[k])) if k in sums else None
            record = {k: _clean(v) for k, v in record.items()}
            result.log.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(record)
            if checkpoint_path is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_agents(agents, Path(checkpoint_path).with_suffix(f".e{epoch + 1}.ckpt"), env_cfg, enc_cfg,
                            hyper, seed, ablation)
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_agents(agents, checkpoint_path, env_cfg, enc_cfg, hyper, seed, ablation)
    return result


def save_agents(agents: AgentSet, path, env_cfg: EnvConfig, enc_cfg: EncoderConfig, hyper: PrototypeHyper,
                seed: int, ablation: Ablation) -> None:
    meta = {
        "train": asdict(agents.cfg), "env": asdict(env_cfg), "encoder": asdict(enc_cfg),
        "prototype": asdict(hyper), "ablation": asdict(ablation), "seed": seed,
        "bank_frozen": bool(agents.bank is not None and agents.bank.frozen),
        "topology": agents.topology_dict,
    }
    save_checkpoint(path, agents.state_dict(), meta)


def load_agents(path, env: VoltageControlEnv, frozen_bank: bool | None = None) -> AgentSet:
    """Rebuild an agent set for ``env`` from a checkpoint written by :func:`save_agents`."""
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig(**meta["train"])
    enc_cfg = EncoderConfig(**meta["encoder"])
    hyper = PrototypeHyper(**meta["prototype"])
    ablation = Ablation(**meta["ablation"])
    bank = None
    if "prototypes.bank" in tensors:
        frozen = meta.get("bank_frozen", False) if frozen_bank is None else frozen_bank
        bank = PrototypeBank(tensors["prototypes.bank"], frozen=frozen)
    agents = AgentSet(env, cfg, enc_cfg, hyper, bank, int(meta["seed"]), ablation)
    agents.load_state_dict(tensors)
    return agents
