"""Control metrics and short/long-cycle evaluation rollouts."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable

import numpy as np

from tpavc.env import EnvConfig, VoltageControlEnv
from tpavc.errors import ConfigError, HorizonError
from tpavc.grid.topology import FeederTopology
from tpavc.profiles import SEASONS, STEPS_PER_DAY, ProfileSet, slice_episodes

Policy = Callable[[list], np.ndarray]
CYCLES = ("day", "month", "year")


def compute_cr(v_trace, v_min: float = 0.95, v_max: float = 1.05) -> float:
    """Fraction of steps (rows) whose every controlled-bus voltage lies in [v_min, v_max]."""
    v = np.asarray(v_trace, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] == 0:
        raise ValueError("empty voltage trace")
    ok = np.all((v >= v_min) & (v <= v_max), axis=1)
    return float(ok.mean())


def compute_ql(q_trace) -> float:
    """Mean over steps of the per-agent mean absolute reactive output."""
    q = np.asarray(q_trace, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[0] == 0:
        raise ValueError("empty reactive-power trace")
    return float(np.abs(q).mean(axis=1).mean())


@dataclass
class EpisodeMetrics:
    cr: float
    ql: float
    season: int
    start: int
    steps: int
    voltages: np.ndarray | None = None  # [steps, n_bus]
    q_pv: np.ndarray | None = None  # [steps, n_agents]
    in_band: np.ndarray | None = field(default=None, repr=False)  # [steps] bool


def zero_policy(n_agents: int) -> Policy:
    def act(obs):
        return np.zeros((obs[0].shape[0], n_agents))
    return act


def rollout(env: VoltageControlEnv, policy: Policy | None, cursors, length: int,
            record: bool = False) -> list[EpisodeMetrics]:
    """Run one lockstep batch of episodes of ``length`` steps; ``None`` policy means no control."""
    policy = policy or zero_policy(env.n_agents)
    cursors = np.atleast_1d(np.asarray(cursors, dtype=int))
    obs, _ = env.reset(cursors, length=length)
    B = len(cursors)
    slack = env.solver.slack
    in_band = np.zeros((length, B), dtype=bool)
    absq = np.zeros((length, B))
    volts = np.zeros((length, B, env.n_bus)) if record else None
    qs = np.zeros((length, B, env.n_agents)) if record else None
    cfg = env.cfg
    for k in range(length):
        res = env.step(policy(obs))
        v = np.delete(res.info["v"], slack, axis=1)
        ok = np.all((v >= cfg.v_min) & (v <= cfg.v_max), axis=1) & res.info["converged"]
        in_band[k] = ok
        absq[k] = np.abs(res.info["q_pv"]).mean(axis=1)
        if record:
            volts[k] = res.info["v"]
            qs[k] = res.info["q_pv"]
        obs = res.obs
    seasons = env.season_index(cursors)
    out = []
    for b in range(B):
        out.append(EpisodeMetrics(
            cr=float(in_band[:, b].mean()), ql=float(absq[:, b].mean()), season=int(seasons[b]),
            start=int(cursors[b]), steps=length,
            voltages=None if volts is None else volts[:, b], q_pv=None if qs is None else qs[:, b],
            in_band=in_band[:, b].copy(),
        ))
    return out


def season_table(units: list[tuple[int, float, float]]) -> list[dict]:
    """Per-season mean/std of (season, CR, QL) units, plus an average row over all units."""
    rows = []
    for k, name in enumerate(SEASONS):
        sel = [(cr, ql) for s, cr, ql in units if s == k]
        if not sel:
            rows.append({"season": name, "n": 0, "CR": float("nan"), "CR_std": float("nan"),
                         "QL": float("nan"), "QL_std": float("nan")})
            continue
        a = np.array(sel)
        rows.append({"season": name, "n": len(sel), "CR": float(a[:, 0].mean()), "CR_std": float(a[:, 0].std()),
                     "QL": float(a[:, 1].mean()), "QL_std": float(a[:, 1].std())})
    a = np.array([(cr, ql) for _, cr, ql in units])
    rows.append({"season": "average", "n": len(units), "CR": float(a[:, 0].mean()),
                 "CR_std": float(a[:, 0].std()), "QL": float(a[:, 1].mean()), "QL_std": float(a[:, 1].std())})
    return rows


def _month_starts(profiles: ProfileSet) -> list[tuple[int, int]]:
    """(start step, length in steps) of each complete calendar month."""
    out = []
    d = 0
    while d < profiles.horizon_days:
        y, m, dom = profiles.day_month(d)
        nxt = datetime(y + (m == 12), m % 12 + 1, 1)
        n_days = (nxt - datetime(y, m, 1)).days
        if dom == 1 and d + n_days <= profiles.horizon_days:
            out.append((d * STEPS_PER_DAY, n_days * STEPS_PER_DAY))
            d += n_days
        else:
            d += 1
    return out


def _daily_units(ep: EpisodeMetrics, env: VoltageControlEnv) -> list[tuple[int, float, float]]:
    """Split a long continuous episode into per-day (season, CR, QL) units."""
    n_days = ep.steps // STEPS_PER_DAY
    absq = np.abs(ep.q_pv).mean(axis=1)
    units = []
    for d in range(n_days):
        sl = slice(d * STEPS_PER_DAY, (d + 1) * STEPS_PER_DAY)
        units.append((int(env.season_index(ep.start + d * STEPS_PER_DAY)),
                      float(ep.in_band[sl].mean()), float(absq[sl].mean())))
    return units


@dataclass
class CycleResult:
    cycle: str
    table: list[dict]
    cr: float  # step-weighted CR over the whole cycle
    ql: float
    episodes: list[EpisodeMetrics]


def eval_cycle(policy: Policy | None, topology: FeederTopology, profiles: ProfileSet, env_cfg: EnvConfig,
               cycle: str, record: bool = False) -> CycleResult:
    """Day cycle: every test day as an independent 480-step run from midnight.

    Month cycle: each complete calendar month as one continuous run. Year
    cycle: the first 365 days as one continuous run; its per-season table is
    built from daily slices. Memory windows are never reset inside a run.
    """
    if cycle not in CYCLES:
        raise ConfigError(f"unknown cycle {cycle!r}; choose from {CYCLES}")
    env = VoltageControlEnv(topology, profiles, env_cfg)
    if cycle == "day":
        starts = slice_episodes(profiles, "test")
        eps = rollout(env, policy, starts, STEPS_PER_DAY, record=record)
        units = [(e.season, e.cr, e.ql) for e in eps]
    elif cycle == "month":
        months = _month_starts(profiles)
        if not months:
            raise HorizonError(f"profile horizon of {profiles.horizon_days} days holds no complete month")
        eps = []
        for length in sorted({n for _, n in months}):
            group = [s for s, n in months if n == length]
            eps += rollout(env, policy, group, length, record=record)
        eps.sort(key=lambda e: e.start)
        units = [(e.season, e.cr, e.ql) for e in eps]
    else:
        need = 365 * STEPS_PER_DAY
        if profiles.n_steps < need:
            raise HorizonError(
                f"year cycle needs 365 days but the profile horizon is {profiles.horizon_days} days")
        eps = rollout(env, policy, [0], need, record=True)
        units = _daily_units(eps[0], env)
        if not record:
            eps[0].voltages = None
    steps = sum(e.steps for e in eps)
    cr = sum(e.cr * e.steps for e in eps) / steps
    ql = sum(e.ql * e.steps for e in eps) / steps
    return CycleResult(cycle, season_table(units), float(cr), float(ql), eps)


def eval_cycles(policy, topology, profiles, env_cfg, cycles=CYCLES) -> dict[str, CycleResult]:
    return {c: eval_cycle(policy, topology, profiles, env_cfg, c) for c in cycles}


def validate_policy(policy: Policy | None, env: VoltageControlEnv) -> tuple[float, float]:
    """CR and QL over the validation days (one per month), each a full-day run."""
    starts = slice_episodes(env.profiles, "val")
    eps = rollout(env, policy, starts, STEPS_PER_DAY)
    return float(np.mean([e.cr for e in eps])), float(np.mean([e.ql for e in eps]))


def write_table_csv(result: CycleResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["season", "n", "CR", "CR_std", "QL", "QL_std"])
        w.writeheader()
        for row in result.table:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def record_trace(env: VoltageControlEnv, policy: Policy | None, cursor: int, length: int) -> dict:
    """Full per-step record of one episode for export."""
    policy = policy or zero_policy(env.n_agents)
    obs, _ = env.reset([cursor], length=length)
    keys = ("v", "omega", "p_inj", "q_inj")
    out = {k: np.zeros((length, env.n_bus)) for k in keys}
    out["reward"] = np.zeros(length)
    out["season"] = np.zeros(length, dtype=int)
    out["q_pv"] = np.zeros((length, env.n_agents))
    for k in range(length):
        res = env.step(policy(obs))
        p, q = env.injections(res.info["t"], res.info["q_pv"])
        out["v"][k], out["omega"][k] = res.info["v"][0], res.info["omega"][0]
        out["p_inj"][k], out["q_inj"][k] = p[0], q[0]
        out["reward"][k] = res.reward[0]
        out["season"][k] = res.info["season"][0]
        out["q_pv"][k] = res.info["q_pv"][0]
        obs = res.obs
    out["bus_ids"] = np.array(env.topology.bus_ids)
    return out


def write_trace_csv(trace: dict, path) -> None:
    """One row per (step, bus): step, bus_id, v, omega, p_inj, q_inj, reward, season."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "bus_id", "v", "omega", "p_inj", "q_inj", "reward", "season"])
        for k in range(len(trace["reward"])):
            season = SEASONS[int(trace["season"][k])]
            for j, bus in enumerate(trace["bus_ids"]):
                w.writerow([k, int(bus), repr(float(trace["v"][k, j])), repr(float(trace["omega"][k, j])),
                            repr(float(trace["p_inj"][k, j])), repr(float(trace["q_inj"][k, j])),
                            repr(float(trace["reward"][k])), season])
