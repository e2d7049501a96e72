"""Multi-agent active voltage control environment.

Every PV inverter is one agent. An agent sees the buses of its zone, its own
window of recent reactive outputs and the season label; all agents share one
reward. The environment steps a batch of independent episodes in lockstep so
evaluation can solve the power flow for many days at once; training simply
uses a batch of one.

Step timing: ``reset`` solves the power flow for the injections at the start
cursor with no reactive support. ``step`` applies the actions to the load/PV
snapshot at the current cursor, solves, scores the resulting voltages and
then advances the cursor, so the next observation pairs the new loads/PV with
the voltages just produced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpavc.errors import ConfigError, DimensionError, HorizonError, LifecycleError
from tpavc.grid.powerflow import PowerFlowSolution, pv_reactive_from_action, solver_for
from tpavc.grid.topology import FeederTopology
from tpavc.profiles import DEFAULT_CALENDAR, STEPS_PER_DAY, ProfileSet, SeasonCalendar, slice_episodes

BUS_FEATURES = ("p_load", "q_load", "p_pv", "q_pv_prev", "v", "omega")
N_FEATURES = len(BUS_FEATURES)
BARRIERS = ("L1", "L2", "BOWL")


@dataclass
class EnvConfig:
    episode_length: int = 240
    step_minutes: int = 3
    barrier: str = "L1"
    alpha: float = 0.1
    action_bound: float = 0.8
    v_min: float = 0.95
    v_max: float = 1.05
    v_ref: float = 1.0
    memory: int = 20
    divergence_penalty: float = -5.0

    def validate(self) -> None:
        if not 0 < self.v_min < self.v_ref < self.v_max:
            raise ConfigError(f"need 0 < v_min < v_ref < v_max, got {self.v_min}, {self.v_ref}, {self.v_max}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if self.memory < 1:
            raise ConfigError("memory window must hold at least one step")
        if self.barrier not in BARRIERS:
            raise ConfigError(f"unknown barrier {self.barrier!r}; choose from {BARRIERS}")
        if not self.action_bound > 0:
            raise ConfigError("action_bound must be positive")
        if self.step_minutes != 3:
            raise ConfigError("profiles are sampled every 3 minutes")


def barrier(v, kind: str = "L1", v_ref: float = 1.0, v_min: float = 0.95, v_max: float = 1.05):
    """Voltage penalty, zero at ``v_ref`` and nondecreasing in ``|v - v_ref|``.

    ``BOWL`` is quadratic inside the band and continues linearly outside it
    with value and slope matched at each edge.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(~(v > 0)):
        raise ValueError("voltage magnitudes must be positive")
    d = v - v_ref
    if kind == "L1":
        out = np.abs(d)
    elif kind == "L2":
        out = d * d
    elif kind == "BOWL":
        # edge half-widths may differ; each side gets its own tangent line
        edge = np.where(d >= 0, v_max - v_ref, v_ref - v_min)
        ad = np.abs(d)
        out = np.where(ad <= edge, d * d, 2 * edge * ad - edge * edge)
    else:
        raise ValueError(f"unknown barrier {kind!r}")
    return float(out) if out.ndim == 0 else out


def compute_reward(solution: PowerFlowSolution | np.ndarray, q_pv, cfg: EnvConfig):
    """Shared reward: mean barrier over controlled buses plus alpha times mean |q_pv|, negated.

    ``solution`` may be a power-flow result (slack excluded automatically) or
    an array of controlled-bus voltages; batches are scored row by row and
    non-converged rows receive ``cfg.divergence_penalty``.
    """
    if isinstance(solution, PowerFlowSolution):
        v = solution.controlled_v
        converged = np.asarray(solution.converged)
    else:
        v = np.asarray(solution, dtype=np.float64)
        converged = np.ones(v.shape[:-1], dtype=bool) if v.ndim > 1 else np.asarray(True)
    q_pv = np.asarray(q_pv, dtype=np.float64)
    safe_v = np.where(np.isfinite(v) & (v > 0), v, cfg.v_ref)
    lv = barrier(safe_v, cfg.barrier, cfg.v_ref, cfg.v_min, cfg.v_max)
    r = -np.mean(lv, axis=-1) - cfg.alpha * np.mean(np.abs(q_pv), axis=-1)
    r = np.where(converged, r, cfg.divergence_penalty)
    return float(r) if np.ndim(r) == 0 else r


@dataclass
class Observation:
    """Structured view of one agent's observation."""

    zone: int
    bus_ids: tuple[int, ...]
    pv_bus_ids: tuple[int, ...]
    loads: np.ndarray  # [r, 2] p_load, q_load per zone bus
    pv: np.ndarray  # [r_pv, 2] p_pv, q_pv_prev per zone PV
    voltages: np.ndarray  # [r, 2] v, omega per zone bus
    memory: np.ndarray  # [K], oldest first
    season: np.ndarray  # [4] one-hot

    def vector(self) -> np.ndarray:
        """Flat layout: loads, then PVs, then voltages (bus-id ascending), then memory, then season."""
        return np.concatenate([self.loads.ravel(), self.pv.ravel(), self.voltages.ravel(),
                               self.memory, self.season])


@dataclass
class StepResult:
    obs: list[np.ndarray]  # per agent, packed [B, obs_dim_i]
    state: np.ndarray  # [B, state_dim]
    reward: np.ndarray  # [B], shared by all agents
    done: bool
    info: dict


class ObsLayout:
    """Packing of one agent's observation: bus-feature rows, memory, season."""

    def __init__(self, n_rows: int, memory: int) -> None:
        self.n_rows = n_rows
        self.memory = memory
        self.dim = n_rows * N_FEATURES + memory + 4

    def pack(self, feats: np.ndarray, memory: np.ndarray, season: np.ndarray) -> np.ndarray:
        B = feats.shape[0]
        return np.concatenate([feats.reshape(B, -1), memory, season], axis=1)

    def unpack(self, packed: np.ndarray):
        packed = np.asarray(packed)
        if packed.shape[-1] != self.dim:
            raise DimensionError(f"observation width {packed.shape[-1]} != {self.dim}")
        lead = packed.shape[:-1]
        k = self.n_rows * N_FEATURES
        feats = packed[..., :k].reshape(lead + (self.n_rows, N_FEATURES))
        return feats, packed[..., k:k + self.memory], packed[..., k + self.memory:]


class VoltageControlEnv:
    def __init__(self, topology: FeederTopology, profiles: ProfileSet, cfg: EnvConfig | None = None,
                 calendar: SeasonCalendar = DEFAULT_CALENDAR) -> None:
        self.cfg = cfg or EnvConfig()
        self.cfg.validate()
        profiles.check_bounds(topology)
        self.topology = topology
        self.profiles = profiles
        self.calendar = calendar
        self.solver = solver_for(topology)
        idx = topology.index
        self.n_bus = topology.n_bus
        self.load_idx = np.array([idx[b] for b in topology.load_buses], dtype=int)
        self.pv_idx = np.array([idx[b] for b in topology.pv_buses], dtype=int)
        self.s_max = topology.s_max
        self.n_agents = len(self.pv_idx)
        if self.n_agents == 0:
            raise ConfigError("topology has no PV inverters to control")
        self.agent_zone = [topology.zone_of(b) for b in topology.pv_buses]
        self.zone_rows = [np.array([idx[b] for b in topology.zones[z]], dtype=int) for z in self.agent_zone]
        self.layouts = [ObsLayout(len(rows), self.cfg.memory) for rows in self.zone_rows]
        self.state_dim = self.n_bus * N_FEATURES + 4
        months = profiles.month_of(np.arange(profiles.horizon_days) * STEPS_PER_DAY)
        self._day_season = np.array([calendar.season_index(int(m)) for m in months], dtype=int)
        self._t: np.ndarray | None = None
        self._done = True

    # -- helpers -----------------------------------------------------------

    @property
    def batch_size(self) -> int:
        return 0 if self._t is None else len(self._t)

    def season_index(self, t) -> np.ndarray:
        return self._day_season[np.asarray(t) // STEPS_PER_DAY]

    def season_onehot(self, t) -> np.ndarray:
        return np.eye(4)[self.season_index(t)]

    def injections(self, t: np.ndarray, q_pv: np.ndarray):
        """Bus injection arrays [B, n] for profile steps ``t`` with PV reactive outputs ``q_pv``."""
        B = len(t)
        p = np.zeros((B, self.n_bus))
        q = np.zeros((B, self.n_bus))
        p[:, self.load_idx] -= self.profiles.load_p[t]
        q[:, self.load_idx] -= self.profiles.load_q[t]
        p[:, self.pv_idx] += self.profiles.pv_p[t]
        q[:, self.pv_idx] += q_pv
        return p, q

    def _solve(self, t: np.ndarray, q_pv: np.ndarray) -> PowerFlowSolution:
        p, q = self.injections(t, q_pv)
        return self.solver.solve(p, q, on_collapse="flag")

    def _bus_features(self, t: np.ndarray) -> np.ndarray:
        B = len(t)
        f = np.zeros((B, self.n_bus, N_FEATURES))
        f[:, self.load_idx, 0] = self.profiles.load_p[t]
        f[:, self.load_idx, 1] = self.profiles.load_q[t]
        f[:, self.pv_idx, 2] = self.profiles.pv_p[t]
        f[:, self.pv_idx, 3] = self._q_prev
        f[:, :, 4] = self._v
        f[:, :, 5] = self._omega
        return f

    def _observe(self) -> tuple[list[np.ndarray], np.ndarray]:
        t = np.minimum(self._t, self.profiles.n_steps - 1)
        f = self._bus_features(t)
        season = self.season_onehot(t)
        obs = [lay.pack(f[:, rows], self._memory[:, i], season)
               for i, (lay, rows) in enumerate(zip(self.layouts, self.zone_rows))]
        state = np.concatenate([f.reshape(len(t), -1), season], axis=1)
        return obs, state

    # -- lifecycle ---------------------------------------------------------

    def reset(self, cursor=None, seed: int | None = None, length: int | None = None):
        """Start one episode per cursor; a ``None`` cursor draws a training start from ``seed``."""
        if cursor is None:
            rng = np.random.default_rng(seed)
            starts = slice_episodes(self.profiles, "train", seed=0, episode_length=self.cfg.episode_length)
            cursor = starts[int(rng.integers(len(starts)))]
        t = np.atleast_1d(np.asarray(cursor, dtype=int)).copy()
        self.length = self.cfg.episode_length if length is None else int(length)
        if self.length < 1:
            raise ConfigError("episode length must be >= 1")
        if np.any(t < 0) or np.any(t + self.length > self.profiles.n_steps):
            bad = int(t[(t < 0) | (t + self.length > self.profiles.n_steps)][0])
            raise HorizonError(
                f"episode of {self.length} steps at cursor {bad} exceeds the profile horizon "
                f"of {self.profiles.n_steps} steps ({self.profiles.horizon_days} days)")
        B = len(t)
        self._t = t
        self._steps = 0
        self._done = False
        self._q_prev = np.zeros((B, self.n_agents))
        self._memory = np.zeros((B, self.n_agents, self.cfg.memory))
        sol = self._solve(t, self._q_prev)
        self._v, self._omega = sol.v, sol.omega
        return self._observe()

    def step(self, actions) -> StepResult:
        if self._done:
            raise LifecycleError("episode is over; call reset() first")
        a = np.asarray(actions, dtype=np.float64)
        B = len(self._t)
        if a.ndim == 1 and B == 1:
            a = a[None]
        if a.shape != (B, self.n_agents):
            raise DimensionError(f"expected actions of shape {(B, self.n_agents)}, got {a.shape}")
        c = self.cfg.action_bound
        a = np.clip(a, -c, c)
        t = self._t
        q_pv = pv_reactive_from_action(a, self.profiles.pv_p[t], self.s_max[None, :])
        sol = self._solve(t, q_pv)
        reward = compute_reward(sol, q_pv, self.cfg)
        reward = np.atleast_1d(reward)
        info = {
            "t": t.copy(),
            "v": sol.v,
            "omega": sol.omega,
            "q_pv": q_pv,
            "actions": a,
            "converged": np.asarray(sol.converged),
            "season": self.season_index(t),
        }
        self._memory = np.concatenate([self._memory[:, :, 1:], q_pv[:, :, None]], axis=2)
        self._q_prev = q_pv
        self._v, self._omega = sol.v, sol.omega
        self._t = t + 1
        self._steps += 1
        self._done = self._steps >= self.length
        obs, state = self._observe()
        return StepResult(obs, state, reward, self._done, info)

    @property
    def done(self) -> bool:
        return self._done

    def observation(self, agent: int, packed: np.ndarray) -> Observation:
        """Structured view of one agent's packed observation row."""
        feats, memory, season = self.layouts[agent].unpack(packed)
        rows = self.zone_rows[agent]
        ids = tuple(self.topology.bus_ids[i] for i in rows)
        pv_pos = [k for k, i in enumerate(rows) if i in set(self.pv_idx.tolist())]
        return Observation(
            zone=int(self.agent_zone[agent]),
            bus_ids=ids,
            pv_bus_ids=tuple(ids[k] for k in pv_pos),
            loads=feats[:, 0:2].copy(),
            pv=feats[pv_pos][:, 2:4].copy(),
            voltages=feats[:, 4:6].copy(),
            memory=memory.copy(),
            season=season.copy(),
        )


def feature_scale(topology: FeederTopology) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``(x - shift) * scale`` putting raw bus features on a unit-ish range."""
    ps = float(max(topology.s_max.max(), max(b.load for b in topology.buses)))
    shift = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    scale = np.array([1 / ps, 1 / ps, 1 / ps, 1 / ps, 20.0, 20.0])
    return shift, scale
