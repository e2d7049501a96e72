"""Backward/forward sweep AC power flow for radial feeders.

The sweep is written in matrix form. With ``D[b, k] = 1`` when bus ``k`` lies
downstream of branch ``b``, the backward pass accumulates branch currents
``J = -D @ I`` from the bus injection currents ``I = conj(S / V)`` and the
forward pass drops voltage along every path, ``V = V0 - D.T @ (z * J)``.
Both passes act on whole batches of injection states at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from tpavc.errors import CapacityError, PowerFlowDivergence
from tpavc.grid.topology import FeederTopology

COLLAPSE_VOLTAGE = 0.3


@dataclass
class InjectionState:
    """Net complex power injected at each bus (generation positive), p.u., bus-id order."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.p.shape != self.q.shape:
            raise ValueError("p and q must have the same shape")
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise ValueError("injections must be finite")


@dataclass
class PowerFlowSolution:
    v: np.ndarray
    omega: np.ndarray
    loss: np.ndarray | float
    iterations: int
    converged: bool | np.ndarray
    mismatch: np.ndarray | float
    slack_injection: np.ndarray | complex
    slack_index: int = 0

    @property
    def controlled_v(self) -> np.ndarray:
        """Voltage magnitudes of every bus except the slack."""
        return np.delete(self.v, self.slack_index, axis=-1)

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.omega)


class RadialSolver:
    """Precomputed sweep operators for one validated topology."""

    def __init__(self, topo: FeederTopology) -> None:
        self.topo = topo
        ids = topo.bus_ids
        idx = topo.index
        self.n = len(ids)
        self.slack = idx[topo.slack_bus]
        self.others = np.array([i for i in range(self.n) if i != self.slack])
        m = len(self.others)
        pos = {int(b): j for j, b in enumerate(self.others)}
        # branch j is the one feeding non-slack bus others[j]
        self.z = np.zeros(m, dtype=complex)
        D = np.zeros((m, m))
        for j, bi in enumerate(self.others):
            bus = ids[bi]
            parent, br = topo.parent[bus]
            self.z[j] = br.r + 1j * br.x
            # walk from this bus to the slack: every branch on the way carries its current
            node = bus
            while node != topo.slack_bus:
                D[pos[idx[node]], j] = 1.0
                node = topo.parent[node][0]
        self.D = D
        # bus-impedance of the tree: V_ns = V0 + Z @ I_ns
        self.Z = D.T @ (self.z[:, None] * D)
        Y = np.zeros((self.n, self.n), dtype=complex)
        for br in topo.branches:
            a, b = idx[br.from_bus], idx[br.to_bus]
            y = 1.0 / (br.r + 1j * br.x)
            Y[a, a] += y
            Y[b, b] += y
            Y[a, b] -= y
            Y[b, a] -= y
        self.Y = Y
        self.r = self.z.real
        self.upstream = np.array([idx[topo.parent[ids[bi]][0]] for bi in self.others])

    def solve(self, p, q, tol: float = 1e-8, max_iter: int = 100,
              on_collapse: str = "raise") -> PowerFlowSolution:
        """Solve one injection vector ([n]) or a batch ([B, n]).

        A voltage magnitude below ``COLLAPSE_VOLTAGE`` raises
        :class:`PowerFlowDivergence`; with ``on_collapse="flag"`` the affected
        batch rows stop iterating and come back with ``converged=False`` while
        the rest of the batch is solved normally.
        """
        if on_collapse not in ("raise", "flag"):
            raise ValueError(f"unknown on_collapse mode {on_collapse!r}")
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        single = p.ndim == 1
        if single:
            p, q = p[None], q[None]
        S = (p + 1j * q)[:, self.others]
        B = S.shape[0]
        V = np.ones((B, len(self.others)), dtype=complex)
        V0 = 1.0 + 0j
        active = np.ones(B, dtype=bool)
        collapsed = np.zeros(B, dtype=bool)
        mismatch = np.full(B, np.inf)
        it = 0
        for it in range(1, max_iter + 1):
            rows = np.flatnonzero(active)
            Vn = V0 + np.conj(S[rows] / V[rows]) @ self.Z.T
            bad = (np.abs(Vn) < COLLAPSE_VOLTAGE).any(axis=1)
            if bad.any():
                if on_collapse == "raise":
                    raise PowerFlowDivergence(
                        f"voltage collapsed below {COLLAPSE_VOLTAGE} p.u. at iteration {it}")
                collapsed[rows[bad]] = True
                active[rows[bad]] = False
                rows, Vn = rows[~bad], Vn[~bad]
            V[rows] = Vn
            mismatch[rows] = self._mismatch(Vn, S[rows])
            active[rows[mismatch[rows] < tol]] = False
            if not active.any():
                break
        converged = (mismatch < tol) & ~collapsed
        full = np.empty((B, self.n), dtype=complex)
        full[:, self.slack] = V0
        full[:, self.others] = V
        inj = full * np.conj(full @ self.Y.T)
        loss = inj.real.sum(axis=1)
        sol = PowerFlowSolution(
            v=np.abs(full), omega=np.angle(full), loss=loss, iterations=it,
            converged=converged, mismatch=mismatch, slack_injection=inj[:, self.slack],
            slack_index=int(self.slack),
        )
        if single:
            sol.v, sol.omega = sol.v[0], sol.omega[0]
            sol.loss, sol.mismatch = float(loss[0]), float(mismatch[0])
            sol.converged = bool(converged[0])
            sol.slack_injection = complex(inj[0, self.slack])
        return sol

    def _mismatch(self, V: np.ndarray, S: np.ndarray) -> np.ndarray:
        full = np.empty((V.shape[0], self.n), dtype=complex)
        full[:, self.slack] = 1.0
        full[:, self.others] = V
        calc = full[:, self.others] * np.conj(full @ self.Y[self.others].T)
        return np.abs(calc - S).max(axis=1)

    def branch_losses(self, v: np.ndarray, omega: np.ndarray) -> np.ndarray:
        """Total I^2 r loss over branches for solved voltages ([n] or [B, n])."""
        full = np.atleast_2d(v * np.exp(1j * omega))
        J = (full[:, self.upstream] - full[:, self.others]) / self.z
        out = (np.abs(J) ** 2 * self.r).sum(axis=1)
        return out[0] if np.ndim(v) == 1 else out


@lru_cache(maxsize=64)
def solver_for(topo: FeederTopology) -> RadialSolver:
    return RadialSolver(topo)


def solve_power_flow(topo: FeederTopology, injections: InjectionState, tol: float = 1e-8,
                     max_iter: int = 100, on_collapse: str = "raise") -> PowerFlowSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return solver_for(topo).solve(injections.p, injections.q, tol=tol, max_iter=max_iter,
                                  on_collapse=on_collapse)


def pv_reactive_from_action(a, p_pv, s_max):
    """Reactive output of an inverter for action ratio ``a``: ``a * sqrt(s_max^2 - p_pv^2)``."""
    a = np.asarray(a, dtype=np.float64)
    p_pv = np.asarray(p_pv, dtype=np.float64)
    s_max = np.asarray(s_max, dtype=np.float64)
    if np.any(p_pv > s_max * (1 + 1e-12)) or np.any(p_pv < 0):
        raise CapacityError("PV active output must lie within [0, s_max]")
    head = np.sqrt(np.maximum(s_max * s_max - p_pv * p_pv, 0.0))
    q = a * head
    return float(q) if q.ndim == 0 else q
