"""Radial feeder description, JSON I/O and structural validation.

Topology JSON schema::

    {
      "base_mva": 1.0,
      "slack_bus": 0,
      "buses": [{"id": 0, "zone": null, "load": 0.0, "pv": false, "s_max": 0.0}, ...],
      "branches": [{"from": 0, "to": 1, "r": 0.01, "x": 0.02}, ...]
    }

``load`` is the nominal peak active demand of the bus in p.u. (0 means no
load); ``pv`` flags an inverter of rating ``s_max`` p.u.; ``zone`` is the
control-region index (``null`` only for the slack bus). Unknown keys are
dropped with a warning that lists them.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from tpavc.errors import TopologyError

_BUS_KEYS = {"id", "zone", "load", "pv", "s_max"}
_BRANCH_KEYS = {"from", "to", "r", "x"}
_TOP_KEYS = {"base_mva", "slack_bus", "buses", "branches", "name"}


@dataclass(frozen=True)
class Bus:
    id: int
    zone: int | None
    load: float = 0.0
    pv: bool = False
    s_max: float = 0.0

    @property
    def has_load(self) -> bool:
        return self.load > 0

    @property
    def has_pv(self) -> bool:
        return self.pv


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class FeederTopology:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int = 0
    base_mva: float = 1.0
    name: str = field(default="feeder")

    def __hash__(self) -> int:
        return id(self)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeederTopology) and self.to_dict() == other.to_dict()

    # -- indexing -----------------------------------------------------------

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(sorted(b.id for b in self.buses))

    @cached_property
    def index(self) -> dict[int, int]:
        return {bid: i for i, bid in enumerate(self.bus_ids)}

    @cached_property
    def bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def controlled_buses(self) -> tuple[int, ...]:
        return tuple(b for b in self.bus_ids if b != self.slack_bus)

    @cached_property
    def load_buses(self) -> tuple[int, ...]:
        return tuple(b for b in self.bus_ids if self.bus_by_id[b].has_load)

    @cached_property
    def pv_buses(self) -> tuple[int, ...]:
        return tuple(b for b in self.bus_ids if self.bus_by_id[b].has_pv)

    @cached_property
    def s_max(self) -> np.ndarray:
        return np.array([self.bus_by_id[b].s_max for b in self.pv_buses])

    @cached_property
    def zones(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for b in self.controlled_buses:
            out.setdefault(self.bus_by_id[b].zone, []).append(b)
        return {z: tuple(v) for z, v in sorted(out.items())}

    def zone_of(self, bus_id: int) -> int | None:
        return self.bus_by_id[bus_id].zone

    @cached_property
    def parent(self) -> dict[int, tuple[int, Branch]]:
        """Child bus id -> (parent bus id, connecting branch), oriented away from the slack."""
        adj: dict[int, list[tuple[int, Branch]]] = {b: [] for b in self.bus_ids}
        for br in self.branches:
            adj[br.from_bus].append((br.to_bus, br))
            adj[br.to_bus].append((br.from_bus, br))
        parent: dict[int, tuple[int, Branch]] = {}
        seen = {self.slack_bus}
        frontier = [self.slack_bus]
        while frontier:
            nxt = []
            for u in frontier:
                for v, br in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        parent[v] = (u, br)
                        nxt.append(v)
            frontier = nxt
        return parent

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "slack_bus": self.slack_bus,
            "buses": [
                {"id": b.id, "zone": b.zone, "load": b.load, "pv": b.pv, "s_max": b.s_max}
                for b in sorted(self.buses, key=lambda b: b.id)
            ],
            "branches": [
                {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x} for br in self.branches
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeederTopology":
        unknown = []
        unknown += [f"<root>.{k}" for k in d if k not in _TOP_KEYS]
        buses = []
        for i, b in enumerate(d["buses"]):
            unknown += [f"buses[{i}].{k}" for k in b if k not in _BUS_KEYS]
            zone = b.get("zone")
            buses.append(Bus(
                id=int(b["id"]),
                zone=None if zone is None else int(zone),
                load=float(b.get("load", 0.0)),
                pv=bool(b.get("pv", False)),
                s_max=float(b.get("s_max", 0.0)),
            ))
        branches = []
        for i, br in enumerate(d["branches"]):
            unknown += [f"branches[{i}].{k}" for k in br if k not in _BRANCH_KEYS]
            branches.append(Branch(int(br["from"]), int(br["to"]), float(br["r"]), float(br["x"])))
        if unknown:
            warnings.warn(f"ignoring unknown topology fields: {', '.join(unknown)}", stacklevel=2)
        return cls(
            buses=tuple(buses),
            branches=tuple(branches),
            slack_bus=int(d.get("slack_bus", 0)),
            base_mva=float(d.get("base_mva", 1.0)),
            name=str(d.get("name", "feeder")),
        )


def load_topology(path) -> FeederTopology:
    topo = FeederTopology.from_dict(json.loads(Path(path).read_text()))
    validate_radial(topo)
    return topo


def save_topology(topo: FeederTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=2))


def validate_radial(topo: FeederTopology) -> None:
    """Raise :class:`TopologyError` naming the first offending element."""
    ids = [b.id for b in topo.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise TopologyError(f"duplicate bus ids {dup}")
    known = set(ids)
    if topo.slack_bus not in known:
        raise TopologyError(f"slack bus {topo.slack_bus} is not a declared bus")
    for br in topo.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise TopologyError(f"branch {br.from_bus}->{br.to_bus} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise TopologyError(f"branch {br.from_bus}->{br.to_bus} is a self loop")
        if not (br.r > 0 and br.x > 0):
            raise TopologyError(f"branch {br.from_bus}->{br.to_bus} has nonpositive impedance r={br.r}, x={br.x}")
    # union-find catches the first branch that closes a loop
    root = {i: i for i in ids}

    def find(i):
        while root[i] != i:
            root[i] = root[root[i]]
            i = root[i]
        return i

    for br in topo.branches:
        a, b = find(br.from_bus), find(br.to_bus)
        if a == b:
            raise TopologyError(f"branch {br.from_bus}->{br.to_bus} closes a cycle")
        root[a] = b
    reach = set(topo.parent) | {topo.slack_bus}
    unreached = sorted(known - reach)
    if unreached:
        raise TopologyError(f"bus {unreached[0]} is disconnected from the slack bus")
    if len(topo.branches) != len(ids) - 1:
        raise TopologyError(f"{len(topo.branches)} branches for {len(ids)} buses; a tree needs {len(ids) - 1}")
    for b in topo.buses:
        if b.id == topo.slack_bus:
            continue
        if b.zone is None:
            raise TopologyError(f"bus {b.id} has no zone index")
        if b.pv and not b.s_max > 0:
            raise TopologyError(f"PV bus {b.id} needs an inverter capacity s_max > 0")
        if b.load < 0:
            raise TopologyError(f"bus {b.id} has negative nominal load {b.load}")


def desk_feeder() -> FeederTopology:
    """12-bus default feeder: 8 loads, 3 PV inverters, one per zone.

    Bus 0 is the substation. Zone 0 is the trunk 1-2-3-4 (PV at 4); zone 1
    the lateral 5-6-7 off bus 1 (PV at 7); zone 2 the lateral 8-11 off
    bus 2 (PV at 11).
    """
    loads = {2: 0.09, 3: 0.075, 4: 0.075, 6: 0.105, 7: 0.09, 9: 0.075, 10: 0.09, 11: 0.075}
    zone = {1: 0, 2: 0, 3: 0, 4: 0, 5: 1, 6: 1, 7: 1, 8: 2, 9: 2, 10: 2, 11: 2}
    pv = {4: 0.5, 7: 0.5, 11: 0.5}
    buses = [Bus(0, None)] + [
        Bus(i, zone[i], loads.get(i, 0.0), i in pv, pv.get(i, 0.0)) for i in range(1, 12)
    ]
    z = [(0, 1, 0.020, 0.040), (1, 2, 0.050, 0.040), (2, 3, 0.060, 0.050), (3, 4, 0.060, 0.050),
         (1, 5, 0.060, 0.050), (5, 6, 0.070, 0.060), (6, 7, 0.070, 0.060),
         (2, 8, 0.060, 0.050), (8, 9, 0.060, 0.050), (9, 10, 0.060, 0.050), (10, 11, 0.060, 0.050)]
    return FeederTopology(tuple(buses), tuple(Branch(*t) for t in z), 0, 1.0, "desk12")


def transfer_feeder() -> FeederTopology:
    """10-bus second feeder with two PV zones, used for prototype transfer runs."""
    loads = {2: 0.09, 3: 0.09, 4: 0.075, 6: 0.105, 7: 0.09, 8: 0.075, 9: 0.09}
    zone = {1: 0, 2: 0, 3: 0, 4: 0, 5: 1, 6: 1, 7: 1, 8: 1, 9: 1}
    pv = {4: 0.5, 9: 0.5}
    buses = [Bus(0, None)] + [
        Bus(i, zone[i], loads.get(i, 0.0), i in pv, pv.get(i, 0.0)) for i in range(1, 10)
    ]
    z = [(0, 1, 0.020, 0.040), (1, 2, 0.060, 0.050), (2, 3, 0.070, 0.060), (3, 4, 0.070, 0.060),
         (1, 5, 0.040, 0.040), (5, 6, 0.060, 0.050), (6, 7, 0.060, 0.050), (7, 8, 0.060, 0.050),
         (8, 9, 0.060, 0.050)]
    return FeederTopology(tuple(buses), tuple(Branch(*t) for t in z), 0, 1.0, "transfer10")


def random_radial_feeder(n_bus: int, rng: np.random.Generator, n_pv: int = 2,
                         n_zones: int = 2) -> FeederTopology:
    """Random tree rooted at bus 0 with moderate impedances, for testing."""
    n_pv = min(n_pv, n_bus - 1)
    branches = []
    for i in range(1, n_bus):
        parent = int(rng.integers(0, i))
        branches.append(Branch(parent, i, float(rng.uniform(0.005, 0.03)), float(rng.uniform(0.005, 0.03))))
    pv_set = set(rng.choice(np.arange(1, n_bus), size=n_pv, replace=False).tolist()) if n_pv else set()
    buses = [Bus(0, None)]
    for i in range(1, n_bus):
        buses.append(Bus(i, int(i % n_zones), float(rng.uniform(0.0, 0.05)), i in pv_set,
                         0.2 if i in pv_set else 0.0))
    return FeederTopology(tuple(buses), tuple(branches), 0, 1.0, f"random{n_bus}")
