"""Radial feeder model and AC power-flow solver."""
from tpavc.grid.powerflow import (
    InjectionState,
    PowerFlowSolution,
    RadialSolver,
    pv_reactive_from_action,
    solve_power_flow,
    solver_for,
)
from tpavc.grid.topology import (
    Branch,
    Bus,
    FeederTopology,
    desk_feeder,
    load_topology,
    random_radial_feeder,
    save_topology,
    transfer_feeder,
    validate_radial,
)

__all__ = [
    "Branch", "Bus", "FeederTopology", "InjectionState", "PowerFlowSolution", "RadialSolver",
    "desk_feeder", "load_topology", "pv_reactive_from_action", "random_radial_feeder",
    "save_topology", "solve_power_flow", "solver_for", "transfer_feeder", "validate_radial",
]
