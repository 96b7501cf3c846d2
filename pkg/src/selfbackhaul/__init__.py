"""Joint beamforming, rate selection, user association and admission control
for mmWave self-backhauled small cells.

Modules: ``system`` (configuration, topology), ``channel`` (channel models),
``conic`` (SOCP modeling and solving), ``formulation`` (program builders),
``algorithms`` (BnC, RnP1, RnP2, bounds), ``verify`` (feasibility checks and
brute-force oracle), ``scenario`` and ``cli`` (sweeps and command line).
"""

from .algorithms import (
    AlgoParams,
    NoInitialPoint,
    RrmSolution,
    find_initial_point,
    predesign_beams,
    solve_bnc_misocp,
    solve_rnp1,
    solve_rnp2,
    solve_upper_bound,
)
from .channel import ChannelSet, PerturbationSpec, generate_channels, perturb_channels
from .scenario import ScenarioSpec, load_spec, preset, run_scenario, run_slotted
from .system import RateTable, SystemConfig, default_rate_table, generate_topology, lower_bound_rate, validate_config
from .verify import brute_force_optimum, check_feasibility_Pprime, effective_throughput

__version__ = "0.1.0"

__all__ = [
    "AlgoParams", "ChannelSet", "NoInitialPoint", "PerturbationSpec", "RateTable", "RrmSolution", "ScenarioSpec",
    "SystemConfig", "brute_force_optimum", "check_feasibility_Pprime", "default_rate_table",
    "effective_throughput", "find_initial_point", "generate_channels", "generate_topology", "load_spec",
    "lower_bound_rate", "perturb_channels", "predesign_beams", "preset", "run_scenario", "run_slotted",
    "solve_bnc_misocp", "solve_rnp1", "solve_rnp2", "solve_upper_bound", "validate_config",
]
