"""Joint assignment, power and antenna-tilt optimization for cellular networks
by max-min utility balancing with fixed-point iterations."""
from .coupling import build_crosslink, power_transforms, sinr, vertical_pattern
from .duality import (balanced_level, build_lambda_dl, build_lambda_ul, solve_downlink,
                      spectral_radius)
from .fpsolver import ConvergenceError, FixedPointProblem, Trace, solve_normalized
from .jointopt import Solution, baseline_solution, evaluate_solution, optimize_uplink
from .scenario import (ClusterMap, Scenario, cluster_users, generate_hex_scenario, load_scenario,
                       save_scenario, t2_fixture)
from .utility import UplinkModel, UtilityConfig

__version__ = "0.1.0"

__all__ = [
    "ClusterMap", "ConvergenceError", "FixedPointProblem", "Scenario", "Solution", "Trace",
    "UplinkModel", "UtilityConfig", "balanced_level", "baseline_solution", "build_crosslink",
    "build_lambda_dl", "build_lambda_ul", "cluster_users", "evaluate_solution",
    "generate_hex_scenario", "load_scenario", "optimize_uplink", "power_transforms",
    "save_scenario", "sinr", "solve_downlink", "solve_normalized", "spectral_radius",
    "t2_fixture", "vertical_pattern",
]
