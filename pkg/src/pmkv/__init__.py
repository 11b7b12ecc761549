"""Simulation and rate certification for time-periodic McKean-Vlasov SDEs."""

__version__ = "0.1.0"

from .coefficients import (MeasureView, PeriodicCoefficients, Scenario, builtin_scenarios, eval_drift,  # noqa: E402
                           eval_sigma, get_scenario)
from .engine import (Ensemble, SimConfig, coupled_simulate, periodic_fixed_point, simulate,  # noqa: E402
                     step)
from .geometry import Ball, Box, HalfSpaces, WholeSpace, contains, inward_normal, project  # noqa: E402
from .noise import NoisePolicy  # noqa: E402
from .psi import TabulatedCostFunction, build_psi_eigen, build_psi_example31  # noqa: E402
from .transport import (CostSpec, ot_exact, ot_sliced, ratio_quasidistance,  # noqa: E402
                        relative_entropy_knn)

__all__ = [
    "MeasureView", "PeriodicCoefficients", "Scenario", "builtin_scenarios", "eval_drift", "eval_sigma",
    "get_scenario", "Ensemble", "SimConfig", "coupled_simulate", "periodic_fixed_point", "simulate", "step",
    "Ball", "Box", "HalfSpaces", "WholeSpace", "contains", "inward_normal", "project", "NoisePolicy",
    "TabulatedCostFunction", "build_psi_eigen", "build_psi_example31", "CostSpec", "ot_exact", "ot_sliced",
    "ratio_quasidistance", "relative_entropy_knn",
]
