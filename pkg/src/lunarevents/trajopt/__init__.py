"""Mass-optimal landing trajectories by Hermite-Simpson direct collocation."""
from .auglag import AugLagOptions, AugLagResult, auglag
from .problem import InvalidSpecError, OcpSpec, OptimalTrajectory, Scaling, objective
from .solve import FEASIBILITY_TOL, continuation_solve, solve
from .transcription import HermiteSimpsonNLP, transcribe

__all__ = [
    "AugLagOptions",
    "AugLagResult",
    "FEASIBILITY_TOL",
    "HermiteSimpsonNLP",
    "InvalidSpecError",
    "OcpSpec",
    "OptimalTrajectory",
    "Scaling",
    "auglag",
    "continuation_solve",
    "objective",
    "solve",
    "transcribe",
]
