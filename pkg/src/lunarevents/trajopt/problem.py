from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import MASS, NU, NX, LanderState, VehicleParams


class InvalidSpecError(ValueError):
    pass


@dataclass(eq=False)
class OcpSpec:
    """Fixed-final-time, mass-optimal landing problem.

    The final mass is left free; every other component of ``xf`` is pinned.
    ``lock_rotation`` pins attitude, body rates and attitude throttles to zero
    (used for vertical-descent sanity problems).
    """

    x0: LanderState
    xf: LanderState
    tf: float
    N: int = 30
    epsilon: float = 0.5
    lambda_tilt: float = np.deg2rad(80.0)
    params: VehicleParams = field(default_factory=VehicleParams)
    lock_rotation: bool = False

    def validate(self) -> None:
        if int(self.N) != self.N or self.N < 2:
            raise InvalidSpecError(f"N must be an integer >= 2, got {self.N}")
        if not (np.isfinite(self.tf) and self.tf > 0):
            raise InvalidSpecError(f"tf must be positive and finite, got {self.tf}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidSpecError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.lambda_tilt < np.pi / 2:
            raise InvalidSpecError(f"lambda_tilt must lie in (0, pi/2), got {self.lambda_tilt}")
        for name in ("x0", "xf"):
            if not np.all(np.isfinite(getattr(self, name).as_vector())):
                raise InvalidSpecError(f"{name} has non-finite components")

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.x0.r - self.xf.r))

    def summary(self) -> dict:
        return {
            "x0": self.x0.as_vector().tolist(),
            "xf": self.xf.as_vector().tolist(),
            "tf": self.tf,
            "N": self.N,
            "epsilon": self.epsilon,
            "lambda_tilt": self.lambda_tilt,
            "lock_rotation": self.lock_rotation,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_summary(cls, d: dict) -> "OcpSpec":
        return cls(
            x0=LanderState.from_vector(d["x0"]),
            xf=LanderState.from_vector(d["xf"]),
            tf=d["tf"],
            N=d["N"],
            epsilon=d["epsilon"],
            lambda_tilt=d["lambda_tilt"],
            params=VehicleParams.from_dict(d["params"]),
            lock_rotation=d.get("lock_rotation", False),
        )

    def with_boundary(self, x0=None, xf=None, tf=None) -> "OcpSpec":
        return OcpSpec(
            x0=self.x0 if x0 is None else x0,
            xf=self.xf if xf is None else xf,
            tf=self.tf if tf is None else tf,
            N=self.N,
            epsilon=self.epsilon,
            lambda_tilt=self.lambda_tilt,
            params=self.params,
            lock_rotation=self.lock_rotation,
        )


@dataclass(frozen=True)
class Scaling:
    """Nondimensionalisation.

    Lengths by the initial range and time by tf. Mass is scaled by the fuel a
    full-throttle burn would use over tf, so that mass changes are O(1) like
    the other states.
    """

    length: float
    time: float
    mass: float

    @classmethod
    def for_spec(cls, spec: OcpSpec) -> "Scaling":
        p = spec.params
        burn = p.F_a_max * float(spec.tf) / (p.Isp * p.g0)
        return cls(length=max(spec.range, 1.0), time=float(spec.tf), mass=float(min(max(burn, 1e-3 * spec.x0.m), spec.x0.m)))

    @property
    def state(self) -> np.ndarray:
        L, T, M = self.length, self.time, self.mass
        return np.array([L, L, L, L / T, L / T, L / T, 1.0, 1.0, 1.0, 1 / T, 1 / T, 1 / T, M])


@dataclass(eq=False)
class OptimalTrajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    mid_controls: np.ndarray | None = None
    objective: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    spec: OcpSpec | None = None
    # solver multipliers and final penalty, reused when warm-starting
    duals: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, NX)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, NU)
        if self.mid_controls is not None:
            self.mid_controls = np.asarray(self.mid_controls, dtype=float).reshape(-1, NU)
        if not len(self.times) == len(self.states) == len(self.controls):
            raise ValueError("times, states and controls must have the same length")

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def tf(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", False))

    def state(self, k: int) -> LanderState:
        return LanderState.from_vector(self.states[k])

    def midpoint_controls(self) -> np.ndarray:
        if self.mid_controls is not None:
            return self.mid_controls
        return 0.5 * (self.controls[:-1] + self.controls[1:])

    def control_at(self, t: float) -> np.ndarray:
        """Quadratic Hermite-Simpson control interpolant through node/midpoint values."""
        t0, tN = self.times[0], self.times[-1]
        t = min(max(t, t0), tN)
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        k = min(max(k, 0), self.N - 1)
        h = self.times[k + 1] - self.times[k]
        s = (t - self.times[k]) / h
        uk, um, uk1 = self.controls[k], self.midpoint_controls()[k], self.controls[k + 1]
        # Lagrange basis on s = 0, 1/2, 1
        u = 2 * (s - 0.5) * (s - 1) * uk - 4 * s * (s - 1) * um + 2 * s * (s - 0.5) * uk1
        return u


def objective(trajectory: OptimalTrajectory, epsilon: float) -> float:
    """Mass/energy trade-off cost.

    The mass term telescopes to the exact node mass difference; the energy
    term uses Simpson quadrature on every interval.
    """
    m = trajectory.states[:, MASS]
    u = trajectory.controls
    um = trajectory.midpoint_controls()
    dt = np.diff(trajectory.times)
    uu = np.sum(u * u, axis=1)
    uum = np.sum(um * um, axis=1)
    energy = np.sum(dt / 6.0 * (uu[:-1] + 4.0 * uum + uu[1:]))
    return float(-(1.0 - epsilon) * (m[-1] - m[0]) + epsilon * energy)
