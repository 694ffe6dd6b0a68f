from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from ..dynamics import LanderState
from .auglag import AugLagOptions, auglag
from .problem import OcpSpec, OptimalTrajectory
from .transcription import HermiteSimpsonNLP, transcribe

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6
# a penalty from the end of an earlier solve is too stiff for a moved problem
WARM_START_PENALTY_MAX = 1e5


def solve(
    nlp: HermiteSimpsonNLP | OcpSpec,
    initial_guess=None,
    options: AugLagOptions | None = None,
    duals: tuple | None = None,
) -> OptimalTrajectory:
    """Solve a transcribed problem.

    ``initial_guess`` may be ``None`` (straight-line guess), a decision vector
    or an :class:`OptimalTrajectory` on the same grid. ``duals`` is a
    ``(lam, nu, penalty)`` triple from an earlier solve; a trajectory guess
    supplies its own. The result is always returned; check
    ``diagnostics["converged"]`` before trusting it.
    """
    if isinstance(nlp, OcpSpec):
        nlp = transcribe(nlp)
    if initial_guess is None:
        z0 = nlp.initial_guess()
    elif isinstance(initial_guess, OptimalTrajectory):
        z0 = nlp.from_trajectory(initial_guess)
        if duals is None:
            duals = initial_guess.duals
    else:
        z0 = np.asarray(initial_guess, dtype=float)
        if z0.shape != (nlp.n,):
            raise ValueError(f"initial guess has shape {z0.shape}, expected ({nlp.n},)")
    lam0 = nu0 = None
    if duals is not None:
        lam0, nu0, penalty = duals
        options = replace(options or AugLagOptions(), penalty0=min(float(penalty), WARM_START_PENALTY_MAX))
    res = auglag(nlp, z0, options, lam0=lam0, nu0=nu0)
    max_boundary = _boundary_residual(nlp, res.z)
    converged = res.converged and max(res.max_eq, res.max_ineq, max_boundary) <= FEASIBILITY_TOL
    diagnostics = {
        "converged": converged,
        "feasible": converged,
        "max_defect": res.max_eq,
        "max_violation": res.max_ineq,
        "max_boundary": max_boundary,
        "kkt": res.kkt,
        "outer_iterations": res.outer_iterations,
        "iterations": res.inner_iterations,
        "penalty": res.penalty,
        "message": res.message if converged else f"not converged: {res.message}",
    }
    logger.info(
        "solve N=%d tf=%.3g: %s (defect %.2e, tilt %.2e, %d iterations)",
        nlp.N, nlp.spec.tf, diagnostics["message"], res.max_eq, res.max_ineq, res.inner_iterations,
    )
    out = nlp.to_trajectory(res.z, diagnostics)
    out.duals = (res.multipliers_eq, res.multipliers_ineq, res.penalty)
    return out


def _boundary_residual(nlp: HermiteSimpsonNLP, z) -> float:
    S, _, _ = nlp.unpack(z)
    s0 = nlp.spec.x0.as_vector() / nlp.sv
    sf = nlp.spec.xf.as_vector() / nlp.sv
    return float(max(np.max(np.abs(S[0] - s0)), np.max(np.abs(S[-1, :-1] - sf[:-1]))))


def _lerp_state(a: LanderState, b: LanderState, s: float) -> LanderState:
    return LanderState.from_vector((1 - s) * a.as_vector() + s * b.as_vector())


def continuation_solve(
    base: OptimalTrajectory,
    new_spec: OcpSpec,
    steps: int = 4,
    options: AugLagOptions | None = None,
) -> OptimalTrajectory:
    """Homotopy from ``base.spec`` to ``new_spec`` over boundary conditions and tf.

    Each intermediate problem is warm-started from the previous solution
    (the nondimensional grid makes a change of tf transparent). On failure
    the last converged intermediate is returned with ``failed_at`` set to
    the homotopy parameter that did not converge.
    """
    if base.spec is None:
        raise ValueError("base trajectory carries no OcpSpec")
    if not base.converged:
        raise ValueError("continuation requires a converged base trajectory")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    old = base.spec
    if new_spec.N != old.N:
        raise ValueError("continuation keeps the grid size fixed")

    history = []
    current = base
    if _same_boundary(old, new_spec):
        nlp = transcribe(new_spec)
        z = nlp.from_trajectory(base)
        ev = nlp.evaluate(z)
        max_eq = float(np.max(np.abs(ev.c)))
        max_ineq = float(max(0.0, -np.min(ev.g)))
        if max(max_eq, max_ineq, _boundary_residual(nlp, z)) <= FEASIBILITY_TOL:
            # verification only: the base already solves this problem
            out = replace(base, diagnostics=dict(base.diagnostics, iterations=0, outer_iterations=0), spec=new_spec)
            out.duals = base.duals
        else:
            out = solve(nlp, base, options)
        out.diagnostics["homotopy"] = [{"s": 1.0, "converged": out.converged, "objective": out.objective}]
        return out

    for i in range(1, steps + 1):
        s = i / steps
        spec_s = new_spec.with_boundary(
            x0=_lerp_state(old.x0, new_spec.x0, s),
            xf=_lerp_state(old.xf, new_spec.xf, s),
            tf=(1 - s) * old.tf + s * new_spec.tf,
        )
        nlp = transcribe(spec_s)
        # warm start: carry the nondimensional solution over to the new scaling
        prev = transcribe(current.spec)
        z_prev = prev.from_trajectory(current)
        S, U, Um = prev.unpack(z_prev)
        s0 = spec_s.x0.as_vector() / nlp.sv
        sf = spec_s.xf.as_vector() / nlp.sv
        S_new = S * prev.sv / nlp.sv
        # shift the boundary mismatch linearly along the grid
        tau = np.linspace(0.0, 1.0, nlp.N + 1)[:, None]
        delta0 = s0 - S_new[0]
        deltaf = sf - S_new[-1]
        deltaf[-1] = 0.0
        S_new = S_new + (1 - tau) * delta0 + tau * deltaf
        z0 = np.clip(nlp.pack(S_new, U, Um), nlp.lower, nlp.upper)
        result = solve(nlp, z0, options, duals=current.duals)
        history.append({"s": s, "converged": result.converged, "objective": result.objective})
        if not result.converged:
            current.diagnostics = dict(current.diagnostics)
            current.diagnostics["homotopy"] = history
            current.diagnostics["failed_at"] = s
            current.diagnostics["continuation_complete"] = False
            current.diagnostics["message"] = f"continuation lost convergence at s={s:.3g}"
            logger.warning("continuation lost convergence at s=%.3g", s)
            return current
        current = result
    current.diagnostics["homotopy"] = history
    current.diagnostics["continuation_complete"] = True
    return current


def _same_boundary(a: OcpSpec, b: OcpSpec) -> bool:
    return (
        np.array_equal(a.x0.as_vector(), b.x0.as_vector())
        and np.array_equal(a.xf.as_vector(), b.xf.as_vector())
        and a.tf == b.tf
    )
