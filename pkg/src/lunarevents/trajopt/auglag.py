"""Bound-constrained augmented Lagrangian (PHR).

Solves::

    min f(z)  s.t.  c(z) = 0,  g(z) >= 0,  lower <= z <= upper

The problem supplies ``evaluate(z)`` (objective, constraints and sparse
Jacobians) and ``lower``/``upper``. For the default Gauss-Newton inner solver
it also supplies ``objective_residuals(z) -> (r, J)`` with
``f = 0.5 |r|^2 + const``, so the PHR subproblem::

    0.5 |r|^2 + mu/2 |c + lam/mu|^2 + mu/2 |min(0, g - nu/mu)|^2

is a bounded nonlinear least-squares problem. The default inner solver is a
projected Levenberg-Marquardt iteration on sparse normal equations;
``inner="trf"`` hands the same residuals to scipy's trust-region-reflective
solver and ``inner="lbfgsb"`` minimises the merit with L-BFGS-B. The latter
needs only ``evaluate`` but converges slowly to tight feasibility on
collocation problems.

Variables with ``lower == upper`` are removed before the inner solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares, minimize

logger = logging.getLogger(__name__)


@dataclass
class AugLagOptions:
    tol: float = 1e-6
    ftol: float = 1e-6
    max_iter: int = 2000
    max_outer: int = 30
    inner: str = "lm"
    inner_max_iter: int = 60
    penalty0: float = 100.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    dense_limit: int = 4000


@dataclass
class AugLagResult:
    z: np.ndarray
    f: float
    max_eq: float
    max_ineq: float
    kkt: float
    converged: bool
    outer_iterations: int
    inner_iterations: int
    penalty: float
    message: str
    multipliers_eq: np.ndarray = field(repr=False, default=None)
    multipliers_ineq: np.ndarray = field(repr=False, default=None)


def violations(ev) -> tuple[float, float]:
    meq = float(np.max(np.abs(ev.c))) if ev.c.size else 0.0
    mineq = float(np.max(np.maximum(0.0, -ev.g))) if ev.g.size else 0.0
    return meq, mineq


def stationarity(ev, lam, nu, z, lower, upper) -> float:
    """Infinity norm of the projected Lagrangian gradient."""
    grad = ev.grad_f + ev.jac_c.T @ lam - ev.jac_g.T @ nu
    pg = z - np.clip(z - grad, lower, upper)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


class _Merit:
    """PHR merit in the free variables, with a one-point evaluation cache."""

    def __init__(self, problem, z_template, free, lam, nu, mu):
        self.problem = problem
        self.z_template = z_template
        self.free = free
        self.lam, self.nu, self.mu = lam, nu, mu
        self._key = None
        self._ev = None

    def full(self, y):
        z = self.z_template.copy()
        z[self.free] = y
        return z

    def ev(self, y):
        key = y.tobytes()
        if key != self._key:
            self._ev = self.problem.evaluate(self.full(y))
            self._key = key
        return self._ev

    def residuals(self, y):
        e = self.ev(y)
        r, _ = self.problem.objective_residuals(self.full(y))
        sm = np.sqrt(self.mu)
        return np.concatenate([r, sm * (e.c + self.lam / self.mu), sm * np.minimum(0.0, e.g - self.nu / self.mu)])

    def jacobian(self, y, dense: bool):
        e = self.ev(y)
        _, Jr = self.problem.objective_residuals(self.full(y))
        sm = np.sqrt(self.mu)
        active = ((e.g - self.nu / self.mu) < 0).astype(float)
        J = sp.vstack([Jr, sm * e.jac_c, sm * sp.diags(active) @ e.jac_g]).tocsc()[:, self.free]
        return J.toarray() if dense else J.tocsr()

    def value_grad(self, y):
        e = self.ev(y)
        lam, nu, mu = self.lam, self.nu, self.mu
        shifted = nu - mu * e.g
        active = shifted > 0
        val = e.f + lam @ e.c + 0.5 * mu * (e.c @ e.c)
        val += np.sum(np.where(active, -nu * e.g + 0.5 * mu * e.g * e.g, -0.5 * nu * nu / mu))
        grad = e.grad_f + e.jac_c.T @ (lam + mu * e.c) + e.jac_g.T @ np.where(active, -shifted, 0.0)
        return val, grad[self.free]


def auglag(problem, z0, options: AugLagOptions | None = None, lam0=None, nu0=None) -> AugLagResult:
    """Minimise ``problem`` starting from ``z0``."""
    opt = options or AugLagOptions()
    lower = np.asarray(problem.lower, dtype=float)
    upper = np.asarray(problem.upper, dtype=float)
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    free = lower < upper
    ev = problem.evaluate(z)
    lam = np.zeros_like(ev.c) if lam0 is None else np.array(lam0, dtype=float)
    nu = np.zeros_like(ev.g) if nu0 is None else np.array(nu0, dtype=float)
    merit = _Merit(problem, z, free, lam, nu, opt.penalty0)
    dense = int(free.sum()) <= opt.dense_limit
    lo_f, hi_f = lower[free], upper[free]

    y = z[free]
    inner_total = 0
    prev_viol = max(violations(ev))
    prev_f = np.inf
    converged = False
    message = "outer iteration limit"
    outer = 0
    for outer in range(1, opt.max_outer + 1):
        budget = min(opt.inner_max_iter, opt.max_iter - inner_total)
        if budget <= 0:
            message = "iteration limit"
            break
        if opt.inner == "lm":
            y, nit, inner_ok = bounded_lm(
                merit.residuals, lambda yy: merit.jacobian(yy, False), y, lo_f, hi_f, max_iter=budget
            )
            inner_total += nit
            res = None
        elif opt.inner == "trf":
            res = least_squares(
                merit.residuals,
                y,
                jac=lambda yy: merit.jacobian(yy, dense),
                bounds=(lo_f, hi_f),
                method="trf",
                x_scale="jac",
                tr_solver="exact" if dense else "lsmr",
                max_nfev=budget,
                xtol=1e-12,
                ftol=1e-12,
                gtol=1e-10,
            )
            inner_total += int(res.nfev)
            inner_ok = res.status > 0
        elif opt.inner == "lbfgsb":
            res = minimize(
                merit.value_grad,
                y,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo_f, hi_f)),
                options={"maxiter": budget, "gtol": 1e-9, "ftol": 0.0, "maxcor": 30},
            )
            inner_total += int(res.nit)
            inner_ok = res.status == 0
        else:
            raise ValueError(f"unknown inner solver {opt.inner!r}")
        if res is not None:
            y = res.x
        ev = merit.ev(y)
        z = merit.full(y)
        meq, mineq = violations(ev)
        viol = max(meq, mineq)
        logger.debug(
            "outer %d: f=%.10g eq=%.2e ineq=%.2e mu=%.0e inner_ok=%s", outer, ev.f, meq, mineq, merit.mu, inner_ok
        )
        merit.lam = merit.lam + merit.mu * ev.c
        merit.nu = np.maximum(0.0, merit.nu - merit.mu * ev.g)
        stalled = abs(ev.f - prev_f) <= opt.ftol * max(1.0, abs(ev.f))
        if viol <= opt.tol and (inner_ok or stalled or viol <= 1e-3 * opt.tol):
            converged = True
            message = "converged"
            break
        prev_f = ev.f
        if viol > opt.tol and viol > 0.25 * prev_viol:
            if merit.mu >= opt.penalty_max:
                message = "penalty limit reached"
                break
            merit.mu = min(merit.mu * opt.penalty_growth, opt.penalty_max)
        prev_viol = viol

    meq, mineq = violations(ev)
    return AugLagResult(
        z=z,
        f=float(ev.f),
        max_eq=meq,
        max_ineq=mineq,
        kkt=stationarity(ev, merit.lam, merit.nu, z, lower, upper),
        converged=converged,
        outer_iterations=outer,
        inner_iterations=inner_total,
        penalty=merit.mu,
        message=message,
        multipliers_eq=merit.lam,
        multipliers_ineq=merit.nu,
    )


def bounded_lm(fun, jac, y0, lower, upper, max_iter=100, gtol=1e-10, ftol=1e-13, xtol=1e-14):
    """Projected Levenberg-Marquardt for ``min 0.5 |fun(y)|^2`` on a box.

    Variables held at a bound by the gradient are frozen for the step; the
    remaining block is solved from sparse, Marquardt-scaled normal
    equations. Returns ``(y, iterations, converged)``.
    """
    y = np.clip(np.asarray(y0, dtype=float), lower, upper)
    r = fun(y)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    nu = 2.0
    J = jac(y)
    for it in range(1, max_iter + 1):
        g = J.T @ r
        pg = y - np.clip(y - g, lower, upper)
        if np.max(np.abs(pg), initial=0.0) <= gtol:
            return y, it, True
        # epsilon-active set: hold variables close to a bound they are pushed into
        span = max(min(1e-2, float(np.max(np.abs(pg)))), 1e-12)
        held = ((y <= lower + span) & (g > 0)) | ((y >= upper - span) & (g < 0))
        free = np.flatnonzero(~held)
        Jf = J[:, free].tocsc()
        A = (Jf.T @ Jf).tocsc()
        d = np.ones(free.size)
        while True:
            M = A + sp.diags(lam * d, format="csc")
            try:
                step = -spla.spsolve(M, g[free])
            except RuntimeError:  # singular factorisation
                step = np.full(free.size, np.nan)
            if not np.all(np.isfinite(step)):
                lam *= nu
                nu *= 2.0
                if lam > 1e16:
                    return y, it, False
                continue
            y_new = y.copy()
            y_new[free] = np.clip(y[free] + step, lower[free], upper[free])
            dy = y_new - y
            Jd = J @ dy
            predicted = -(g @ dy + 0.5 * Jd @ Jd)
            r_new = fun(y_new)
            cost_new = 0.5 * float(r_new @ r_new)
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
            if rho > 1e-4:
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e16:
                return y, it, False
        small_step = np.max(np.abs(dy)) <= xtol * (1.0 + np.max(np.abs(y)))
        small_gain = predicted <= ftol * max(cost, 1e-300)
        y, r, cost = y_new, r_new, cost_new
        lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
        nu = 2.0
        if small_step or small_gain:
            return y, it, True
        J = jac(y)
    return y, max_iter, False
