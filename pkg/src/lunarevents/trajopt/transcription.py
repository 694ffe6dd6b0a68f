"""Hermite-Simpson transcription of the landing OCP into a sparse NLP.

Decision vector (nondimensional), in order:

* node states ``S``        shape ``(N+1, 13)``
* node controls ``U``      shape ``(N+1, 4)``
* midpoint controls ``Um`` shape ``(N, 4)``

Equality constraints are the Simpson defects of every interval; the
inequalities are the thrust-tilt constraints at nodes and midpoints. Boundary
states and control limits are expressed as variable bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..dynamics import MASS, NU, NX, rhs
from .problem import OcpSpec, OptimalTrajectory, Scaling

_CS_STEP = 1e-30
_ANGLE_BOUND = np.deg2rad(89.0)


@dataclass
class Evaluation:
    """Everything the solver needs at one decision vector."""

    f: float
    grad_f: np.ndarray
    c: np.ndarray
    jac_c: sp.csr_matrix
    g: np.ndarray
    jac_g: sp.csr_matrix


class HermiteSimpsonNLP:
    def __init__(self, spec: OcpSpec):
        spec.validate()
        self.spec = spec
        self.N = N = int(spec.N)
        self.scaling = Scaling.for_spec(spec)
        self.sv = self.scaling.state
        self.h = 1.0 / N
        self.n_states = (N + 1) * NX
        self.n_controls = (N + 1) * NU
        self.n_mid = N * NU
        self.n = self.n_states + self.n_controls + self.n_mid
        self.n_defects = N * NX
        self.n_tilt = 2 * N + 1
        self._cos_lambda = np.cos(spec.lambda_tilt)
        self._build_bounds()
        self._build_patterns()

    # -- layout -----------------------------------------------------------
    def unpack(self, z):
        N = self.N
        S = z[: self.n_states].reshape(N + 1, NX)
        U = z[self.n_states : self.n_states + self.n_controls].reshape(N + 1, NU)
        Um = z[self.n_states + self.n_controls :].reshape(N, NU)
        return S, U, Um

    def pack(self, S, U, Um) -> np.ndarray:
        return np.concatenate([np.ravel(S), np.ravel(U), np.ravel(Um)])

    def _sidx(self, k, j=None):
        j = np.arange(NX) if j is None else j
        return k * NX + j

    def _uidx(self, k):
        return self.n_states + k * NU + np.arange(NU)

    def _umidx(self, k):
        return self.n_states + self.n_controls + k * NU + np.arange(NU)

    def _build_bounds(self):
        N = self.N
        big = 1e6
        lo = np.full(self.n, -big)
        hi = np.full(self.n, big)
        S_lo, U_lo, Um_lo = self.unpack(lo)
        S_hi, U_hi, Um_hi = self.unpack(hi)
        S_lo[:, 6:8] = -_ANGLE_BOUND
        S_hi[:, 6:8] = _ANGLE_BOUND
        m0 = self.spec.x0.m
        S_lo[:, MASS] = 0.05 * m0 / self.scaling.mass
        S_hi[:, MASS] = self._mass_cap = 2.0 * m0 / self.scaling.mass
        for Ulo, Uhi in ((U_lo, U_hi), (Um_lo, Um_hi)):
            Ulo[:, 0] = 0.0
            Uhi[:, 0] = 1.0
            Ulo[:, 1:] = -1.0
            Uhi[:, 1:] = 1.0
        s0 = self.spec.x0.as_vector() / self.sv
        sf = self.spec.xf.as_vector() / self.sv
        S_lo[0] = S_hi[0] = s0
        S_lo[N, :MASS] = S_hi[N, :MASS] = sf[:MASS]
        if self.spec.lock_rotation:
            S_lo[:, 6:12] = S_hi[:, 6:12] = 0.0
            for Ulo, Uhi in ((U_lo, U_hi), (Um_lo, Um_hi)):
                Ulo[:, 1:] = Uhi[:, 1:] = 0.0
        self.lower = lo
        self.upper = hi

    def _build_patterns(self):
        rows, cols = [], []
        for k in range(self.N):
            r = k * NX + np.arange(NX)
            blocks = [self._sidx(k), self._sidx(k + 1), self._uidx(k), self._uidx(k + 1), self._umidx(k)]
            cidx = np.concatenate(blocks)
            rows.append(np.repeat(r, len(cidx)))
            cols.append(np.tile(cidx, NX))
        self._c_rows = np.concatenate(rows)
        self._c_cols = np.concatenate(cols)

    # -- dynamics ---------------------------------------------------------
    def dynamics(self, S, U):
        """Nondimensional ``dS/dtau``."""
        X = S * self.sv
        return self.scaling.time * rhs(X, U, self.spec.params) / self.sv

    def dynamics_jac(self, S, U):
        """Return ``F, dF/dS, dF/dU`` via complex-step differentiation."""
        K = S.shape[0]
        n_in = NX + NU
        W = np.concatenate([S, U], axis=1).astype(complex)
        P = np.broadcast_to(W, (n_in, K, n_in)).copy()
        P[np.arange(n_in), :, np.arange(n_in)] += 1j * _CS_STEP
        F = self.dynamics(P[..., :NX], P[..., NX:])
        D = F.imag / _CS_STEP  # (n_in, K, NX)
        jac = np.transpose(D, (1, 2, 0))  # (K, NX, n_in)
        return F[0].real, jac[:, :, :NX], jac[:, :, NX:]

    def midpoint_states(self, S, U, F=None):
        if F is None:
            F = self.dynamics(S, U)
        return 0.5 * (S[:-1] + S[1:]) + self.h / 8.0 * (F[:-1] - F[1:])

    # -- NLP functions -------------------------------------------------------
    def objective(self, z) -> float:
        S, U, Um = self.unpack(z)
        eps = self.spec.epsilon
        uu = np.sum(U * U, axis=1)
        uum = np.sum(Um * Um, axis=1)
        energy = self.h / 6.0 * np.sum(uu[:-1] + 4.0 * uum + uu[1:])
        T, M = self.scaling.time, self.scaling.mass
        return float(-(1.0 - eps) * (S[-1, MASS] - S[0, MASS]) + eps * T / M * energy)

    def objective_grad(self, z) -> np.ndarray:
        S, U, Um = self.unpack(z)
        eps = self.spec.epsilon
        T, M = self.scaling.time, self.scaling.mass
        gS = np.zeros_like(S)
        gS[-1, MASS] = -(1.0 - eps)
        gS[0, MASS] = 1.0 - eps
        w = np.full(self.N + 1, 2.0)
        w[0] = w[-1] = 1.0
        coef = eps * T / M * self.h / 6.0
        gU = coef * 2.0 * w[:, None] * U
        gUm = coef * 8.0 * Um
        return self.pack(gS, gU, gUm)

    def objective_residuals(self, z):
        """``(r, J)`` with ``objective(z) = 0.5 |r|^2 + const``.

        Control energy maps to weighted control residuals. The linear mass
        term becomes ``sqrt(2 (1 - eps) (3 - m_N))``, which stays real because
        the nondimensional mass has an upper bound.
        """
        eps = self.spec.epsilon
        kappa = self.scaling.time / self.scaling.mass
        if not hasattr(self, "_res_w"):
            w = np.full(self.N + 1, 2.0)
            w[0] = w[-1] = 1.0
            wu = np.concatenate([np.repeat(w, NU), np.full(self.N * NU, 4.0)]) * self.h / 6.0
            self._res_w = np.sqrt(2.0 * eps * kappa * wu)
            self._res_uidx = np.arange(self.n_states, self.n)
            self._res_midx = self.N * NX + MASS
        su = self._res_w
        rm = np.sqrt(2.0 * (1.0 - eps) * (self._mass_cap + 1.0 - z[self._res_midx]))
        r = np.append(su * z[self._res_uidx], rm)
        nr = len(su)
        J = sp.csr_matrix(
            (np.append(su, -(1.0 - eps) / rm), (np.arange(nr + 1), np.append(self._res_uidx, self._res_midx))),
            shape=(nr + 1, self.n),
        )
        return r, J

    def defects(self, z) -> np.ndarray:
        S, U, Um = self.unpack(z)
        F = self.dynamics(S, U)
        Sm = self.midpoint_states(S, U, F)
        Fm = self.dynamics(Sm, Um)
        D = S[1:] - S[:-1] - self.h / 6.0 * (F[:-1] + 4.0 * Fm + F[1:])
        return D.ravel()

    def tilt(self, z) -> np.ndarray:
        """``cos(phi) cos(theta) - cos(lambda)`` at nodes, then midpoints (>= 0 feasible)."""
        S, U, _ = self.unpack(z)
        Sm = self.midpoint_states(S, U)
        A = np.concatenate([S[:, 6:8], Sm[:, 6:8]])
        return np.cos(A[:, 0]) * np.cos(A[:, 1]) - self._cos_lambda

    def evaluate(self, z) -> Evaluation:
        S, U, Um = self.unpack(z)
        N, h = self.N, self.h
        F, A, B = self.dynamics_jac(S, U)
        Sm = 0.5 * (S[:-1] + S[1:]) + h / 8.0 * (F[:-1] - F[1:])
        Fm, Am, Bm = self.dynamics_jac(Sm, Um)
        D = S[1:] - S[:-1] - h / 6.0 * (F[:-1] + 4.0 * Fm + F[1:])

        eye = np.eye(NX)
        # d Sm / d (S_k, S_k+1, U_k, U_k+1)
        dSm_dSk = 0.5 * eye + h / 8.0 * A[:-1]
        dSm_dSk1 = 0.5 * eye - h / 8.0 * A[1:]
        dSm_dUk = h / 8.0 * B[:-1]
        dSm_dUk1 = -h / 8.0 * B[1:]

        AmS = lambda M: np.einsum("kij,kjl->kil", Am, M)  # noqa: E731
        dD_dSk = -eye - h / 6.0 * (A[:-1] + 4.0 * AmS(dSm_dSk))
        dD_dSk1 = eye - h / 6.0 * (A[1:] + 4.0 * AmS(dSm_dSk1))
        dD_dUk = -h / 6.0 * (B[:-1] + 4.0 * AmS(dSm_dUk))
        dD_dUk1 = -h / 6.0 * (B[1:] + 4.0 * AmS(dSm_dUk1))
        dD_dUm = -h / 6.0 * 4.0 * Bm
        blocks = np.concatenate([dD_dSk, dD_dSk1, dD_dUk, dD_dUk1, dD_dUm], axis=2)  # (N, NX, 38)
        jac_c = sp.csr_matrix((blocks.ravel(), (self._c_rows, self._c_cols)), shape=(self.n_defects, self.n))

        # tilt at nodes and midpoints
        ang = np.concatenate([S[:, 6:8], Sm[:, 6:8]])
        cphi, sphi = np.cos(ang[:, 0]), np.sin(ang[:, 0])
        cth, sth = np.cos(ang[:, 1]), np.sin(ang[:, 1])
        g = cphi * cth - self._cos_lambda
        dg = np.stack([-sphi * cth, -cphi * sth], axis=1)  # d g / d(phi, theta)
        g_rows, g_cols, g_vals = [], [], []
        nodes = np.arange(N + 1)
        for j in (0, 1):
            g_rows.append(nodes)
            g_cols.append(nodes * NX + 6 + j)
            g_vals.append(dg[: N + 1, j])
        dgm = dg[N + 1 :]  # (N, 2)
        mid_rows = N + 1 + np.arange(N)
        for blk, idx in (
            (dSm_dSk, lambda k: self._sidx(k)),
            (dSm_dSk1, lambda k: self._sidx(k + 1)),
            (dSm_dUk, lambda k: self._uidx(k)),
            (dSm_dUk1, lambda k: self._uidx(k + 1)),
        ):
            vals = np.einsum("kj,kjl->kl", dgm, blk[:, 6:8, :])
            cols = np.stack([idx(k) for k in range(N)])
            g_rows.append(np.repeat(mid_rows, vals.shape[1]))
            g_cols.append(cols.ravel())
            g_vals.append(vals.ravel())
        jac_g = sp.csr_matrix(
            (np.concatenate(g_vals), (np.concatenate(g_rows), np.concatenate(g_cols))),
            shape=(self.n_tilt, self.n),
        )
        return Evaluation(
            f=self.objective(z),
            grad_f=self.objective_grad(z),
            c=D.ravel(),
            jac_c=jac_c,
            g=g,
            jac_g=jac_g,
        )

    # -- conversions ----------------------------------------------------------
    def initial_guess(self) -> np.ndarray:
        """Straight-line states, hover-trim main throttle, zero attitude throttles."""
        N = self.N
        s0 = self.spec.x0.as_vector() / self.sv
        sf = self.spec.xf.as_vector() / self.sv
        tau = np.linspace(0.0, 1.0, N + 1)[:, None]
        S = (1 - tau) * s0 + tau * sf
        p = self.spec.params
        u_hover = min(p.hover_throttle(self.spec.x0.m) * self.spec.x0.m / p.m0, 1.0)
        mdot = p.F_a_max * u_hover / (p.Isp * p.g0)
        m0 = self.spec.x0.m
        S[:, MASS] = np.maximum(m0 - mdot * self.spec.tf * tau[:, 0], 0.1 * m0) / self.scaling.mass
        S[:, 6:12] = (1 - tau) * s0[6:12] + tau * sf[6:12]
        U = np.zeros((N + 1, NU))
        U[:, 0] = u_hover
        Um = np.zeros((N, NU))
        Um[:, 0] = u_hover
        return np.clip(self.pack(S, U, Um), self.lower, self.upper)

    def from_trajectory(self, traj: OptimalTrajectory) -> np.ndarray:
        """Decision vector from a (possibly differently scaled) trajectory on the same grid size."""
        if traj.N != self.N:
            raise ValueError(f"trajectory has N={traj.N}, problem has N={self.N}")
        S = traj.states / self.sv
        return np.clip(self.pack(S, traj.controls, traj.midpoint_controls()), self.lower, self.upper)

    def to_trajectory(self, z, diagnostics=None) -> OptimalTrajectory:
        S, U, Um = self.unpack(z)
        times = np.linspace(0.0, self.spec.tf, self.N + 1)
        T, M = self.scaling.time, self.scaling.mass
        return OptimalTrajectory(
            times=times,
            states=S * self.sv,
            controls=U.copy(),
            mid_controls=Um.copy(),
            objective=self.objective(z) * M,
            diagnostics=dict(diagnostics or {}),
            spec=self.spec,
        )


def transcribe(spec: OcpSpec) -> HermiteSimpsonNLP:
    return HermiteSimpsonNLP(spec)
