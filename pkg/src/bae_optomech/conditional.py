"""Conditional (filtered) second moments under continuous homodyne monitoring.

After the cavity is eliminated, the stationary conditional covariance of
``(X+, P-, X-, P+)`` solves

    M S + S M^T + L - S K^T K S = 0,

with ``K`` reading out ``X+`` at rate ``4 eta Gamma``.  ``L`` holds the
mechanical diffusion plus the measurement back-action ``Gamma (2 n_c + 1)``
on ``P+`` that the measured quadrature's conjugate picks up.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .linmodel import LinearModel, ModelConfig, Tag, build, rotation_matrix
from .params import DerivedParams

#: slot names for the ten independent covariance entries
SIGMA_NAMES = {
    "V_Xp": (0, 0), "S_pm": (0, 1), "S_XX": (0, 2), "S_pp": (0, 3),
    "V_Pm": (1, 1), "S_mm": (1, 2), "S_PP": (1, 3),
    "V_Xm": (2, 2), "S_mp": (2, 3), "V_Pp": (3, 3),
}

#: collective (X+, P-, X-, P+) -> individual (Xa, Pa, Xb, Pb)
_TO_MODES = np.array(
    [[1.0, 0.0, 1.0, 0.0],
     [0.0, 1.0, 0.0, 1.0],
     [1.0, 0.0, -1.0, 0.0],
     [0.0, -1.0, 0.0, 1.0]]
) / math.sqrt(2.0)

_OMEGA2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
SYMPLECTIC_FORM = np.kron(np.eye(2), _OMEGA2)


class ConvergenceError(RuntimeError):
    """The Riccati iteration did not reach the residual target."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class UnsupportedCaseError(ValueError):
    pass


class PhysicalityError(ValueError):
    """Covariance matrix violates the uncertainty principle."""


@dataclass(frozen=True)
class SMECoefficients:
    M: np.ndarray
    K: np.ndarray
    L: np.ndarray
    Gamma: float
    eta: float
    model: LinearModel | None = None


@dataclass(frozen=True)
class CovarianceMatrix:
    Sigma: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def __getitem__(self, name: str) -> float:
        return float(self.Sigma[SIGMA_NAMES[name]])

    def as_dict(self) -> dict:
        return {k: self[k] for k in SIGMA_NAMES}

    def heisenberg_products(self) -> tuple[float, float]:
        S = self.Sigma
        return float(S[0, 0] * S[3, 3]), float(S[2, 2] * S[1, 1])


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

def effective_occupations(dp: DerivedParams) -> tuple[float, float]:
    """``(n'_eq, n'_d)`` entering the mechanical diffusion."""
    nth, nd, d = dp.nbar_th, dp.nbar_d, dp.d
    return nth + 0.5 + d * nd, nd + d * (nth + 0.5)


def sme_coefficients(dp: DerivedParams, config: ModelConfig | None = None, *,
                     include_backaction: bool = True) -> SMECoefficients:
    """Drift, readout row and diffusion of the conditional moment equations.

    ``include_backaction=False`` drops the ``P+`` heating term, leaving the
    purely mechanical diffusion.
    """
    model = build(dp, config)
    if dp.kappa <= max(dp.Omega, abs(dp.p) * dp.Omega_tilde, dp.G_tilde):
        warnings.warn("cavity not fast enough for adiabatic elimination", RuntimeWarning,
                      stacklevel=2)
    n_eq, n_d = effective_occupations(dp)
    L = dp.gamma * (n_eq * np.eye(4) + n_d * model.exchange)
    Gamma = dp.Gamma
    if include_backaction:
        L[3, 3] += Gamma * (2.0 * dp.nbar_c + 1.0)
    K = np.zeros((1, 4))
    K[0, 0] = math.sqrt(4.0 * dp.eta * Gamma)
    return SMECoefficients(model.M, K, L, Gamma, dp.eta, model)


# ---------------------------------------------------------------------------
# linear-algebra kernels
# ---------------------------------------------------------------------------

def _lyap(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A X + X A^T + Q = 0`` by a dense Kronecker solve."""
    n = A.shape[0]
    I = np.eye(n)
    op = np.kron(I, A) + np.kron(A, I)
    X = np.linalg.solve(op, -Q.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (X + X.T)


def riccati_rhs(c: SMECoefficients, S: np.ndarray) -> np.ndarray:
    KS = c.K @ S
    return c.M @ S + S @ c.M.T + c.L - KS.T @ KS


def care_residual(c: SMECoefficients, S: np.ndarray) -> float:
    return float(np.abs(riccati_rhs(c, S)).sum(axis=1).max())


def riccati_flow(c: SMECoefficients, S0: np.ndarray, t_span, t_eval=None,
                 rtol: float = 1e-10, atol: float = 1e-12):
    """Integrate the Riccati ODE (adaptive RK45) for transients."""
    def f(_t, y):
        S = y.reshape(4, 4)
        S = 0.5 * (S + S.T)
        return riccati_rhs(c, S).ravel()

    sol = solve_ivp(f, t_span, np.asarray(S0, dtype=float).ravel(), method="RK45",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise ConvergenceError(f"Riccati flow failed: {sol.message}")
    return sol.t, sol.y.T.reshape(-1, 4, 4)


def solve_care(c: SMECoefficients, *, tol: float = 1e-10, max_iter: int = 200,
               S0: np.ndarray | None = None) -> CovarianceMatrix:
    """Stationary conditional covariance by Newton (Kleinman) iteration.

    Each step solves the Lyapunov equation of the closed-loop filter drift
    ``M - S_k K^T K``.  Starting from ``S0 = 0`` (``M`` is stable) the iterates
    decrease monotonically to the stabilising solution.
    """
    if np.max(np.linalg.eigvals(c.M).real) >= 0:
        raise ConvergenceError("drift matrix is not stable")
    S = np.zeros((4, 4)) if S0 is None else np.array(S0, dtype=float)
    KtK = c.K.T @ c.K
    res = prev_step = math.inf
    for it in range(1, max_iter + 1):
        A = c.M - S @ KtK
        S_new = _lyap(A, c.L + S @ KtK @ S)
        step = float(np.abs(S_new - S).max())
        S = S_new
        res = care_residual(c, S)
        # entries span many decades (C/2 next to 1/sqrt(C)), so also wait for
        # the quadratically shrinking Newton step to reach round-off
        if res <= tol * max(1.0, float(np.abs(S).sum(axis=1).max())) and (
                step <= 1e-13 * max(1.0, float(np.abs(S).max())) or step >= prev_step):
            return CovarianceMatrix(S, res, it)
        prev_step = step
    raise ConvergenceError(f"CARE not converged after {max_iter} iterations "
                           f"(residual {res:.3e})", res)


# ---------------------------------------------------------------------------
# closed forms, symmetric configuration
# ---------------------------------------------------------------------------

def measured_variance_closed_form(Omega, gamma, C, n_tot, eta=1.0) -> float:
    """Stationary conditional variance of the measured quadrature."""
    if C == 0:
        return n_tot
    if Omega == 0:
        return (math.sqrt(4 * eta * C * n_tot + 0.25) - 0.5) / (4 * eta * C)
    g2, w2 = gamma * gamma, 4 * Omega * Omega
    inner = 8 * eta * g2 * C * n_tot + g2 - w2 + math.sqrt(g2 + w2) * math.sqrt(
        g2 + w2 + 16 * eta * g2 * C * n_tot)
    return (math.sqrt(inner) / (math.sqrt(2.0) * gamma) - 1.0) / (4 * eta * C)


def measured_variance_fast_rotation(C, n_tot, eta=1.0) -> float:
    """``Omega >> gamma`` limit of :func:`measured_variance_closed_form`."""
    if C == 0:
        return n_tot
    return (math.sqrt(8 * eta * C * n_tot + 1) - 1) / (4 * eta * C)


def analytic_symmetric(dp: DerivedParams) -> dict:
    """Closed-form conditional moments of the symmetric configuration.

    A compensated configuration with ``d == 0`` is accepted and interpreted
    on the rotated observables (``Omega -> Omega_tilde``, ``C -> C_tilde``).
    """
    if dp.d != 0.0 or dp.nbar_d != 0.0:
        raise UnsupportedCaseError("closed forms need d = 0 and n_a = n_b")
    if dp.symmetric:
        Om, C = dp.Omega, dp.C
    else:
        Om, C = dp.Omega_tilde, dp.C_tilde
    g, eta, nt = dp.gamma, dp.eta, dp.nbar_tot
    nc = 2.0 * dp.nbar_c + 1.0
    V = measured_variance_closed_form(Om, g, C, nt, eta)
    Cb = C * nc  # back-action heating
    if Om == 0:
        return {"V_Xp": V, "S_pm": 0.0, "V_Pm": nt, "V_Xm": nt, "V_Pp": nt + Cb, "S_mp": 0.0}
    h = nt - V - 4 * eta * C * V * V
    den = g * g + 4 * Om * Om
    return {
        "V_Xp": V,
        "S_pm": -g / (2 * Om) * h,
        "V_Pm": 2 * nt - V - 4 * eta * C * V * V - eta * C * (g / Om) ** 2 * h * h,
        "V_Xm": nt + Cb * 2 * Om * Om / den,
        "V_Pp": nt + Cb * (g * g + 2 * Om * Om) / den,
        "S_mp": Cb * (g / Om) * Om * Om / den,
    }


def variance_gap_second_order(dp: DerivedParams) -> float:
    """Leading ``(gamma/Omega)^2`` value of ``V_P- - V_X+`` (symmetric)."""
    g, Om, C, eta, nt = dp.gamma, dp.Omega, dp.C, dp.eta, dp.nbar_tot
    r = math.sqrt(8 * eta * C * nt + 1)
    return (g / Om) ** 2 * r * (r - 1) ** 2 / (16 * eta * C)


# ---------------------------------------------------------------------------
# entanglement
# ---------------------------------------------------------------------------

def duan(cov, theta: float = 0.0) -> tuple[float, bool]:
    """``V_X+ + V_P-`` and whether it is below ``cos 2 theta``."""
    S = cov.Sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    value = float(S[0, 0] + S[1, 1])
    return value, value < math.cos(2.0 * theta)


def mode_covariance(cov, theta: float = 0.0) -> np.ndarray:
    """Covariance in the individual-mode basis ``(Xa, Pa, Xb, Pb)``."""
    S = cov.Sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    R = rotation_matrix(theta)
    T = _TO_MODES @ R.T
    return T @ S @ T.T


def symplectic_eigenvalues(sigma: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(1j * SYMPLECTIC_FORM @ sigma)
    return np.sort(np.abs(ev.real))[::2]


def log_negativity(cov, theta: float = 0.0, *, tol: float = 1e-9) -> float:
    """Logarithmic negativity (base 2) with vacuum variance 1/2."""
    sigma = mode_covariance(cov, theta)
    if symplectic_eigenvalues(sigma).min() < 0.5 * (1.0 - tol):
        raise PhysicalityError("covariance violates the uncertainty principle")
    flip = np.diag([1.0, 1.0, 1.0, -1.0])
    nu = symplectic_eigenvalues(flip @ sigma @ flip).min()
    if 2.0 * nu >= 1.0 - 1e-12:
        return 0.0
    return -math.log2(2.0 * nu)


def log_negativity_asymptotic(C, nbar_th, eta=1.0) -> float:
    """Large-cooperativity value ``1/2 (log2[eta C / (n_th + 1/2)] - 1)``."""
    if C <= entanglement_threshold(nbar_th, eta):
        return 0.0
    return 0.5 * (math.log2(eta * C / (nbar_th + 0.5)) - 1.0)


def entanglement_threshold(nbar_th: float, eta: float = 1.0) -> float:
    """Cooperativity above which the Duan criterion is met."""
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    return 2.0 * (nbar_th + 0.5) / eta


def conditional_state(dp: DerivedParams, config: ModelConfig | None = None) -> CovarianceMatrix:
    """Convenience wrapper: coefficients then CARE."""
    return solve_care(sme_coefficients(dp, config))


__all__ = [
    "SMECoefficients", "CovarianceMatrix", "ConvergenceError", "UnsupportedCaseError",
    "PhysicalityError", "sme_coefficients", "solve_care", "riccati_flow", "care_residual",
    "analytic_symmetric", "duan", "log_negativity", "entanglement_threshold",
    "effective_occupations", "measured_variance_closed_form", "mode_covariance",
    "symplectic_eigenvalues", "log_negativity_asymptotic", "conditional_state",
    "variance_gap_second_order", "measured_variance_fast_rotation", "Tag",
]
