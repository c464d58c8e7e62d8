"""Unconditional moments and the feedback-closed loop.

Two sources make up the ensemble (unconditional) covariance: the conditional
covariance, and the stationary spread of the filter estimate that the
measurement noise keeps driving.  With feedback, the joint process of
estimate and classical truth is an Ornstein-Uhlenbeck process

    dY = -S Y dt + T dW,

whose stationary covariance solves ``S Xi + Xi S^T = T C_w T^T``.  ``C_w``
is the correlation of the noise inputs: the estimate rows share the single
innovation increment.  Internally everything is turned into the Hurwitz
form ``A X + X A^T = -Q`` with ``A = -S`` and ``Q`` the diffusion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditional import CovarianceMatrix, SMECoefficients, sme_coefficients, solve_care
from .linmodel import ModelConfig, Tag
from .params import DerivedParams

STATE_ORDER = ("Xbar+", "Pbar-", "Xbar-", "Pbar+", "x+", "p-", "x-", "p+")
REDUCED_ORDER = ("Xbar+", "Pbar-", "x+", "p-")


class StabilityError(ValueError):
    """The drift matrix is not Hurwitz."""


def spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def solve_lyapunov(A: np.ndarray, RHS: np.ndarray, *, tol: float = 1e-11) -> np.ndarray:
    """Solve ``A X + X A^T = -RHS`` for Hurwitz ``A``.

    Uses the dense Kronecker form ``(I (x) A + A (x) I) vec X = -vec RHS``.
    """
    A = np.asarray(A, dtype=float)
    RHS = np.asarray(RHS, dtype=float)
    if spectral_abscissa(A) >= 0:
        raise StabilityError(f"drift not Hurwitz (abscissa {spectral_abscissa(A):.3g})")
    n = A.shape[0]
    I = np.eye(n)
    op = np.kron(I, A) + np.kron(A, I)
    X = np.linalg.solve(op, -RHS.reshape(-1, order="F")).reshape((n, n), order="F")
    X = 0.5 * (X + X.T)
    res = np.abs(A @ X + X @ A.T + RHS).sum(axis=1).max()
    scale = max(1.0, np.abs(X).sum(axis=1).max(), np.abs(RHS).sum(axis=1).max())
    if res > tol * scale * max(1.0, np.abs(A).sum(axis=1).max()):
        raise StabilityError(f"Lyapunov residual {res:.3e} too large")
    return X


def measurement_noise_weight(c: SMECoefficients, Sigma: np.ndarray) -> np.ndarray:
    """``Q = sqrt(4 eta Gamma) Sigma[:, 0]``: how one innovation moves each estimate."""
    return math.sqrt(4.0 * c.eta * c.Gamma) * np.asarray(Sigma)[:, 0]


def estimate_fluctuations(c: SMECoefficients, Sigma) -> np.ndarray:
    """Stationary second moments of the best estimates (no feedback)."""
    S = Sigma.Sigma if isinstance(Sigma, CovarianceMatrix) else np.asarray(Sigma)
    Q = measurement_noise_weight(c, S)
    if not np.any(Q):
        return np.zeros((4, 4))
    return solve_lyapunov(c.M, np.outer(Q, Q))


def unconditional_covariance(c: SMECoefficients) -> np.ndarray:
    """Open-loop ensemble covariance ``M X + X M^T + L = 0``."""
    return solve_lyapunov(c.M, c.L)


@dataclass(frozen=True)
class VarianceReport:
    conditional: np.ndarray
    estimate: np.ndarray
    direct: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.conditional + self.estimate

    def summary(self) -> dict:
        out = {}
        for i, name in enumerate(("Xp", "Pm", "Xm", "Pp")):
            out[f"V_{name}"] = float(self.conditional[i, i])
            out[f"est_{name}"] = float(self.estimate[i, i])
            out[f"tot_{name}"] = float(self.total[i, i])
        return out


def total_variance(dp: DerivedParams, config: ModelConfig | None = None) -> VarianceReport:
    """Conditional plus estimate spread, alongside the direct open-loop solution."""
    c = sme_coefficients(dp, config)
    cov = solve_care(c)
    est = estimate_fluctuations(c, cov)
    return VarianceReport(cov.Sigma, est, unconditional_covariance(c))


def small_asymmetry_estimate_closed_form(dp: DerivedParams, V: float) -> tuple[float, float]:
    """Estimate spread of ``X+`` and ``P-`` for small uncompensated asymmetries."""
    p, d, eta, C = dp.p, dp.d, dp.eta, dp.C
    den = (1 + p * p) * (1 - d * d + p * p)
    base = 2 * eta * C * V * V
    return (base * ((1 + p * p) * (1 + d * p) - d * d / 2) / den,
            base * (1 + p * p - d * d / 2) / den)


# ---------------------------------------------------------------------------
# feedback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoopModel:
    """Joint estimate/truth process ``dY = -S Y dt + T dW``.

    ``noise_corr`` is the correlation matrix of ``dW``; the diffusion is
    ``T noise_corr T^T``.
    """

    S: np.ndarray
    T: np.ndarray
    noise_corr: np.ndarray
    alpha: float
    order: tuple
    x_only: bool

    @property
    def drift(self) -> np.ndarray:
        return -self.S

    @property
    def diffusion(self) -> np.ndarray:
        return self.T @ self.noise_corr @ self.T.T

    @property
    def truth_slice(self) -> slice:
        n = len(self.order) // 2
        return slice(n, 2 * n)


def _feedback_gain(alpha: float, gamma: float, n: int, x_only: bool) -> np.ndarray:
    F = np.zeros((n, n))
    F[0, 0] = alpha * gamma / 2
    if not x_only:
        F[1, 1] = alpha * gamma / 2
    return F


def feedback_model(dp: DerivedParams, Sigma, alpha: float, *, config: ModelConfig | None = None,
                   x_only: bool | None = None, reduced: bool | None = None) -> ClosedLoopModel:
    """Closed-loop drift and noise weights for feedback gain ``alpha``.

    The feedback removes ``(alpha gamma / 2)`` times the estimate from the
    truth of the measured pair.  By default both ``X+`` and ``P-`` estimates
    are fed back in the general model.  The symmetric configuration gives
    the reduced four-dimensional model over ``(Xbar+, Pbar-, x+, p-)``; there
    the ``X+`` estimate alone is fed back unless ``x_only=False``.
    """
    if alpha < 0:
        raise ValueError("feedback gain must be non-negative")
    c = sme_coefficients(dp, config)
    S = Sigma.Sigma if isinstance(Sigma, CovarianceMatrix) else np.asarray(Sigma)
    if reduced is None:
        reduced = c.model.config.tag is Tag.SYMMETRIC
    if x_only is None:
        x_only = bool(reduced)
    g, k = dp.gamma, 4.0 * c.eta * c.Gamma
    Q = measurement_noise_weight(c, S)
    if reduced:
        if c.model.config.tag is not Tag.SYMMETRIC:
            raise ValueError("reduced closed loop needs the symmetric configuration")
        M = c.M[:2, :2]
        n, Q, L = 2, Q[:2], c.L[:2, :2]
        order = REDUCED_ORDER
    else:
        M, n, L, order = c.M, 4, c.L, STATE_ORDER
    F = _feedback_gain(alpha, g, n, x_only)
    Q1 = np.zeros((n, n))
    Q1[:, 0] = math.sqrt(k) * Q
    A = np.block([[M - F - Q1, Q1], [-F, M]])

    # noise weights: shared innovation on the estimate rows, baths on the truth rows
    T = np.zeros((2 * n, 2 * n))
    T[:n, :n] = np.diag(Q)
    corr = np.zeros((2 * n, 2 * n))
    corr[:n, :n] = 1.0
    if np.allclose(L, np.diag(np.diag(L))) and np.all(np.diag(L) >= 0):
        T[n:, n:] = np.diag(np.sqrt(np.diag(L)))
        corr[n:, n:] = np.eye(n)
    else:
        # correlated bath noise: weight by a square root of L
        w, U = np.linalg.eigh(L)
        T[n:, n:] = U @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ U.T
        corr[n:, n:] = np.eye(n)
    return ClosedLoopModel(-A, T, corr, float(alpha), order, bool(x_only))


def closedloop_covariance(model: ClosedLoopModel) -> np.ndarray:
    """Stationary ``Xi`` with ``S Xi + Xi S^T = T C_w T^T``."""
    return solve_lyapunov(model.drift, model.diffusion)


def feedback_variances(dp: DerivedParams, alphas, *, config: ModelConfig | None = None,
                       x_only: bool | None = None, reduced: bool | None = None) -> list[dict]:
    """``V_fb`` of the measured pair over a list of gains."""
    c = sme_coefficients(dp, config)
    cov = solve_care(c)
    rows = []
    for a in alphas:
        cl = feedback_model(dp, cov, a, config=config, x_only=x_only, reduced=reduced)
        Xi = closedloop_covariance(cl)
        t0 = cl.truth_slice.start
        rows.append({"alpha": float(a), "V_fb_Xp": float(Xi[t0, t0]),
                     "V_fb_Pm": float(Xi[t0 + 1, t0 + 1]),
                     "V_cond_Xp": cov["V_Xp"], "V_cond_Pm": cov["V_Pm"]})
    return rows


def feedback_excess_first_order(dp: DerivedParams, V: float, alpha: float) -> float:
    """First-order value of ``V_fb - V`` in ``1/(1 + alpha)``."""
    return 4.0 * dp.eta * dp.C * V * V / (1.0 + alpha)


def feedback_force_profile(dp: DerivedParams, alpha: float, estimates, t, *,
                           omega_m: float = 0.0, x_only: bool = False):
    """Lab-frame forces ``(F_a, F_b)`` realising the rotating-frame feedback.

    ``estimates`` holds ``(Xbar+, Pbar-)`` samples (or constants), ``t`` the lab
    times and ``omega_m`` the mean mechanical frequency.
    """
    X, P = np.asarray(estimates[0], dtype=float), np.asarray(estimates[1], dtype=float)
    if x_only:
        P = np.zeros_like(P)
    t = np.asarray(t, dtype=float)
    c, s = math.cos(dp.theta), math.sin(dp.theta)
    sn, cs = np.sin(omega_m * t), np.cos(omega_m * t)
    amp = alpha * dp.gamma / math.sqrt(2.0)
    F_a = amp * ((c - s) * X * sn + (c + s) * P * cs)
    F_b = amp * ((c + s) * X * sn + (c - s) * P * cs)
    return F_a, F_b
