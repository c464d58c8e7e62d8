"""Monte Carlo simulation of the monitored system and its filter.

Each trajectory evolves the classical stand-in for the mechanical
quadratures (``truth``), the steady-state Kalman-Bucy estimate driven by a
synthetic homodyne record, and a fixed exponential demodulating filter of
the same record (``kernel``).  Integration is a first-order stochastic
scheme on the joint linear system, with exact drift propagation per step by
default.  Every trajectory draws from its own Philox stream keyed by
``(seed, index)``, so results do not depend on how the ensemble is split.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .closedloop import feedback_model, solve_lyapunov
from .conditional import CovarianceMatrix, sme_coefficients, solve_care
from .linmodel import ModelConfig
from .params import DerivedParams
from .spectra import AccuracyError, params_hash


class PreconditionError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


def max_timestep(dp: DerivedParams, V: float, safety: float = 50.0) -> float:
    """Largest admissible Euler-Maruyama step."""
    rates = [abs(dp.Omega_tilde), dp.gamma * (1.0 + dp.C_tilde), 4.0 * dp.eta * dp.Gamma * V]
    return 1.0 / max(r for r in rates if r > 0) / safety


def filter_bandwidth(dp: DerivedParams, V: float) -> float:
    """``gamma_tilde = gamma + 4 eta Gamma V``."""
    return dp.gamma + 4.0 * dp.eta * dp.Gamma * V


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


@dataclass
class AugmentedSystem:
    """Linear SDE ``dY = A Y dt + B dxi`` over (estimate | truth | kernel)."""

    A: np.ndarray
    B: np.ndarray
    n: int
    k: float  # 4 eta Gamma
    order: tuple

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def truth(self) -> slice:
        return slice(self.n, 2 * self.n)

    @property
    def kernel(self) -> slice:
        return slice(2 * self.n, 2 * self.n + 2)


def augmented_system(dp: DerivedParams, cov: CovarianceMatrix, alpha: float = 0.0, *,
                     config: ModelConfig | None = None, x_only: bool | None = None,
                     kernel_decay: float | None = None) -> AugmentedSystem:
    """Closed-loop model plus the record-demodulating kernel filter.

    The kernel filter rotates at the estimate's rotation frequency and decays
    at ``kernel_decay`` (default ``gamma_tilde / 2``); it is driven by the
    record with gain ``4 eta Gamma V_X+`` on the ``X+`` slot.
    """
    cl = feedback_model(dp, cov, alpha, config=config, x_only=x_only)
    c = sme_coefficients(dp, config)
    n = len(cl.order) // 2
    k = 4.0 * c.eta * c.Gamma
    V = cov["V_Xp"]
    lam = filter_bandwidth(dp, V) / 2.0 if kernel_decay is None else kernel_decay
    Om = c.M[0, 1]
    dim = 2 * n + 2
    A = np.zeros((dim, dim))
    A[:2 * n, :2 * n] = cl.drift
    A[2 * n:, 2 * n:] = [[-lam, Om], [-Om, -lam]]
    A[2 * n, n] = k * V
    B = np.zeros((dim, 1 + n))
    B[:n, 0] = np.diag(cl.T[:n, :n])
    B[n:2 * n, 1:] = cl.T[n:, n:]
    B[2 * n, 0] = math.sqrt(k) * V
    order = tuple(cl.order) + ("Z1", "Z2")
    return AugmentedSystem(A, B, n, k, order)


@dataclass
class TrajectoryRecord:
    """Ensemble output.

    Series (``truth``, ``estimate``, ``kernel``, ``dr``) are kept for the first
    ``keep`` trajectories only; ensemble statistics cover every trajectory.
    """

    t: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    kernel: np.ndarray
    dr: np.ndarray
    seed: int
    dt: float
    params_hash: str
    order: tuple
    n: int
    #: per-trajectory time-averaged second moments of the augmented state
    moments: np.ndarray = field(repr=False, default=None)
    #: per-trajectory innovation sums: (count, sum, sum of squares, lag-1 sum)
    innovation: np.ndarray = field(repr=False, default=None)
    duration: float = 0.0
    gamma_tilde: float = 1.0
    V: float = 0.0
    theory: np.ndarray = field(repr=False, default=None)


def simulate(dp: DerivedParams, cov: CovarianceMatrix | None = None, *, duration: float | None = None,
             dt: float | None = None, seed: int = 0, alpha: float = 0.0, n_traj: int = 1000,
             config: ModelConfig | None = None, x_only: bool | None = None,
             noise: bool = True, y0=None, keep: int = 4, store_every: int = 10,
             stat_every: int = 5, block: int = 2000,
             kernel_decay: float | None = None, scheme: str = "exponential") -> TrajectoryRecord:
    """Euler-Maruyama ensemble of the estimate/truth/kernel system.

    Parameters
    ----------
    duration
        Simulated time; defaults to ``200 / gamma_tilde``.
    dt
        Step size, at most :func:`max_timestep` (the default).
    noise
        ``False`` switches all increments off (deterministic flow).
    y0
        Initial augmented state for every trajectory; by default each
        trajectory starts from a draw of the stationary distribution.
    scheme
        ``"exponential"`` propagates the drift exactly over each step and adds
        the increment ``B dW`` (weak order 1, no artificial growth of the fast
        rotation); ``"euler"`` is the plain ``I + A dt`` update.
    """
    if cov is None:
        cov = solve_care(sme_coefficients(dp, config))
    V = cov["V_Xp"]
    dt_max = max_timestep(dp, V)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise PreconditionError(f"dt={dt:.3g} exceeds the stability bound {dt_max:.3g}")
    gt = filter_bandwidth(dp, V)
    if duration is None:
        duration = 200.0 / gt
    n_steps = int(round(duration / dt))
    if n_steps < 1:
        raise PreconditionError("duration shorter than one step")
    sysm = augmented_system(dp, cov, alpha, config=config, x_only=x_only, kernel_decay=kernel_decay)
    dim, n, k = sysm.dim, sysm.n, sysm.k
    stat_cov = solve_lyapunov(sysm.A, sysm.B @ sysm.B.T)

    gens = [trajectory_rng(seed, i) for i in range(n_traj)]
    if y0 is not None:
        Y = np.tile(np.asarray(y0, dtype=float), (n_traj, 1))
    else:
        w, U = np.linalg.eigh(stat_cov)
        root = U * np.sqrt(np.clip(w, 0.0, None))
        Y = np.stack([root @ g.standard_normal(dim) for g in gens])

    if scheme == "exponential":
        step = expm(sysm.A * dt)
    elif scheme == "euler":
        step = np.eye(dim) + sysm.A * dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    stepT = step.T
    BT = (sysm.B * math.sqrt(dt)).T
    sk = math.sqrt(k)
    # innovation variance of one step: dt (1 + k V dt)
    innov_scale = 1.0 / math.sqrt(dt * (1.0 + k * V * dt)) if k > 0 else 0.0

    keep = min(keep, n_traj)
    n_store = n_steps // store_every + 1
    stored = np.empty((keep, n_store, dim))
    dr_keep = np.empty((keep, n_steps))
    stored[:, 0] = Y[:keep]
    moments = np.zeros((n_traj, dim, dim))
    n_stat = 0
    innov = np.zeros((n_traj, 4))
    prev_nu = None

    s = 0
    while s < n_steps:
        nb = min(block, n_steps - s)
        if noise:
            xi = np.stack([g.standard_normal((nb, 1 + n)) for g in gens], axis=0)
        else:
            xi = np.zeros((n_traj, nb, 1 + n))
        for j in range(nb):
            e = xi[:, j]
            dW = e[:, 0] * math.sqrt(dt)
            dr = Y[:, n] * dt + (dW / sk if k > 0 else 0.0)
            if k > 0:
                nu = (sk * (dr - Y[:, 0] * dt)) * innov_scale
                innov[:, 0] += 1
                innov[:, 1] += nu
                innov[:, 2] += nu * nu
                if prev_nu is not None:
                    innov[:, 3] += nu * prev_nu
                prev_nu = nu
            dr_keep[:, s + j] = dr[:keep]
            Y = Y @ stepT + e @ BT
            idx = s + j + 1
            if idx % stat_every == 0:
                moments += Y[:, :, None] * Y[:, None, :]
                n_stat += 1
            if idx % store_every == 0:
                stored[:, idx // store_every] = Y[:keep]
        if not np.all(np.isfinite(Y)):
            raise SimulationError(f"non-finite state by step {s + nb}")
        s += nb

    moments /= max(n_stat, 1)
    t = np.arange(n_store) * store_every * dt
    return TrajectoryRecord(
        t=t, truth=stored[:, :, n:2 * n], estimate=stored[:, :, :n],
        kernel=stored[:, :, 2 * n:], dr=dr_keep, seed=seed, dt=dt,
        params_hash=params_hash(dp), order=sysm.order, n=n, moments=moments,
        innovation=innov, duration=n_steps * dt, gamma_tilde=gt, V=V, theory=stat_cov,
    )


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def _mean_se(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty ensemble")
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]) if x.shape[0] > 1 else np.zeros_like(m)
    return m, se


def _error_variances(rec: TrajectoryRecord, est: slice) -> np.ndarray:
    """Per-trajectory time-averaged ``(truth - estimate)^2`` for X+ and P-."""
    n = rec.n
    out = []
    for q in (0, 1):
        i, j = n + q, est.start + q
        m = rec.moments
        out.append(m[:, i, i] - 2 * m[:, i, j] + m[:, j, j])
    return np.stack(out, axis=1)


def ensemble_stats(rec: TrajectoryRecord) -> dict:
    """Means and standard errors of the main second moments over the ensemble."""
    if rec.moments is None or rec.moments.shape[0] == 0:
        raise ValueError("empty ensemble")
    n = rec.n
    diag = np.einsum("tii->ti", rec.moments)
    m, se = _mean_se(diag)
    err = _error_variances(rec, slice(0, n))
    em, ese = _mean_se(err)
    cnt, s1, s2, s11 = (rec.innovation[:, i].sum() for i in range(4))
    out = {
        "order": list(rec.order),
        "second_moments": m.tolist(),
        "second_moments_se": se.tolist(),
        "theory": np.diag(rec.theory).tolist(),
        "filter_error": em.tolist(),
        "filter_error_se": ese.tolist(),
        "n_traj": int(rec.moments.shape[0]),
        "dt": rec.dt,
        "duration": rec.duration,
        "seed": rec.seed,
        "params_hash": rec.params_hash,
    }
    if cnt > 0:
        mean = s1 / cnt
        var = s2 / cnt - mean * mean
        n_pairs = cnt - rec.innovation.shape[0]
        lag1 = (s11 / n_pairs - mean * mean) / var if n_pairs > 0 else float("nan")
        out["innovation"] = {"count": int(cnt), "mean": float(mean), "variance": float(var),
                             "variance_se": float(math.sqrt(2.0 / cnt)),
                             "lag1": float(lag1), "lag1_bound": float(3.0 / math.sqrt(n_pairs))}
    return out


def kernel_filter(dr: np.ndarray, dt: float, Omega: float, decay: float, gain: float,
                  z0=None) -> np.ndarray:
    """Apply the exponentially weighted sin/cos demodulator to raw record increments.

    Returns the filter state after every increment (shape ``(..., len, 2)``).
    """
    dr = np.atleast_2d(dr)
    K = np.array([[-decay, Omega], [-Omega, -decay]])
    step = expm(K * dt).T
    z = np.zeros((dr.shape[0], 2)) if z0 is None else np.array(z0, dtype=float)
    out = np.empty(dr.shape + (2,))
    for i in range(dr.shape[1]):
        z = z @ step
        z[:, 0] += gain * dr[:, i]
        out[:, i] = z
    return out


def record_duan_estimate(rec: TrajectoryRecord, *, min_bandwidths: float = 20.0) -> dict:
    """Duan statistic from the record-demodulated estimates.

    Uses the kernel-filter estimates carried along in the simulation and
    their error variances against the truth, averaged over time and the
    ensemble.
    """
    if rec.duration * rec.gamma_tilde < min_bandwidths:
        raise AccuracyError("record too short compared with the filter memory")
    err = _error_variances(rec, slice(2 * rec.n, 2 * rec.n + 2))
    tot = err.sum(axis=1)
    m, se = _mean_se(tot)
    parts, _ = _mean_se(err)
    return {"duan": float(m), "se": float(se), "V_Xp": float(parts[0]), "V_Pm": float(parts[1])}


def kernel_error_theory(rec: TrajectoryRecord) -> float:
    """Stationary kernel-estimate Duan statistic from the Lyapunov solution."""
    n, X = rec.n, rec.theory
    tot = 0.0
    for q in (0, 1):
        i, j = n + q, 2 * n + q
        tot += X[i, i] - 2 * X[i, j] + X[j, j]
    return float(tot)
