"""Linear drift/noise models of the two-oscillator system.

State ordering is always ``(X+, P-, X-, P+)`` (rotated quadratures for the
asymmetric configurations).  The measured pair is ``(X+, P-)``; the cavity
back-action drives ``P+`` only.

Two treatments of the dissipative part are available for the rotated
asymmetric models:

``"exchange"`` (default)
    damping and noise-weight matrices keep the unrotated ``X+ <-> X-`` /
    ``P- <-> P+`` exchange structure.  This is the form from which the known
    closed-form asymmetry results follow (matched-asymmetry cancellation and
    the auxiliary-noise formulas).
``"exact"``
    the dissipative part is the full quadrature rotation of the
    original-basis damping, so mapping the model back to the original basis
    is exact.  The two agree whenever ``d == 0`` or ``theta == 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .params import DerivedParams

#: exchange matrix coupling slot 0 <-> 2 and 1 <-> 3
J4 = np.array(
    [[0.0, 0.0, 1.0, 0.0],
     [0.0, 0.0, 0.0, 1.0],
     [1.0, 0.0, 0.0, 0.0],
     [0.0, 1.0, 0.0, 0.0]]
)
#: diagonal generated by rotating J4
_DIAG_ROT = np.diag([-1.0, 1.0, 1.0, -1.0])

BASIS_ORDER = ("X+", "P-", "X-", "P+")


class ConfigurationError(ValueError):
    pass


class Tag(str, Enum):
    SYMMETRIC = "symmetric"
    ORIGINAL = "original"
    COMPENSATED = "compensated"


class Basis(str, Enum):
    ORIGINAL = "original"
    ROTATED = "rotated"


@dataclass(frozen=True)
class ModelConfig:
    tag: Tag = Tag.SYMMETRIC
    basis: Basis = Basis.ROTATED
    damping: str = "exchange"

    def __post_init__(self):
        object.__setattr__(self, "tag", Tag(self.tag))
        object.__setattr__(self, "basis", Basis(self.basis))
        if self.damping not in ("exchange", "exact"):
            raise ConfigurationError(f"unknown damping form {self.damping!r}")


@dataclass(frozen=True)
class LinearModel:
    M: np.ndarray
    N: np.ndarray
    ba: np.ndarray
    theta: float
    gamma: float
    Omega_eff: float
    config: ModelConfig = field(default_factory=ModelConfig)
    basis: Basis = Basis.ROTATED
    d: float = 0.0
    #: matrix carrying the damping-asymmetry coupling (J4 unless "exact")
    exchange: np.ndarray = field(default_factory=lambda: J4.copy())

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(), "N": self.N.tolist(), "ba": self.ba.tolist(),
            "theta": self.theta, "gamma": self.gamma, "Omega_eff": self.Omega_eff,
            "tag": self.config.tag.value, "damping": self.config.damping,
            "basis": self.basis.value, "order": list(BASIS_ORDER),
        }


@dataclass(frozen=True)
class ForceWeight:
    """Real weights of a force ``f`` on the four quadratures.

    Column 0 multiplies ``Re f``, column 1 multiplies ``Im f``.
    """

    v: np.ndarray
    theta: float

    def phasor(self) -> np.ndarray:
        """Complex weight vector for a single positive-frequency component."""
        return 0.5 * (self.v[:, 0] + 1j * self.v[:, 1])


def rotation_matrix(theta: float) -> np.ndarray:
    """Orthogonal map from original to rotated collective quadratures."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [[c, 0.0, -s, 0.0],
         [0.0, c, 0.0, s],
         [s, 0.0, c, 0.0],
         [0.0, -s, 0.0, c]]
    )


def damping_weights(d: float, gamma: float) -> tuple[float, float]:
    """``(gamma_plus, gamma_minus) = sqrt(gamma)(sqrt(1+d) +- sqrt(1-d))/2``."""
    a = math.sqrt(gamma) * (math.sqrt(1.0 + d) + math.sqrt(1.0 - d)) / 2.0
    b = math.sqrt(gamma) * (math.sqrt(1.0 + d) - math.sqrt(1.0 - d)) / 2.0
    return a, b


def exchange_structure(theta: float, dissipation: str) -> np.ndarray:
    """Matrix carrying the damping-asymmetry coupling in the rotated basis."""
    if dissipation == "exchange" or theta == 0.0:
        return J4
    c2, s2 = math.cos(2.0 * theta), math.sin(2.0 * theta)
    return c2 * J4 + s2 * _DIAG_ROT


def _hamiltonian_block(Om: float, cross_up: float, cross_low: float) -> np.ndarray:
    """Conservative part: rotation at ``Om`` in each pair plus cross couplings.

    ``cross_up`` sits at (0,3) and (1,2), ``cross_low`` at (2,1) and (3,0).
    """
    H = np.zeros((4, 4))
    H[0, 1], H[1, 0] = Om, -Om
    H[2, 3], H[3, 2] = Om, -Om
    H[0, 3] = H[1, 2] = cross_up
    H[2, 1] = H[3, 0] = cross_low
    return H


def build(dp: DerivedParams, config: ModelConfig | None = None) -> LinearModel:
    """Construct the drift, noise-weight and back-action inputs.

    Without ``config`` the symmetric tag is used for symmetric parameters and
    the uncompensated rotated model otherwise.
    """
    if config is None:
        config = ModelConfig(Tag.SYMMETRIC if dp.symmetric else Tag.ORIGINAL)
    g, d = dp.gamma, dp.d
    if config.tag is Tag.SYMMETRIC:
        if dp.G_d != 0.0 or d != 0.0:
            raise ConfigurationError("symmetric tag requires p = 0 and d = 0")
        if config.basis is Basis.ORIGINAL:
            return original_basis_model(dp)
        M = _hamiltonian_block(dp.Omega, 0.0, 0.0) - 0.5 * g * np.eye(4)
        N = math.sqrt(g) * np.eye(4)
        ba = np.array([0.0, 0.0, 0.0, -dp.G])
        return LinearModel(M, N, ba, 0.0, g, dp.Omega, config)

    if config.basis is not Basis.ROTATED:
        raise ConfigurationError(
            "asymmetric models are built in the rotated basis; see original_basis_model"
        )
    Ot, pO = dp.Omega_tilde, dp.p * dp.Omega_tilde
    if config.tag is Tag.ORIGINAL:
        H = _hamiltonian_block(Ot, -pO, pO)
    else:
        H = _hamiltonian_block(Ot, -pO + 2.0 * dp.Lambda, pO + 2.0 * dp.Lambda)
    X = exchange_structure(dp.theta, config.damping)
    M = H - 0.5 * g * np.eye(4) - 0.5 * d * g * X
    a, b = damping_weights(d, g)
    N = a * np.eye(4) + b * X
    ba = np.array([0.0, 0.0, 0.0, -dp.G_tilde])
    if config.damping == "exchange" and d != 0.0:
        abscissa = float(np.max(np.linalg.eigvals(M).real))
        if abscissa > -0.5 * g * (1.0 - abs(d)) + 1e-9 * g:
            # the exchange-form damping is not a faithful rotation; with the
            # compensation drive it can destabilise strongly asymmetric systems
            warnings.warn(f"drift loses strict stability (abscissa {abscissa:.3g}); "
                          "use damping='exact' for this parameter range",
                          RuntimeWarning, stacklevel=2)
    return LinearModel(M, N, ba, dp.theta, g, Ot, config, Basis.ROTATED, d, X)


def original_basis_model(dp: DerivedParams) -> LinearModel:
    """Uncompensated model in the unrotated collective basis."""
    g, d, Om = dp.gamma, dp.d, dp.Omega
    M = _hamiltonian_block(Om, 0.0, 0.0) - 0.5 * g * np.eye(4) - 0.5 * d * g * J4
    a, b = damping_weights(d, g)
    N = a * np.eye(4) + b * J4
    ba = np.array([0.0, dp.G_d, 0.0, -dp.G])
    tag = Tag.SYMMETRIC if dp.symmetric else Tag.ORIGINAL
    return LinearModel(M, N, ba, dp.theta, g, Om, ModelConfig(tag, Basis.ORIGINAL),
                       Basis.ORIGINAL, d, J4.copy())


def to_original_basis(model: LinearModel) -> LinearModel:
    """Undo the quadrature rotation (``V_orig = R^T V_rot``)."""
    R = rotation_matrix(model.theta)
    return LinearModel(
        R.T @ model.M @ R, R.T @ model.N @ R, R.T @ model.ba,
        model.theta, model.gamma, model.Omega_eff, model.config, Basis.ORIGINAL,
        model.d, R.T @ model.exchange @ R,
    )


def susceptibility(model: LinearModel, omega) -> np.ndarray:
    """``(M + i omega I)^-1``; vectorised over an array of frequencies."""
    w = np.asarray(omega, dtype=float)
    A = model.M[None, :, :] + 1j * w.reshape(-1)[:, None, None] * np.eye(4)[None]
    try:
        chi = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular M + i omega I (|d| too close to 1?): {exc}")
    return chi.reshape(w.shape + (4, 4))


def thermal_susceptibility(model: LinearModel, omega) -> np.ndarray:
    return susceptibility(model, omega) @ model.N


def force_weight(dp: DerivedParams) -> ForceWeight:
    """Force on oscillator ``a`` expressed on the rotated quadratures."""
    c, s = math.cos(dp.theta), math.sin(dp.theta)
    v = -np.array(
        [[0.0, c - s],
         [c + s, 0.0],
         [0.0, c + s],
         [c - s, 0.0]]
    )
    return ForceWeight(v, dp.theta)


def stability(model: LinearModel) -> float:
    """Spectral abscissa of the drift matrix."""
    return float(np.max(np.linalg.eigvals(model.M).real))
