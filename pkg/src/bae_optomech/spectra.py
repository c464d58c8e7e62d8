"""Symmetrized noise spectra of the measured quadrature ``X+``.

The spectrum of the measured quadrature is the sum of a thermal part (both
mechanical baths, propagated through the susceptibility), a back-action part
(cavity amplitude noise entering through ``P+``) and a flat imprecision
floor.  Values are in units of ``1/gamma`` when the model is built from
normalized parameters (``gamma == 1``).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .linmodel import LinearModel, susceptibility
from .params import DerivedParams


class AccuracyError(ValueError):
    """The frequency grid cannot support the requested accuracy."""


@dataclass
class SpectrumSeries:
    omega: np.ndarray
    th: np.ndarray
    ba: np.ndarray
    imp: np.ndarray
    target: str = "X+"
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.th + self.ba + self.imp

    def rows(self):
        g = self.metadata.get("gamma", 1.0)
        for w, a, b, c, t in zip(self.omega, self.th, self.ba, self.imp, self.total):
            yield (w / g, a * g, b * g, c * g, t * g)


def params_hash(dp: DerivedParams) -> str:
    blob = json.dumps(dp.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# diffusion matrices
# ---------------------------------------------------------------------------

def bath_diffusions(model: LinearModel, nbar_a: float, nbar_b: float):
    """Per-bath diffusion matrices ``(D_a, D_b)`` in the model basis.

    ``D_a + D_b`` equals ``N Xi N^T`` with the input-noise correlation
    ``Xi = n_tot I + n_d X`` (``X`` the model's exchange matrix).
    """
    g_a = model.gamma * (1.0 + model.d)
    g_b = model.gamma * (1.0 - model.d)
    I = np.eye(4)
    D_a = g_a * (nbar_a + 0.5) * 0.5 * (I + model.exchange)
    D_b = g_b * (nbar_b + 0.5) * 0.5 * (I - model.exchange)
    return D_a, D_b


def backaction_diffusion(model: LinearModel, Gamma: float, nbar_c: float = 0.0) -> np.ndarray:
    """White force noise produced by the cavity amplitude fluctuations."""
    G2 = float(model.ba @ model.ba)
    if G2 == 0.0:
        return np.zeros((4, 4))
    u = model.ba / math.sqrt(G2)
    return Gamma * (2.0 * nbar_c + 1.0) * np.outer(u, u)


def _row_quadratic(chi: np.ndarray, D: np.ndarray, row: int = 0) -> np.ndarray:
    r = chi[..., row, :]
    return np.einsum("...i,ij,...j->...", r, D, r.conj()).real


# ---------------------------------------------------------------------------
# spectrum components
# ---------------------------------------------------------------------------

def thermal_spectrum(model: LinearModel, nbar_a: float, nbar_b: float, omega,
                     *, part: str = "total"):
    """Thermal plus zero-point contribution; ``part`` in {total, a, b}."""
    chi = susceptibility(model, omega)
    D_a, D_b = bath_diffusions(model, nbar_a, nbar_b)
    D = {"total": D_a + D_b, "a": D_a, "b": D_b}[part]
    return _row_quadratic(chi, D)


def thermal_spectrum_input_form(model: LinearModel, nbar_a: float, nbar_b: float, omega):
    """Same quantity as :func:`thermal_spectrum` via ``chi N Xi N^T chi^H``."""
    chib = susceptibility(model, omega) @ model.N
    nth, nd = 0.5 * (nbar_a + nbar_b), 0.5 * (nbar_a - nbar_b)
    Xi = (nth + 0.5) * np.eye(4) + nd * model.exchange
    return _row_quadratic(chib, Xi)


def backaction_spectrum(model: LinearModel, C_tilde: float, nbar_c: float, omega):
    """``gamma |chi_{X+,P+}|^2 C_tilde (2 n_c + 1)``."""
    chi = susceptibility(model, omega)
    if not np.any(model.ba):
        return np.zeros(np.shape(omega))
    return model.gamma * np.abs(chi[..., 0, 3]) ** 2 * C_tilde * (2.0 * nbar_c + 1.0)


def imprecision_level(dp: DerivedParams) -> float:
    """Flat detector floor ``(2 n_c + 1) / (8 C_tilde gamma)``."""
    if dp.C_tilde <= 0:
        return math.inf
    return (2.0 * dp.nbar_c + 1.0) / (8.0 * dp.C_tilde * dp.gamma)


def measured_spectrum(model: LinearModel, dp: DerivedParams, omega) -> SpectrumSeries:
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    th = thermal_spectrum(model, dp.nbar_a, dp.nbar_b, w)
    ba = backaction_spectrum(model, dp.C_tilde, dp.nbar_c, w)
    imp = np.full_like(w, imprecision_level(dp))
    meta = {"gamma": dp.gamma, "params_hash": params_hash(dp),
            "tag": model.config.tag.value, "damping": model.config.damping,
            "peak": model.Omega_eff}
    return SpectrumSeries(w, th, ba, imp, metadata=meta)


# ---------------------------------------------------------------------------
# closed-form limits
# ---------------------------------------------------------------------------

CLOSED_FORM_CASES = (
    "resonant_thermal", "matched_thermal", "resonant_ba", "matched_ba_residual",
    "detuned_thermal", "detuned_ba", "detuned_ba_damping",
    "compensated_thermal", "compensated_ba",
)


def closed_form_reference(dp: DerivedParams, case: str, delta: float | None = None) -> float:
    """Leading-order analytic values (``gamma/Omega -> 0``) of spectrum parts.

    Detuned cases need ``delta`` (detuning from the effective resonance).
    Back-action cases carry the ``(2 n_c + 1)`` multiplier.
    """
    g, p, d, Ct, C = dp.gamma, dp.p, dp.d, dp.C_tilde, dp.C
    na, nb = dp.nbar_a + 0.5, dp.nbar_b + 0.5
    nc = 2.0 * dp.nbar_c + 1.0
    if case.startswith("detuned") and delta is None:
        raise ValueError(f"case {case!r} needs delta")
    if case == "resonant_thermal":
        return na / dp.gamma_a + nb / dp.gamma_b
    if case == "matched_thermal":
        return (na * (1 + d**3) + nb * (1 - d**3)) / g
    if case == "resonant_ba":
        return (p + d) ** 2 * (1 + p * p) / (1 - d * d + p * p) ** 2 * Ct * nc / g
    if case == "matched_ba_residual":
        q = 1 + d * d
        return (g / dp.Omega) ** 2 / 8.0 * q**3 * (q - math.sqrt(q)) * C * nc / g
    if case == "detuned_thermal":
        s = p / (1 + p * p)
        return g / (4 * delta**2) * ((1 + d) * na * (1 - s) + (1 - d) * nb * (1 + s))
    if case == "detuned_ba":
        return g / (4 * delta**2) * p * p / (1 + p * p) * Ct * nc
    if case == "detuned_ba_damping":
        return g / (4 * delta**2) * (g / (2 * delta)) ** 2 * d * d * C * nc
    if case == "compensated_thermal":
        q = 1 - d * d * (1 - p * p)
        return (na + nb + (nb - na) * d * (1 - d * d * (1 + p * p)) / q) / (g * q)
    if case == "compensated_ba":
        return d * d / (1 - d * d * (1 - p * p)) ** 2 * Ct * nc / g
    raise ValueError(f"unknown closed-form case {case!r}; expected one of {CLOSED_FORM_CASES}")


# ---------------------------------------------------------------------------
# grids and integration
# ---------------------------------------------------------------------------

def frequency_grid(dp: DerivedParams, *, span: float | None = None, fine: float = 50.0,
                   window: float = 10.0, n_log: int = 400) -> np.ndarray:
    """Symmetric grid: spacing ``gamma/fine`` near the peaks, log-spaced elsewhere."""
    g = dp.gamma
    centres = sorted({abs(dp.Omega), abs(dp.Omega_tilde)})
    if span is None:
        span = 1e3 * max(centres[-1], g)
    pieces = [np.array([0.0])]
    for c in centres:
        lo, hi = max(c - window * g, 0.0), c + window * g
        pieces.append(np.arange(lo, hi + g / fine, g / fine))
    pieces.append(np.geomspace(g / fine, span, n_log))
    # bridge the gaps between fine windows with log spacing relative to each centre
    for c in centres:
        off = np.geomspace(window * g, span, n_log)
        pieces.append(c + off)
        pieces.append(c - off[off < c])
    pos = np.unique(np.concatenate(pieces))
    pos = pos[(pos >= 0) & (pos <= span)]
    return np.concatenate([-pos[:0:-1], pos])


def integrate_spectrum(series: SpectrumSeries, values: np.ndarray | None = None,
                       *, peak_resolution: float = 20.0) -> float:
    """Variance ``int S d omega / 2 pi`` by trapezoid plus ``1/omega^2`` tails."""
    w = np.asarray(series.omega)
    S = series.th + series.ba if values is None else np.asarray(values)
    order = np.argsort(w)
    w, S = w[order], S[order]
    g = series.metadata.get("gamma", 1.0)
    centre = series.metadata.get("peak", None)
    if centre is not None:
        if w[0] > -(abs(centre) + 50 * g) or w[-1] < abs(centre) + 50 * g:
            raise AccuracyError("grid must cover +-(Omega + 50 gamma)")
        for c in (-abs(centre), abs(centre)):
            near = w[np.abs(w - c) < 2 * g]
            h = np.diff(near).max() if near.size > 1 else np.inf
            if h > g / peak_resolution:
                raise AccuracyError(f"grid spacing {h:.3g} near peaks exceeds gamma/{peak_resolution:g}")
    core = trapezoid(S, w)
    tails = S[0] * abs(w[0]) + S[-1] * abs(w[-1])
    return float((core + tails) / (2.0 * math.pi))
