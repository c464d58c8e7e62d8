"""Force transfer functions and the added-noise ledger.

A force on oscillator ``a`` reaches the measured quadrature through
``chi_F = chi[0, :] . w_F``.  The measured spectrum is referred back to the
force and expressed in quanta of the driven oscillator,
``S / (gamma_a |chi_F|^2)``.  That total splits into the driven oscillator's
own bath (the intrinsic ``1/2 + n_a`` part, not counted as added noise), the
auxiliary oscillator's bath (``aux``), back-action (``ba``) and imprecision
(``imp``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .linmodel import LinearModel, ModelConfig, Tag, build, force_weight, susceptibility
from .params import DerivedParams
from .spectra import backaction_spectrum, imprecision_level, thermal_spectrum


@dataclass(frozen=True)
class AddedNoiseLedger:
    aux: float
    ba: float
    imp: float
    delta: float
    case: str
    #: driven-oscillator bath contribution in quanta (about 1/2 + n_a)
    intrinsic: float = 0.5
    nbar_a: float = 0.0

    @property
    def total(self) -> float:
        return self.aux + self.ba + self.imp

    @property
    def total_subtract_reference(self) -> float:
        """Alternative convention: full referred noise minus ``1/2 + n_a``."""
        return self.intrinsic + self.total - 0.5 - self.nbar_a


@dataclass(frozen=True)
class QuantumLimits:
    full: float
    standard: float


def _config_for(dp: DerivedParams, compensated: bool) -> ModelConfig:
    if dp.symmetric:
        return ModelConfig(Tag.SYMMETRIC)
    return ModelConfig(Tag.COMPENSATED if compensated else Tag.ORIGINAL)


def resonance(dp: DerivedParams, compensated: bool) -> float:
    """Effective resonance ``omega_2`` in the rotating frame."""
    return dp.Omega_tilde if compensated else dp.Omega


def force_transfer(model: LinearModel, fw, omega):
    """Complex response of ``X+`` to a unit force on oscillator ``a``.

    Negative frequencies return the complex conjugate.
    """
    w = np.asarray(omega, dtype=float)
    chi = susceptibility(model, np.abs(w))
    out = chi[..., 0, :] @ fw.phasor()
    if w.ndim == 0:
        return complex(out) if w >= 0 else complex(np.conj(out))
    return np.where(w >= 0, out, np.conj(out))


def narrowband_ok(model: LinearModel, omega: float, factor: float = 0.25) -> bool:
    return abs(abs(omega) - model.Omega_eff) <= factor * model.Omega_eff


# ---------------------------------------------------------------------------
# closed forms for the gain modification
# ---------------------------------------------------------------------------

def g_resonant(p: float, d: float, compensated: bool = False) -> float:
    q = 0.5 * math.atan(p)
    if compensated:
        return ((1 - d) * math.cos(q) - d * p * math.sin(q)) / (1 - d * d + d * d * p * p)
    if p == 0.0:
        return 1.0 / (1.0 + d)
    r = math.sqrt(1 + p * p)
    num = r * (1 + d + p) - 1 - d - d * p - p * p
    return num / (2 * (1 - d * d + p * p)) / math.sin(q)


def g_detuned(p: float, d: float = 0.0, compensated: bool = False) -> float:
    q = 0.5 * math.atan(p)
    if compensated:
        return math.cos(q)
    if p == 0.0:
        return 1.0
    r = math.sqrt(1 + p * p)
    return (1 + p - r) / (2 * r) / math.sin(q)


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------

def added_noise(dp: DerivedParams, delta: float = 0.0, *, compensated: bool = False,
                damping: str = "exchange", model: LinearModel | None = None) -> AddedNoiseLedger:
    """Added noise (quanta) at detuning ``delta`` from the effective resonance."""
    if model is None:
        cfg = _config_for(dp, compensated)
        model = build(dp, ModelConfig(cfg.tag, damping=damping))
    w = resonance(dp, compensated) + delta
    if not narrowband_ok(model, w):
        warnings.warn("evaluation frequency outside the narrow-band window", RuntimeWarning,
                      stacklevel=2)
    chiF = force_transfer(model, force_weight(dp), w)
    k = dp.gamma_a * abs(chiF) ** 2
    s_a = float(thermal_spectrum(model, dp.nbar_a, dp.nbar_b, w, part="a"))
    s_b = float(thermal_spectrum(model, dp.nbar_a, dp.nbar_b, w, part="b"))
    s_ba = float(backaction_spectrum(model, dp.C_tilde, dp.nbar_c, w))
    s_imp = imprecision_level(dp)
    case = ("detuned" if delta else "resonant") + ("-compensated" if compensated else "")
    return AddedNoiseLedger(aux=s_b / k, ba=s_ba / k, imp=s_imp / k, delta=delta, case=case,
                            intrinsic=s_a / k, nbar_a=dp.nbar_a)


def quantum_limits(delta: float, gamma_a: float) -> QuantumLimits:
    """Full limit 1/2; standard limit ``|delta| / gamma_a`` (1/2 on resonance)."""
    std = 0.5 if delta == 0 else max(abs(delta) / gamma_a, 0.5)
    return QuantumLimits(full=0.5, standard=std)


# ---------------------------------------------------------------------------
# optimal measurement strength
# ---------------------------------------------------------------------------

def optimal_cooperativity_closed_form(dp: DerivedParams, case: str, delta: float | None = None) -> float:
    if case == "resonant_matched_extreme":
        return math.sqrt(3.0) / (8.0 * math.sqrt(math.sqrt(2.0) - 1.0)) * dp.Omega / dp.gamma
    if case == "detuned_compensated":
        if delta is None:
            raise ValueError("detuned case needs delta")
        sec2 = 1.0 / math.cos(0.5 * math.atan(dp.p)) ** 2
        return 4.0 * delta**2 / (2.0 * math.sqrt(2.0) * abs(dp.d) * sec2 * dp.gamma**2)
    raise ValueError(f"unknown case {case!r}")


def min_added_noise_closed_form(dp: DerivedParams, case: str, delta: float | None = None) -> float:
    if case == "resonant_matched_extreme":
        return dp.gamma / dp.Omega * math.sqrt(3.0) / (8.0 * math.sqrt(math.sqrt(2.0) - 1.0))
    if case == "detuned_compensated":
        d, sec2 = dp.d, 1.0 / math.cos(0.5 * math.atan(dp.p)) ** 2
        aux = 0.5 * (1 - d) / (1 + d) * sec2
        return aux + abs(d) * sec2 / (math.sqrt(2.0) * (1 + d))
    raise ValueError(f"unknown case {case!r}")


def optimal_cooperativity(dp: DerivedParams, case: str, *, delta: float = 0.0,
                          compensated: bool = False, damping: str = "exchange",
                          bracket: tuple[float, float] | None = None):
    """Closed-form ``C0`` alongside a numeric minimisation of the total.

    Returns ``(C0_closed, C0_numeric, n_min_numeric)``.  The search runs over
    ``log C`` with a bounded scalar minimiser.
    """
    closed = optimal_cooperativity_closed_form(dp, case, delta if delta else None)

    def total(logC):
        return added_noise(dp.with_(C=math.exp(logC)), delta, compensated=compensated,
                           damping=damping).total

    lo, hi = bracket or (closed / 100.0, closed * 100.0)
    res = minimize_scalar(total, bounds=(math.log(lo), math.log(hi)), method="bounded",
                          options={"xatol": 1e-7})
    C_num = math.exp(res.x)
    # unimodality diagnostic: the objective must rise on either side
    if not (total(res.x - 0.5) > res.fun and total(res.x + 0.5) > res.fun):
        warnings.warn("added-noise profile is not unimodal around the optimum", RuntimeWarning)
    return closed, C_num, float(res.fun)
