"""Physical inputs and the derived dimensionless parameter set.

All rates inside :class:`DerivedParams` are expressed in units of the mean
mechanical damping rate ``gamma`` (so ``gamma == 1`` after :func:`derive`),
which keeps matrix condition numbers close to one.  The physical scale is
kept in ``rate_unit`` (rad/s) for conversions at the I/O boundary.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

TWO_PI = 2.0 * math.pi

#: Largest allowed |d|; the drift matrix loses strict stability at |d| = 1.
D_CLAMP = 1.0 - 1e-6

#: SystemParams fields that carry a frequency (given in Hz in parameter files).
FREQUENCY_FIELDS = (
    "omega_a", "omega_b", "kappa", "gamma_a", "gamma_b",
    "g_a", "g_b", "drive", "Lambda_override",
)


class ParameterError(ValueError):
    """Raised when physical inputs are unusable."""


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


@dataclass(frozen=True)
class SystemParams:
    """Physical inputs, all rates in rad/s.

    Either ``cbar`` (steady sideband amplitude) or ``drive`` (drive amplitude
    ``E``, converted with :func:`sideband_amplitude`) must be given.
    """

    omega_a: float
    omega_b: float
    kappa: float
    gamma_a: float
    gamma_b: float
    g_a: float
    g_b: float
    cbar: Optional[float] = None
    drive: Optional[float] = None
    nbar_a: float = 0.0
    nbar_b: float = 0.0
    nbar_c: float = 0.0
    eta: float = 1.0
    Lambda_override: Optional[float] = None

    @property
    def omega_m(self) -> float:
        return 0.5 * (self.omega_a + self.omega_b)

    def resolved_cbar(self) -> float:
        if self.cbar is not None:
            return float(self.cbar)
        if self.drive is None:
            raise ParameterError("either cbar or drive must be given")
        if self.drive == 0.0:
            return 0.0
        return sideband_amplitude(self.drive, self.omega_m, self.kappa)

    # ---- I/O -------------------------------------------------------------
    def to_hz_dict(self) -> dict:
        out = asdict(self)
        for key in FREQUENCY_FIELDS:
            if out[key] is not None:
                out[key] = out[key] / TWO_PI
        return out

    @classmethod
    def from_hz_dict(cls, data: dict) -> "SystemParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in FREQUENCY_FIELDS:
            if kwargs.get(key) is not None:
                kwargs[key] = float(kwargs[key]) * TWO_PI
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "SystemParams":
        with open(path) as fh:
            return cls.from_hz_dict(json.load(fh))


def default_system(
    *,
    Omega_hz: float = 20e3,
    G_hz: float = 70.7e3,
    kappa_hz: float = 200e3,
    gamma_hz: float = 100.0,
    omega_m_hz: float = 10e6,
    G_d_over_G: float = 0.0,
    d: float = 0.0,
    nbar_a: float = 0.0,
    nbar_b: float = 0.0,
    eta: float = 1.0,
) -> SystemParams:
    """Device-scale defaults: C close to 500 with Omega/gamma = 200.

    The coupling split ``g_a, g_b`` is chosen to realise ``G_d_over_G`` at the
    requested many-photon coupling ``G``; the single-photon scale is arbitrary
    (only the product with ``cbar`` matters).
    """
    g0 = TWO_PI * 100.0
    g_sum = 2.0 * g0
    g_a = g_sum * (1.0 - G_d_over_G) / 2.0
    g_b = g_sum * (1.0 + G_d_over_G) / 2.0
    cbar = TWO_PI * G_hz / (math.sqrt(2.0) * g_sum)
    gamma = TWO_PI * gamma_hz
    return SystemParams(
        omega_a=TWO_PI * (omega_m_hz + Omega_hz),
        omega_b=TWO_PI * (omega_m_hz - Omega_hz),
        kappa=TWO_PI * kappa_hz,
        gamma_a=gamma * (1.0 + d),
        gamma_b=gamma * (1.0 - d),
        g_a=g_a,
        g_b=g_b,
        cbar=cbar,
        nbar_a=nbar_a,
        nbar_b=nbar_b,
        eta=eta,
    )


def sideband_amplitude(E: float, omega_m: float, kappa: float) -> float:
    """Steady sideband amplitude ``|E| / sqrt(omega_m**2 + kappa**2 / 4)``."""
    if E < 0 or omega_m <= 0 or kappa <= 0:
        raise ParameterError("sideband_amplitude needs E >= 0, omega_m > 0, kappa > 0")
    return abs(E) / math.sqrt(omega_m**2 + kappa**2 / 4.0)


@dataclass(frozen=True)
class DerivedParams:
    """Every derived symbol used downstream, rates in units of ``rate_unit``."""

    Omega: float
    G: float
    G_d: float
    theta: float
    p: float
    d: float
    gamma: float
    Omega_tilde: float
    G_tilde: float
    C: float
    C_tilde: float
    Gamma: float
    nbar_th: float
    nbar_d: float
    nbar_tot: float
    Lambda: float
    kappa: float
    nbar_a: float
    nbar_b: float
    nbar_c: float
    eta: float
    rate_unit: float = 1.0
    d_clamped: bool = False

    @property
    def gamma_a(self) -> float:
        return self.gamma * (1.0 + self.d)

    @property
    def gamma_b(self) -> float:
        return self.gamma * (1.0 - self.d)

    @property
    def symmetric(self) -> bool:
        return self.G_d == 0.0 and self.d == 0.0

    @classmethod
    def dimensionless(
        cls,
        *,
        Omega: float,
        C: float,
        G_d_over_G: float = 0.0,
        p: Optional[float] = None,
        d: float = 0.0,
        nbar_a: float = 0.0,
        nbar_b: float = 0.0,
        nbar_c: float = 0.0,
        eta: float = 1.0,
        kappa: Optional[float] = None,
        gamma: float = 1.0,
        Lambda: Optional[float] = None,
    ) -> "DerivedParams":
        """Build directly from dimensionless inputs (rates in units of ``gamma``).

        ``C`` is the symmetric-coupling cooperativity ``2 G**2 / (gamma kappa)``.
        Either ``G_d_over_G`` or ``p`` may be given.
        """
        if p is not None:
            # invert p = tan(2 theta), theta = arctan(G_d/G)
            G_d_over_G = math.tan(0.5 * math.atan(p))
        if kappa is None:
            kappa = max(10.0 * Omega, 1e3 * gamma)
        G = math.sqrt(max(C, 0.0) * gamma * kappa / 2.0)
        return _finish(
            Omega=Omega, G=G, G_d=G * G_d_over_G, gamma=gamma, d=d,
            kappa=kappa, nbar_a=nbar_a, nbar_b=nbar_b, nbar_c=nbar_c,
            eta=eta, Lambda_override=Lambda, rate_unit=1.0,
        )

    def with_(self, **changes) -> "DerivedParams":
        """Re-derive after changing any of the dimensionless inputs."""
        base = dict(
            Omega=self.Omega, C=self.C, G_d_over_G=self.G_d / self.G if self.G else 0.0,
            d=self.d, nbar_a=self.nbar_a, nbar_b=self.nbar_b, nbar_c=self.nbar_c,
            eta=self.eta, kappa=self.kappa, gamma=self.gamma,
        )
        if "p" in changes:
            base.pop("G_d_over_G")
        base.update(changes)
        out = DerivedParams.dimensionless(**base)
        return replace(out, rate_unit=self.rate_unit)

    def to_dict(self) -> dict:
        return asdict(self)


def _finish(*, Omega, G, G_d, gamma, d, kappa, nbar_a, nbar_b, nbar_c, eta,
            Lambda_override, rate_unit) -> DerivedParams:
    clamped = False
    if abs(d) > D_CLAMP:
        warnings.warn(f"|d|={abs(d):.8g} clamped to {D_CLAMP}", RuntimeWarning, stacklevel=3)
        d = math.copysign(D_CLAMP, d)
        clamped = True
    ratio = G_d / G if G else 0.0
    theta = math.atan(ratio)
    p = math.tan(2.0 * theta)
    Omega_tilde = Omega / math.sqrt(1.0 + p * p)
    G_tilde = G / math.cos(theta)
    C = 2.0 * G * G / (gamma * kappa)
    C_tilde = 2.0 * G_tilde * G_tilde / (gamma * kappa)
    nbar_th = 0.5 * (nbar_a + nbar_b)
    Lambda = p * Omega_tilde / 2.0 if Lambda_override is None else Lambda_override
    return DerivedParams(
        Omega=Omega, G=G, G_d=G_d, theta=theta, p=p, d=d, gamma=gamma,
        Omega_tilde=Omega_tilde, G_tilde=G_tilde, C=C, C_tilde=C_tilde,
        Gamma=gamma * C_tilde, nbar_th=nbar_th, nbar_d=0.5 * (nbar_a - nbar_b),
        nbar_tot=nbar_th + 0.5, Lambda=Lambda, kappa=kappa, nbar_a=nbar_a,
        nbar_b=nbar_b, nbar_c=nbar_c, eta=eta, rate_unit=rate_unit,
        d_clamped=clamped,
    )


def validate(sp: SystemParams) -> list[Diagnostic]:
    """Collect errors and regime warnings; an empty list means usable."""
    out: list[Diagnostic] = validate_basic(sp)

    def warn(msg):
        out.append(Diagnostic("warning", msg))

    if out:
        return out

    if sp.omega_m / sp.kappa < 10.0:
        warn(f"resolved-sideband ratio omega_m/kappa = {sp.omega_m / sp.kappa:.3g} < 10")
    dp = derive(sp, normalize=False)
    for label, rate in (("Omega", dp.Omega), ("|p| Omega_tilde", abs(dp.p) * dp.Omega_tilde),
                        ("G_tilde", dp.G_tilde)):
        if not sp.kappa > rate:
            warn(f"good-measurement regime violated: kappa <= {label}")
    if dp.d_clamped:
        warn("damping asymmetry clamped below |d| = 1")
    return out


def derive(sp: SystemParams, *, normalize: bool = True) -> DerivedParams:
    """Derive the full parameter set.

    With ``normalize`` (the default) rates are divided by the mean damping
    rate so that ``gamma == 1``; ``rate_unit`` keeps the scale in rad/s.
    """
    errors = validate_basic(sp)
    if errors:
        raise ParameterError("; ".join(str(e) for e in errors))
    cbar = sp.resolved_cbar()
    gamma = 0.5 * (sp.gamma_a + sp.gamma_b)
    scale = gamma if normalize else 1.0
    G = math.sqrt(2.0) * (sp.g_a + sp.g_b) * cbar
    G_d = math.sqrt(2.0) * (sp.g_b - sp.g_a) * cbar
    d = (sp.gamma_a - sp.gamma_b) / (sp.gamma_a + sp.gamma_b)
    return _finish(
        Omega=0.5 * (sp.omega_a - sp.omega_b) / scale, G=G / scale, G_d=G_d / scale,
        gamma=gamma / scale, d=d, kappa=sp.kappa / scale, nbar_a=sp.nbar_a,
        nbar_b=sp.nbar_b, nbar_c=sp.nbar_c, eta=sp.eta,
        Lambda_override=None if sp.Lambda_override is None else sp.Lambda_override / scale,
        rate_unit=scale,
    )


def validate_basic(sp: SystemParams) -> list[Diagnostic]:
    """Hard errors only (no regime checks)."""
    out = []
    if not sp.omega_a > sp.omega_b > 0:
        out.append(Diagnostic("error", "need omega_a > omega_b > 0"))
    for name in ("kappa", "gamma_a", "gamma_b", "g_a", "g_b"):
        if not getattr(sp, name) > 0:
            out.append(Diagnostic("error", f"{name} must be > 0"))
    if not 0.0 < sp.eta <= 1.0:
        out.append(Diagnostic("error", "eta must lie in (0, 1]"))
    if sp.cbar is None and sp.drive is None:
        out.append(Diagnostic("error", "either cbar or drive must be given"))
    if sp.cbar is not None and sp.cbar < 0:
        out.append(Diagnostic("error", "cbar must be >= 0"))
    for name in ("nbar_a", "nbar_b", "nbar_c"):
        if getattr(sp, name) < 0:
            out.append(Diagnostic("error", f"{name} must be >= 0"))
    return out
