import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bae_optomech import closedloop as cl
from bae_optomech import conditional as co
from bae_optomech import linmodel as lm
from bae_optomech import spectra as sp
from bae_optomech.params import DerivedParams


def dims(**kw):
    kw.setdefault("Omega", 1e3)
    kw.setdefault("C", 500.0)
    return DerivedParams.dimensionless(**kw)


def at(dp, case, w, config=None):
    m = lm.build(dp, config)
    if "ba" in case:
        return float(sp.backaction_spectrum(m, dp.C_tilde, dp.nbar_c, w))
    return float(sp.thermal_spectrum(m, dp.nbar_a, dp.nbar_b, w))


class TestThermal:
    def test_zero_point_peak(self):
        dp = dims(Omega=200.0)
        assert at(dp, "th", dp.Omega) == pytest.approx(1.0, rel=1e-4)

    def test_two_lorentzians_at_zero(self):
        dp = dims(Omega=10.0, nbar_a=2.0, nbar_b=3.0)
        ref = (2 + 3 + 1) * 0.5 / (0.25 + 100.0)
        assert at(dp, "th", 0.0) == pytest.approx(ref, rel=1e-12)

    def test_damping_asymmetric_resonance(self):
        dp = dims(d=0.3, nbar_a=1.0)
        ref = sp.closed_form_reference(dp, "resonant_thermal")
        assert at(dp, "th", dp.Omega) == pytest.approx(ref, rel=1e-5)

    def test_matched(self):
        dp = dims(p=-0.2, d=0.2, nbar_a=1.0, nbar_b=3.0)
        ref = sp.closed_form_reference(dp, "matched_thermal")
        assert ref == pytest.approx(4.984, rel=1e-12)
        assert at(dp, "th", dp.Omega) == pytest.approx(ref, rel=1e-5)

    def test_compensated(self):
        dp = dims(p=0.3, d=0.2, nbar_a=1.0, nbar_b=2.0)
        ref = sp.closed_form_reference(dp, "compensated_thermal")
        assert at(dp, "th", dp.Omega_tilde, lm.ModelConfig("compensated")) == pytest.approx(ref, rel=1e-5)

    def test_detuned(self):
        dp = dims(Omega=1e4, p=0.1, d=0.2, nbar_a=1.0)
        ref = sp.closed_form_reference(dp, "detuned_thermal", 100.0)
        assert at(dp, "th", dp.Omega + 100.0) == pytest.approx(ref, rel=0.01)

    def test_input_form_agrees(self):
        dp = dims(p=0.4, d=-0.3, nbar_a=4.0, nbar_b=1.0)
        m = lm.build(dp)
        w = np.linspace(-1.2e3, 1.2e3, 101)
        np.testing.assert_allclose(sp.thermal_spectrum(m, 4.0, 1.0, w),
                                   sp.thermal_spectrum_input_form(m, 4.0, 1.0, w), rtol=1e-10)

    def test_bath_parts_add(self):
        dp = dims(p=0.2, d=0.4, nbar_a=2.0)
        m = lm.build(dp)
        w = np.array([900.0, 1000.0, 1010.0])
        parts = [sp.thermal_spectrum(m, 2.0, 0.0, w, part=k) for k in ("a", "b", "total")]
        np.testing.assert_allclose(parts[0] + parts[1], parts[2], rtol=1e-13)


class TestBackAction:
    def test_symmetric_vanishes(self):
        dp = dims()
        w = np.linspace(-2e3, 2e3, 41)
        assert not np.any(sp.backaction_spectrum(lm.build(dp), dp.C_tilde, 0.0, w))

    def test_resonant(self):
        dp = dims(p=0.1, d=0.2)
        ref = sp.closed_form_reference(dp, "resonant_ba")
        assert ref == pytest.approx(0.09 * 1.01 / (1 - 0.04 + 0.01) ** 2 * dp.C_tilde)
        assert at(dp, "ba", dp.Omega) == pytest.approx(ref, rel=1e-5)

    def test_matched_residual(self):
        dp = dims(p=-0.2, d=0.2)
        assert at(dp, "ba", dp.Omega) == pytest.approx(
            sp.closed_form_reference(dp, "matched_ba_residual"), rel=0.02)

    def test_matched_cancellation(self):
        matched = at(dims(p=-0.2, d=0.2), "ba", 1e3)
        mirrored = at(dims(p=0.2, d=0.2), "ba", 1e3)
        assert matched / mirrored <= 1e-3 * (1e3) ** -2 * 1e3

    def test_detuned(self):
        dp = dims(Omega=1e4, p=0.1)
        ref = sp.closed_form_reference(dp, "detuned_ba", 100.0)
        assert at(dp, "ba", dp.Omega + 100.0) == pytest.approx(ref, rel=0.02)

    def test_detuned_damping_only(self):
        dp = dims(Omega=1e4, d=0.2)
        ref = sp.closed_form_reference(dp, "detuned_ba_damping", 100.0)
        assert ref == pytest.approx(0.04 * 500 / (4 * 100**2) / (2 * 100) ** 2)
        assert at(dp, "ba", dp.Omega + 100.0) == pytest.approx(ref, rel=0.02)

    def test_compensated(self):
        dp = dims(p=0.3, d=0.2)
        ref = sp.closed_form_reference(dp, "compensated_ba")
        cfg = lm.ModelConfig("compensated")
        assert at(dp, "ba", dp.Omega_tilde, cfg) == pytest.approx(ref, rel=1e-5)
        assert sp.closed_form_reference(dims(p=0.3), "compensated_ba") == 0.0

    def test_cavity_occupation(self):
        dp = dims(p=0.1, d=0.2)
        hot = dims(p=0.1, d=0.2, nbar_c=0.5)
        assert at(hot, "ba", 1e3) == pytest.approx(2 * at(dp, "ba", 1e3), rel=1e-12)


class TestImprecision:
    def test_floor(self):
        assert sp.imprecision_level(dims(C=500.0)) == pytest.approx(2.5e-4)

    def test_cavity_occupation_doubles(self):
        assert sp.imprecision_level(dims(nbar_c=0.5)) == pytest.approx(
            2 * sp.imprecision_level(dims()))

    def test_uses_rotated_cooperativity(self):
        dp = dims(G_d_over_G=0.3)
        assert sp.imprecision_level(dp) == pytest.approx(1 / (8 * dp.C_tilde))

    def test_no_measurement(self):
        assert sp.imprecision_level(dims(C=0.0)) == math.inf


class TestMeasured:
    def test_resonant_symmetric(self):
        dp = dims(Omega=200.0)
        s = sp.measured_spectrum(lm.build(dp), dp, [dp.Omega])
        assert s.total[0] == pytest.approx(1 + 1 / (8 * 500), rel=1e-4)

    def test_sql_crossing(self):
        # imprecision drops below the zero-point peak height once C > 1/8
        for C, below in ((0.1, False), (0.2, True)):
            assert (sp.imprecision_level(dims(C=C)) < 1.0) is below

    def test_detuned_symmetric(self):
        # far from both peaks of the two-Lorentzian spectrum
        dp = dims(Omega=200.0)
        th = at(dp, "th", dp.Omega + 100.0)
        assert th == pytest.approx(1 / (4 * 100**2) + 1 / (4 * 500**2), rel=1e-3)
        # the mirror peak at -Omega is what separates it from 1/(4 delta^2)
        assert th / (1 / (4 * 100**2)) == pytest.approx(1.04, abs=1e-3)
        far = dims(Omega=1e4)
        assert at(far, "th", far.Omega + 100.0) == pytest.approx(1 / (4 * 100**2), rel=0.01)

    def test_rows_are_normalised(self):
        dp = DerivedParams.dimensionless(Omega=200.0, C=500.0, gamma=2.0)
        s = sp.measured_spectrum(lm.build(dp), dp, [400.0])
        row = next(s.rows())
        assert row[0] == pytest.approx(200.0) and row[4] == pytest.approx(2 * s.total[0])

    def test_metadata_hash_is_stable(self):
        assert sp.params_hash(dims()) == sp.params_hash(dims())
        assert sp.params_hash(dims()) != sp.params_hash(dims(C=501.0))

    def test_backaction_evasion(self):
        dp = dims(Omega=200.0)
        w = sp.frequency_grid(dp)[::7]
        lo = sp.measured_spectrum(lm.build(dp), dp, w).total
        hi = sp.measured_spectrum(lm.build(dp.with_(C=1000.0)), dp.with_(C=1000.0), w).total
        assert np.all(hi < lo)


@pytest.mark.filterwarnings("ignore:drift loses")
@settings(max_examples=25, deadline=None)
@given(ratio=st.floats(-0.9, 0.9), d=st.floats(-0.9, 0.9), nbar=st.floats(0.0, 30.0),
       compensated=st.booleans())
def test_even_and_nonnegative(ratio, d, nbar, compensated):
    dp = dims(Omega=200.0, G_d_over_G=ratio, d=d, nbar_a=nbar, nbar_b=0.5 * nbar)
    m = lm.build(dp, lm.ModelConfig("compensated" if compensated else "original"))
    w = np.linspace(0.0, 600.0, 301)
    s_pos = sp.measured_spectrum(m, dp, w)
    s_neg = sp.measured_spectrum(m, dp, -w)
    np.testing.assert_allclose(s_pos.total, s_neg.total, rtol=1e-10)
    for part in (s_pos.th, s_pos.ba, s_pos.imp):
        assert np.all(part >= 0) and np.all(np.isfinite(part))


class TestIntegration:
    def test_lorentzian(self):
        w = np.concatenate([-np.geomspace(1e4, 1e-3, 4000), [0.0], np.geomspace(1e-3, 1e4, 4000)])
        S = 0.5 / (0.25 + w * w)
        series = sp.SpectrumSeries(w, S, np.zeros_like(w), np.zeros_like(w))
        # int S d omega / pi = 1, i.e. a variance of 1/2
        assert sp.integrate_spectrum(series) == pytest.approx(0.5, rel=1e-4)

    @pytest.mark.parametrize("nbar, target", [(0.0, 0.5), (25.0, 25.5)])
    def test_thermal_variance(self, nbar, target):
        dp = dims(Omega=200.0, nbar_a=nbar, nbar_b=nbar)
        s = sp.measured_spectrum(lm.build(dp), dp, sp.frequency_grid(dp))
        assert sp.integrate_spectrum(s) == pytest.approx(target, rel=0.005)

    def test_parseval_asymmetric(self):
        dp = dims(Omega=200.0, p=0.2, d=0.1, nbar_a=3.0, nbar_b=1.0, kappa=1e5)
        m = lm.build(dp)
        s = sp.measured_spectrum(m, dp, sp.frequency_grid(dp))
        lyap = cl.unconditional_covariance(co.sme_coefficients(dp))[0, 0]
        assert sp.integrate_spectrum(s) == pytest.approx(lyap, rel=0.01)

    def test_coarse_grid_rejected(self):
        dp = dims(Omega=200.0)
        s = sp.measured_spectrum(lm.build(dp), dp, np.linspace(-1e4, 1e4, 101))
        with pytest.raises(sp.AccuracyError):
            sp.integrate_spectrum(s)

    def test_narrow_grid_rejected(self):
        dp = dims(Omega=200.0)
        s = sp.measured_spectrum(lm.build(dp), dp, np.linspace(-210, 210, 40001))
        with pytest.raises(sp.AccuracyError):
            sp.integrate_spectrum(s)


def test_unknown_case():
    with pytest.raises(ValueError):
        sp.closed_form_reference(dims(), "bogus")
    with pytest.raises(ValueError):
        sp.closed_form_reference(dims(), "detuned_ba")
