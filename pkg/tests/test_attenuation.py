import math

import numpy as np
import pytest

from mgseprec.attenuation import (QuadratureError, UnsupportedModelError,
                                  apply_T2, attenuation_freq,
                                  attenuation_time_exact, beta_freq,
                                  beta_sensitivity_freq, beta_time_exact,
                                  beta_time_exact_dtau, hahn_beta,
                                  hahn_beta_dtau, hahn_closed_form)
from mgseprec.spectra import (GeometryExpansion, geometry_spectrum,
                              lorentzian_spectrum)
from mgseprec.units import PROTON_GAMMA, Geometry, TissueModel
from mgseprec.waveforms import GradientWaveform, PgseTiming, hahn_waveform, pgse_waveform

TISSUE = TissueModel(ell_c=3.7e-6, D0=1e-9)
GAMMA = PROTON_GAMMA


def test_zero_waveform_gives_unit_signal():
    wf = GradientWaveform((0.005, 0.005), (0.0, 0.0))
    res = attenuation_freq(wf, lorentzian_spectrum(TISSUE))
    assert res.beta == 0.0
    assert res.M_norm == 1.0
    res_t = attenuation_time_exact(wf, TISSUE)
    assert res_t.beta == 0.0


def test_hahn_closed_form_vs_time_exact():
    # adjudicates the bracket: tau_c/t version matches the exact double
    # integral to 1e-10 over 50 log-spaced points
    tau = TISSUE.tau_c
    for u in np.logspace(-2, 2, 50):
        t = float(u * tau)
        closed = hahn_closed_form(TISSUE, 0.1, t).beta
        exact = attenuation_time_exact(hahn_waveform(0.1, t), TISSUE).beta
        assert closed == pytest.approx(exact, rel=1e-10)


def test_printed_bracket_variant_fails():
    # the t/tau_c bracket variant is inconsistent with the exact integral
    tau = TISSUE.tau_c
    u = 1e-2
    t = u * tau
    pref = (GAMMA * 0.1) ** 2 * TISSUE.D0 * tau ** 2 * t
    printed = pref * (1.0 - (t / tau) * (3 + math.exp(-u) - 4 * math.exp(-u / 2)))
    exact = attenuation_time_exact(hahn_waveform(0.1, t), TISSUE).beta
    assert abs(printed - exact) / exact > 1e2


def test_long_time_asymptote():
    tau = TISSUE.tau_c
    t = 1e3 * tau
    beta = hahn_closed_form(TISSUE, 0.1, t).beta
    assert beta / ((GAMMA * 0.1) ** 2 * TISSUE.D0 * tau ** 2 * t) == pytest.approx(
        1.0, rel=0.01)


def test_short_time_free_diffusion_limit():
    tau = TISSUE.tau_c
    t = 1e-3 * tau
    beta = hahn_closed_form(TISSUE, 0.1, t).beta
    stejskal = (GAMMA * 0.1) ** 2 * TISSUE.D0 * t ** 3 / 12.0
    assert beta / stejskal == pytest.approx(1.0, rel=0.01)
    exact = attenuation_time_exact(hahn_waveform(0.1, t), TISSUE).beta
    assert beta == pytest.approx(exact, rel=1e-9)


def test_engine_equivalence_randomized_pgse():
    rng = np.random.default_rng(20260810)
    spectrum = lorentzian_spectrum(TISSUE)
    for _ in range(25):  # the full 100-case sweep runs in the acceptance suite
        u = 10 ** rng.uniform(-2, 2)
        t = u * TISSUE.tau_c
        frac = rng.uniform(0.08, 0.5)
        G = 10 ** rng.uniform(-3, 0)
        wf = pgse_waveform(PgseTiming(delta=frac * t, Delta=(1 - frac) * t, G=G))
        bf = attenuation_freq(wf, spectrum).beta
        bt = attenuation_time_exact(wf, TISSUE).beta
        assert bf == pytest.approx(bt, rel=1e-6)


def test_eq2_self_consistency_general_waveform():
    # Parseval-type identity on a non-PGSE balanced waveform
    wf = GradientWaveform((0.001, 0.003, 0.002, 0.002),
                          (0.05, -0.02, 0.03, -0.025))
    assert abs(wf.zeroth_moment()) < 1e-12
    bf = attenuation_freq(wf, lorentzian_spectrum(TISSUE)).beta
    bt = attenuation_time_exact(wf, TISSUE).beta
    assert bf == pytest.approx(bt, rel=1e-6)


def test_multi_term_spectrum_rejected_by_time_engine():
    spectrum = geometry_spectrum(GeometryExpansion(Geometry.PLANAR, 10e-6), 1e-9)
    with pytest.raises(UnsupportedModelError):
        attenuation_time_exact(hahn_waveform(0.1, 0.01), spectrum)


def test_single_term_spectrum_accepted_by_time_engine():
    spectrum = lorentzian_spectrum(TISSUE)
    wf = hahn_waveform(0.1, 0.01)
    assert attenuation_time_exact(wf, spectrum).beta == pytest.approx(
        attenuation_time_exact(wf, TISSUE).beta, rel=1e-14)


def test_segment_order_invariance():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.008, G=0.1))
    b1 = attenuation_time_exact(wf, TISSUE).beta
    b2 = attenuation_time_exact(wf.reversed(), TISSUE).beta
    assert b1 == pytest.approx(b2, rel=1e-12)


def test_beta_monotone_in_time_for_hahn():
    tau = TISSUE.tau_c
    ts = np.logspace(math.log10(0.01 * tau), math.log10(100 * tau), 200)
    betas = hahn_beta(0.05, ts, tau, TISSUE.D0, GAMMA)
    assert np.all(np.diff(betas) > 0)


def test_ell_c4_scaling_in_restricted_regime():
    # double ell_c, re-fix t = 100 tau_c': beta/t multiplies by 16 within 2%
    G = 0.02
    t1 = 100 * TISSUE.tau_c
    rate1 = hahn_closed_form(TISSUE, G, t1).beta / t1
    big = TISSUE.with_ell_c(2 * TISSUE.ell_c)
    t2 = 100 * big.tau_c
    rate2 = hahn_closed_form(big, G, t2).beta / t2
    assert rate2 / rate1 == pytest.approx(16.0, rel=0.02)


def test_apply_T2():
    res = hahn_closed_form(TISSUE, 0.05, 0.043)
    assert apply_T2(res, math.inf).M_norm_T2 == res.M_norm
    assert apply_T2(res, 0.043).M_norm_T2 == pytest.approx(res.M_norm * math.exp(-1))
    withered = apply_T2(res, 0.1)
    assert withered.M_norm_T2 == pytest.approx(res.M_norm * 0.6505091, rel=1e-6)
    assert withered.M_norm_T2 <= withered.M_norm
    with pytest.raises(ValueError):
        apply_T2(res, 0.0)


def test_renormalized_decay_curve_ordering():
    # smaller ell_c^2/ell_G^2 decays more slowly at fixed (gamma^2 G^2 D0)^(1/3) t
    G, D0 = 0.1, 1e-9
    rate = (GAMMA * G) ** 2 * D0
    x = 3.0  # renormalized time (gamma^2 G^2 D0)^(1/3) t
    t = x / rate ** (1 / 3)
    decays = []
    for ratio in (0.1, 0.15, 0.25, 0.4, 1.0):
        tau_c = ratio / rate ** (1 / 3)
        tissue = TissueModel.from_tau_c(tau_c, D0)
        decays.append(hahn_closed_form(tissue, G, t).M_norm)
    assert all(a > b for a, b in zip(decays, decays[1:]))


def test_quadrature_budget_error():
    wf = hahn_waveform(0.1, 0.01)
    with pytest.raises(QuadratureError):
        beta_freq(wf, lorentzian_spectrum(TISSUE), max_evals=100)


def test_freq_sensitivity_matches_finite_difference():
    wf = hahn_waveform(0.05, 5 * TISSUE.tau_c)
    spectrum = lorentzian_spectrum(TISSUE)
    beta, dbeta = beta_sensitivity_freq(wf, spectrum)
    h = 1e-5 * TISSUE.ell_c
    up = beta_freq(wf, lorentzian_spectrum(TISSUE.with_ell_c(TISSUE.ell_c + h)))
    dn = beta_freq(wf, lorentzian_spectrum(TISSUE.with_ell_c(TISSUE.ell_c - h)))
    assert dbeta == pytest.approx((up - dn) / (2 * h), rel=1e-6)


def test_time_exact_dtau_matches_finite_difference():
    wf = pgse_waveform(PgseTiming(delta=0.003, Delta=0.011, G=0.04))
    tau = TISSUE.tau_c
    beta, dbeta = beta_time_exact_dtau(wf, TISSUE.D0, tau)
    h = 1e-6 * tau
    fd = (beta_time_exact(wf, TISSUE.D0 * (tau + h), tau + h)
          - beta_time_exact(wf, TISSUE.D0 * (tau - h), tau - h)) / (2 * h)
    assert dbeta == pytest.approx(fd, rel=1e-6)
    assert beta == pytest.approx(beta_time_exact(wf, TISSUE.D0 * tau, tau), rel=1e-14)


def test_hahn_beta_dtau_consistency():
    t = 3.7 * TISSUE.tau_c
    wf = hahn_waveform(0.06, t)
    b_h, db_h = hahn_beta_dtau(0.06, t, TISSUE.tau_c, TISSUE.D0, GAMMA)
    b_t, db_t = beta_time_exact_dtau(wf, TISSUE.D0, TISSUE.tau_c, GAMMA)
    assert float(b_h) == pytest.approx(b_t, rel=1e-12)
    assert float(db_h) == pytest.approx(db_t, rel=1e-12)


def test_geometry_spectrum_attenuation_close_to_single_pole():
    # multi-Lorentzian slab vs its single-pole surrogate: same order of magnitude
    tissue = TissueModel.from_planar_width(10e-6, 1e-9)
    spectrum = geometry_spectrum(GeometryExpansion(Geometry.PLANAR, 10e-6), 1e-9)
    t = 10 * tissue.tau_c
    wf = hahn_waveform(0.03, t)
    multi = attenuation_freq(wf, spectrum).beta
    single = attenuation_time_exact(wf, tissue).beta
    assert multi == pytest.approx(single, rel=0.1)
