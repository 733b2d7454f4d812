import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mgseprec.waveforms import (GradientWaveform, PgseTiming,
                                filter_bandpass_center, filter_value,
                                hahn_waveform, load_waveform_csv,
                                pgse_filter_analytic, pgse_waveform,
                                save_filter_csv, save_waveform_csv)


@st.composite
def balanced_waveforms(draw):
    """Random piecewise-constant waveforms with the echo condition enforced."""
    n = draw(st.integers(1, 6))
    durations = [draw(st.floats(1e-4, 1e-2)) for _ in range(n)]
    amplitudes = [draw(st.floats(-0.5, 0.5)) for _ in range(n)]
    d_bal = draw(st.floats(1e-4, 1e-2))
    moment = math.fsum(d * a for d, a in zip(durations, amplitudes))
    durations.append(d_bal)
    amplitudes.append(-moment / d_bal)
    return GradientWaveform(tuple(durations), tuple(amplitudes))


def test_pgse_waveform_layout():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.006, G=0.1))
    assert wf.durations == (0.002, 0.004, 0.002)
    assert wf.amplitudes == (0.1, 0.0, -0.1)
    assert wf.zeroth_moment() == pytest.approx(0.0, abs=1e-18)
    assert wf.duration == pytest.approx(0.008)


def test_hahn_is_two_back_to_back_lobes():
    wf = hahn_waveform(0.1, 0.01)
    assert wf.durations == (0.005, 0.005)
    assert wf.amplitudes == (0.1, -0.1)


def test_pgse_requires_delta_at_most_Delta():
    with pytest.raises(ValueError):
        PgseTiming(delta=0.006, Delta=0.002, G=0.1)
    with pytest.raises(ValueError):
        PgseTiming(delta=0.0, Delta=0.002, G=0.1)


def test_echo_condition_enforced():
    with pytest.raises(ValueError):
        GradientWaveform((1e-3, 1e-3), (0.1, -0.2))
    GradientWaveform((1e-3, 2e-3), (0.2, -0.1))  # balanced, fine


def test_vanishing_pulse_limit():
    # filter amplitude scales as delta^2, vanishing with the pulses
    t = 0.01
    om = np.logspace(1, 4, 64)
    peak_hahn = np.max(filter_value(hahn_waveform(0.1, t), om))
    peaks = []
    for delta in (1e-5, 1e-6, 1e-7):
        wf = pgse_waveform(PgseTiming(delta=delta, Delta=t - delta, G=0.1))
        peaks.append(np.max(filter_value(wf, om)))
    assert peaks[0] < 1e-4 * peak_hahn
    assert peaks[1] == pytest.approx(peaks[0] * 1e-2, rel=0.01)
    assert peaks[2] == pytest.approx(peaks[1] * 1e-2, rel=0.01)


def test_filter_zero_frequency_vanishes():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.006, G=0.1))
    assert float(filter_value(wf, 0.0)) == pytest.approx(0.0, abs=1e-25)


def test_filter_matches_analytic_pgse():
    timing = PgseTiming(delta=0.003, Delta=0.009, G=0.07)
    wf = pgse_waveform(timing)
    om = np.logspace(math.log10(2 * math.pi / 0.012 * 1e-2),
                     math.log10(2 * math.pi / 0.012 * 1e3), 1000)
    numeric = filter_value(wf, om)
    analytic = pgse_filter_analytic(timing, om)
    # relative 1e-10 where the filter is alive; points landing inside deep
    # nulls of the sine pattern (values ~1e-60 x peak) are zero to fp
    assert np.allclose(numeric, analytic, rtol=1e-10, atol=1e-16 * analytic.max())


@settings(max_examples=60)
@given(wf=balanced_waveforms(), om=st.floats(0.0, 1e6))
def test_filter_even_and_nonnegative(wf, om):
    value = float(filter_value(wf, om))
    assert value >= 0.0
    assert value == float(filter_value(wf, -om))


def test_hahn_bandpass_center_fixture():
    # oracle: maximize sin^4(w t/4)/w^2, i.e. tan(x) = 2x with x = w t/4
    x_star = brentq(lambda x: math.tan(x) - 2 * x, 1.0, 1.45, xtol=1e-14)
    t = 0.01
    center = filter_bandpass_center(hahn_waveform(0.05, t))
    assert center * t == pytest.approx(4 * x_star, rel=1e-7)
    assert center * t == pytest.approx(4.662244741, rel=1e-7)  # frozen


def test_bandpass_center_time_scaling():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.006, G=0.1))
    c1 = filter_bandpass_center(wf)
    c2 = filter_bandpass_center(wf.scaled_in_time(2.0))
    assert c1 / c2 == pytest.approx(2.0, rel=1e-6)


def test_bandpass_center_zero_filter_is_none():
    assert filter_bandpass_center(GradientWaveform((1e-3, 1e-3), (0.0, 0.0))) is None


def test_time_reversal_leaves_filter_unchanged():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.007, G=0.1))
    om = np.logspace(0, 5, 200)
    assert np.allclose(filter_value(wf, om), filter_value(wf.reversed(), om),
                       rtol=1e-12)


def test_running_integral():
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.006, G=0.1))
    ts = np.array([0.0, 0.001, 0.002, 0.005, 0.006, 0.007, 0.008])
    q = wf.integral_until(ts)
    expected = np.array([0.0, 1e-4, 2e-4, 2e-4, 2e-4, 1e-4, 0.0])
    assert np.allclose(q, expected, atol=1e-18)


def test_waveform_csv_round_trip(tmp_path):
    wf = pgse_waveform(PgseTiming(delta=0.002, Delta=0.006, G=0.1))
    path = tmp_path / "wf.csv"
    save_waveform_csv(wf, path)
    back = load_waveform_csv(path)
    assert back.durations == wf.durations
    assert back.amplitudes == wf.amplitudes


def test_filter_csv(tmp_path):
    wf = hahn_waveform(0.05, 0.01)
    path = tmp_path / "filter.csv"
    om = np.logspace(1, 4, 8)
    save_filter_csv(wf, om, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "omega_rad_per_s,F"
    om0, f0 = map(float, lines[1].split(","))
    assert f0 == pytest.approx(float(filter_value(wf, om0)))
