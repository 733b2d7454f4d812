"""Effective gradient waveforms and their spectral filter functions.

Waveforms are piecewise-constant effective gradients (the refocusing pulse is
folded in as a sign flip).  The filter function is the squared finite-time
Fourier transform of the waveform,

    F_t(omega) = |integral_0^t G(t') exp(-i omega t') dt'|^2 / (2 pi),

evaluated segment-wise in closed form.  The gradient amplitude lives inside
G(t'), so the phase variance needs only a gamma^2 prefactor.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

# Echo-condition tolerance: |sum d*a| relative to sum |d*a|.
_MOMENT_TOL = 1e-9


def _sinc(x):
    # sin(x)/x with the removable singularity handled (np.sinc is sin(pi x)/(pi x))
    return np.sinc(np.asarray(x) / math.pi)


@dataclass(frozen=True)
class GradientWaveform:
    """Piecewise-constant effective gradient.

    durations  : segment lengths, s (all positive)
    amplitudes : signed segment amplitudes, T/m

    The zeroth moment sum(duration*amplitude) must vanish (echo condition),
    so the mean accrued phase is zero.
    """

    durations: tuple[float, ...]
    amplitudes: tuple[float, ...]

    def __post_init__(self):
        if len(self.durations) == 0 or len(self.durations) != len(self.amplitudes):
            raise ValueError("durations and amplitudes must be non-empty and match")
        if any(d <= 0 for d in self.durations):
            raise ValueError("all segment durations must be positive")
        moment = math.fsum(d * a for d, a in zip(self.durations, self.amplitudes))
        scale = math.fsum(abs(d * a) for d, a in zip(self.durations, self.amplitudes))
        if scale > 0 and abs(moment) > _MOMENT_TOL * scale:
            raise ValueError(
                f"echo condition violated: zeroth moment {moment:g} (scale {scale:g})"
            )

    @property
    def duration(self) -> float:
        return math.fsum(self.durations)

    def edges(self) -> np.ndarray:
        """Segment boundary times [0, t1, ..., t]."""
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def zeroth_moment(self) -> float:
        return math.fsum(d * a for d, a in zip(self.durations, self.amplitudes))

    def integral_until(self, time) -> np.ndarray:
        """Exact running integral of G over [0, time]; broadcasts over time."""
        t = np.asarray(time, dtype=float)
        edges = self.edges()
        amps = np.asarray(self.amplitudes)
        seg_int = np.concatenate([[0.0], np.cumsum(np.asarray(self.durations) * amps)])
        idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(amps) - 1)
        return seg_int[idx] + amps[idx] * (np.clip(t, 0.0, edges[-1]) - edges[idx])

    def scaled_in_time(self, factor: float) -> "GradientWaveform":
        """Dilate all durations by `factor` (amplitudes unchanged)."""
        return GradientWaveform(tuple(d * factor for d in self.durations), self.amplitudes)

    def reversed(self) -> "GradientWaveform":
        return GradientWaveform(self.durations[::-1], self.amplitudes[::-1])


@dataclass(frozen=True)
class PgseTiming:
    """Pulsed-gradient spin-echo timing: pulses of length delta, onset gap Delta.

    Total diffusion time is t = delta + Delta; delta = Delta = t/2 is the
    constant-gradient (Hahn) spin echo.
    """

    delta: float
    Delta: float
    G: float

    def __post_init__(self):
        if not 0 < self.delta <= self.Delta:
            raise ValueError(f"need 0 < delta <= Delta, got delta={self.delta}, Delta={self.Delta}")

    @property
    def t(self) -> float:
        return self.delta + self.Delta


def pgse_waveform(timing: PgseTiming) -> GradientWaveform:
    """Effective PGSE gradient: +G on [0, delta], 0, -G on [Delta, Delta+delta]."""
    if timing.delta == timing.Delta:
        return GradientWaveform((timing.delta, timing.delta), (timing.G, -timing.G))
    gap = timing.Delta - timing.delta
    return GradientWaveform((timing.delta, gap, timing.delta), (timing.G, 0.0, -timing.G))


def hahn_waveform(G: float, t: float) -> GradientWaveform:
    """Constant-gradient spin echo: +G then -G, each for t/2."""
    return pgse_waveform(PgseTiming(delta=t / 2.0, Delta=t / 2.0, G=G))


def filter_value(waveform: GradientWaveform, omega):
    """F_t(omega), broadcasting over ndarray omega.

    Each segment contributes a_j * h_j * sinc(omega h_j / 2) * exp(-i omega m_j)
    (h_j duration, m_j mid-time), which is the closed-form segment Fourier
    integral with the omega -> 0 limit built in.  The result is real,
    non-negative and even in omega.
    """
    om = np.asarray(omega, dtype=float)
    d = np.asarray(waveform.durations)
    a = np.asarray(waveform.amplitudes)
    edges = waveform.edges()
    mids = 0.5 * (edges[:-1] + edges[1:])
    x = om[..., None]
    core = a * d * _sinc(0.5 * x * d)
    re = (core * np.cos(x * mids)).sum(axis=-1)
    im = (core * np.sin(x * mids)).sum(axis=-1)
    return (re * re + im * im) / (2.0 * math.pi)


def pgse_filter_analytic(timing: PgseTiming, omega):
    """Closed-form PGSE filter (G^2/2pi) |4 sin(w d/2) sin(w D/2) / w|^2."""
    om = np.asarray(omega, dtype=float)
    sd = _sinc(0.5 * om * timing.delta)
    sD = _sinc(0.5 * om * timing.Delta)
    return (timing.G ** 2 / (2.0 * math.pi)) * (
        om * timing.delta * timing.Delta * sd * sD
    ) ** 2


def filter_bandpass_center(waveform: GradientWaveform, n_scan: int = 4096) -> float | None:
    """Location of the filter's dominant lobe on (0, 40 pi / t].

    Dense scan plus golden-section refinement; None for an all-zero filter.
    """
    t = waveform.duration
    omegas = np.linspace(0.0, 40.0 * math.pi / t, n_scan + 1)[1:]
    values = filter_value(waveform, omegas)
    peak = values.max()
    if peak <= 0.0:
        return None
    i = int(values.argmax())
    lo = omegas[max(i - 1, 0)]
    hi = omegas[min(i + 1, len(omegas) - 1)]
    # golden-section maximisation on [lo, hi]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = filter_value(waveform, c)
    fd = filter_value(waveform, d)
    for _ in range(200):
        if b - a < 1e-12 * t ** -1 + 1e-15 * b:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = filter_value(waveform, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = filter_value(waveform, d)
    return 0.5 * (a + b)


def save_waveform_csv(waveform: GradientWaveform, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["duration_s", "amplitude_T_per_m"])
        for d, a in zip(waveform.durations, waveform.amplitudes):
            writer.writerow([repr(float(d)), repr(float(a))])


def load_waveform_csv(path) -> GradientWaveform:
    durations, amplitudes = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["duration_s", "amplitude_T_per_m"]:
            raise ValueError(f"unexpected waveform CSV header: {header}")
        for row in reader:
            if not row:
                continue
            durations.append(float(row[0]))
            amplitudes.append(float(row[1]))
    return GradientWaveform(tuple(durations), tuple(amplitudes))


def save_filter_csv(waveform: GradientWaveform, omegas, path) -> None:
    values = filter_value(waveform, np.asarray(omegas, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega_rad_per_s", "F"])
        for om, f in zip(np.asarray(omegas, dtype=float), values):
            writer.writerow([repr(float(om)), repr(float(f))])
