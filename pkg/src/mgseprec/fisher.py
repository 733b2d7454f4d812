"""Fisher information and error bounds for restriction-length estimation.

The quantum Fisher information carried by the normalized echo signal
M = exp(-beta) about the restriction length ell_c is

    F_Q = M^2 / (1 - M^2) * (d ln M / d ell_c)^2,

giving a per-measurement relative error eps = 1 / (ell_c sqrt(F_Q)).  Because
the spectral sensitivity obeys |dS/d ell_c| <= 4 S / ell_c, eps is bounded
below by a function of the contrast alone, whose minimum over M in (0, 1)

    eps_0 = sqrt(1 - M_0^2) / (4 (-ln M_0) M_0)  ~ 0.621,
    -ln M_0 = 1 + W(-2 e^-2)/2                   ~ 0.797,

is the per-measurement error floor (W = principal Lambert branch).  With
transverse relaxation the floor rises to exp(t/T2) * eps_0.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from . import attenuation
from .spectra import expansion_for, geometry_spectrum
from .units import PROTON_GAMMA, TissueModel
from .waveforms import PgseTiming, pgse_waveform


def lambert_w0(x: float, tol: float = 1e-15, max_iter: int = 100) -> float:
    """Principal branch of the Lambert W function for real x >= -1/e.

    Halley iteration from a series/log initial guess; absolute accuracy is
    better than 1e-14 over the domain.
    """
    branch = -math.exp(-1.0)
    if x < branch:
        if x > branch * (1.0 + 1e-12):  # tolerate representation noise at -1/e
            return -1.0
        raise ValueError(f"lambert_w0 requires x >= -1/e, got {x}")
    if x == 0.0:
        return 0.0
    p2 = 2.0 * (math.e * x + 1.0)
    if p2 <= 0.0:
        return -1.0
    if p2 < 1e-8:
        # series around the branch point, error O(p^4)
        p = math.sqrt(p2)
        return -1.0 + p - p2 / 6.0 + 11.0 * p * p2 / 72.0
    if x < -0.25:
        w = -1.0 + math.sqrt(p2)
    elif x < 1.5:
        w = x * (1.0 - x + 1.5 * x * x) if abs(x) < 0.5 else 0.5 * math.log1p(x)
    else:
        lx = math.log(x)
        llx = math.log(lx)
        w = lx - llx + llx / lx
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        dw = f / denom
        w -= dw
        if abs(dw) <= tol * (1.0 + abs(w)):
            break
    return w


@dataclass(frozen=True)
class UltimateBound:
    """Per-measurement error floor and the contrast that attains it.

    M_opt      : optimal normalized contrast M_0
    ln_M_opt   : -ln M_0
    epsilon_0  : minimal relative error per measurement
    """

    M_opt: float
    ln_M_opt: float
    epsilon_0: float


@lru_cache(maxsize=1)
def ultimate_bound() -> UltimateBound:
    """Evaluate the error floor from its Lambert-W closed form."""
    w = lambert_w0(-2.0 * math.exp(-2.0))
    ln_m = 1.0 + 0.5 * w
    m0 = math.exp(-ln_m)
    eps0 = math.sqrt((1.0 - m0) * (1.0 + m0)) / (4.0 * ln_m * m0)
    return UltimateBound(M_opt=m0, ln_M_opt=ln_m, epsilon_0=eps0)


def epsilon_0() -> float:
    return ultimate_bound().epsilon_0


def error_lower_envelope(M_norm: float) -> float:
    """Contrast-only lower bound sqrt(1 - M^2) / (4 (-ln M) M) on eps.

    Returns +inf at the degenerate endpoints M -> 0, 1.
    """
    if not 0.0 < M_norm < 1.0:
        return math.inf
    ln_m = -math.log(M_norm)
    return math.sqrt((1.0 - M_norm) * (1.0 + M_norm)) / (4.0 * ln_m * M_norm)


def ultimate_bound_bruteforce(xatol: float = 1e-12):
    """Independent check: minimize the contrast envelope numerically.

    Returns (M_opt, epsilon_0) from bounded scalar minimization; no Lambert-W
    machinery involved.
    """
    res = minimize_scalar(error_lower_envelope, bounds=(1e-6, 1.0 - 1e-9),
                          method="bounded", options={"xatol": xatol})
    return float(res.x), float(res.fun)


def t2_bound(t: float, T2: float) -> float:
    """Relaxation-degraded error floor exp(t/T2) * eps_0."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if not T2 > 0:
        raise ValueError(f"T2 must be positive, got {T2}")
    return math.exp(t / T2) * epsilon_0()


# ---------------------------------------------------------------------------
# Fisher information of acquisition protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PulseFamily:
    """PGSE timing family scaled by the total diffusion time.

    delta = delta_frac * t and Delta = (1 - delta_frac) * t, requiring
    0 < delta_frac <= 1/2.  delta_frac = 1/2 is the constant-gradient
    (Hahn) echo.
    """

    delta_frac: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.delta_frac <= 0.5:
            raise ValueError(f"delta_frac must be in (0, 1/2], got {self.delta_frac}")

    @property
    def is_hahn(self) -> bool:
        return self.delta_frac == 0.5

    def timing(self, G: float, t: float) -> PgseTiming:
        return PgseTiming(delta=self.delta_frac * t, Delta=(1.0 - self.delta_frac) * t, G=G)

    def waveform(self, G: float, t: float):
        return pgse_waveform(self.timing(G, t))


HAHN = PulseFamily(0.5)


@dataclass(frozen=True)
class PrecisionResult:
    """Per-measurement estimation precision at one acquisition point.

    qfi        : Fisher information about ell_c (relaxation-free), m^-2
    epsilon    : relative error per measurement, 1/(ell_c sqrt(qfi))
    epsilon_T2 : relative error with the exp(-t/T2) contrast penalty
    N_equiv    : (epsilon_eff / eps_0)^2, measurements needed to reach the
                 floor's per-measurement precision (inf when degenerate)
    t          : diffusion time, s
    """

    qfi: float
    epsilon: float
    epsilon_T2: float
    N_equiv: float
    t: float


def _precision_from(beta, dbeta_dlc, ell_c, t, T2, include_T2):
    """Assemble (qfi, eps, eps_T2, N_equiv) arrays from beta and sensitivity."""
    beta = np.asarray(beta, dtype=float)
    sens = np.asarray(dbeta_dlc, dtype=float)  # = |d ln M / d ell_c|
    t = np.asarray(t, dtype=float)

    def amplitude(x):
        # M^2/(1-M^2) with M = exp(-x), stable for small x
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(-2.0 * x) / -np.expm1(-2.0 * x)

    ok = (beta > 0.0) & (sens > 0.0) & np.isfinite(beta)
    amp = amplitude(np.where(ok, beta, 1.0))
    qfi = np.where(ok, amp * sens ** 2, 0.0)
    with np.errstate(divide="ignore"):
        eps = np.where(ok, 1.0 / (ell_c * np.sqrt(amp) * sens), np.inf)
    if math.isinf(T2):
        eps_t2 = eps
    else:
        amp_t2 = amplitude(np.where(ok, beta + t / T2, 1.0))
        with np.errstate(divide="ignore"):
            eps_t2 = np.where(ok, 1.0 / (ell_c * np.sqrt(amp_t2) * sens), np.inf)
    eps_eff = eps_t2 if include_T2 else eps
    with np.errstate(over="ignore"):
        n_equiv = (eps_eff / epsilon_0()) ** 2
    return qfi, eps, eps_t2, n_equiv


def hahn_precision(tissue: TissueModel, G, t, gamma: float = PROTON_GAMMA,
                   include_T2: bool = False):
    """Vectorized (qfi, eps, eps_T2, N_equiv) for the Hahn family.

    Broadcasts over ndarray gradient strengths and diffusion times.
    """
    beta, dbeta_dtau = attenuation.hahn_beta_dtau(G, t, tissue.tau_c, tissue.D0, gamma)
    dbeta_dlc = dbeta_dtau * (tissue.ell_c / tissue.D0)  # d tau_c/d ell_c = ell_c/D0
    return _precision_from(beta, dbeta_dlc, tissue.ell_c, t, tissue.T2, include_T2)


def qfi(tissue: TissueModel, family: PulseFamily, G: float, t: float,
        gamma: float = PROTON_GAMMA, include_T2: bool = False,
        spectrum_model: str = "lorentzian", order: int = 50) -> PrecisionResult:
    """Fisher information and Cramer-Rao error for one acquisition point.

    spectrum_model "lorentzian" uses the single-pole correlation model of the
    tissue (exact time-domain engine; analytic ell_c derivative through
    tau_c).  "expansion" uses the geometry eigenmode spectrum with the
    frequency-domain engine.  The T2 factor, when included, degrades the
    amplitude term only: it carries no information about ell_c.
    """
    if not G >= 0:
        raise ValueError(f"G must be non-negative, got {G}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if spectrum_model == "lorentzian":
        if family.is_hahn:
            beta, dbeta_dtau = attenuation.hahn_beta_dtau(
                G, t, tissue.tau_c, tissue.D0, gamma)
        else:
            beta, dbeta_dtau = attenuation.beta_time_exact_dtau(
                family.waveform(G, t), tissue.D0, tissue.tau_c, gamma)
        dbeta_dlc = dbeta_dtau * (tissue.ell_c / tissue.D0)
    elif spectrum_model == "expansion":
        spectrum = geometry_spectrum(expansion_for(tissue, order), tissue.D0)
        beta, dbeta_dlc = attenuation.beta_sensitivity_freq(
            family.waveform(G, t), spectrum, gamma)
        # the expansion's ell_c may differ slightly from the tissue's nominal
        # value; the error is still quoted relative to the tissue ell_c
    else:
        raise ValueError(f"unknown spectrum_model {spectrum_model!r}")
    q, eps, eps_t2, n_equiv = _precision_from(
        beta, dbeta_dlc, tissue.ell_c, t, tissue.T2, include_T2)
    return PrecisionResult(qfi=float(q), epsilon=float(eps),
                           epsilon_T2=float(eps_t2), N_equiv=float(n_equiv), t=t)
