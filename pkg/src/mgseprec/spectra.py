"""Displacement power spectra of restricted diffusion.

The position autocorrelation of a molecule diffusing in a closed compartment
is a sum of decaying exponentials, one per Neumann-Laplacian eigenmode of the
cross-section.  Its spectrum is therefore a sum of Lorentzians

    S(omega) = sum_k D0 * b_k * tau_k^2 / (pi * (1 + omega^2 tau_k^2)),

with dimensionless mode weights b_k and correlation times tau_k.  The single
Lorentzian (b_1 = 1, tau_1 = tau_c) describes the generic exponential
correlation D0 * tau_c * exp(-|dt|/tau_c).

Mode data for slabs, cylinders and spheres is computed at runtime from the
eigenvalue problem (Bessel-derivative roots for the curved geometries); every
expansion is checked against the compartment's exact displacement variance.
"""

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import jvp, spherical_jn

from .units import Geometry, TissueModel

# Relative variance deficit above which a truncated expansion is suspect.
TRUNCATION_TOLERANCE = 0.01

DEFAULT_EXPANSION_ORDER = 50


class TruncationWarning(UserWarning):
    """Raised when a geometry expansion retains too little displacement variance."""


@dataclass(frozen=True)
class SpectralDensity:
    """Multi-Lorentzian displacement power spectrum.

    weights : mode weights b_k (dimensionless)
    taus    : mode correlation times tau_k, s
    D0      : free diffusion coefficient, m^2 s^-1
    """

    weights: tuple[float, ...]
    taus: tuple[float, ...]
    D0: float

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.taus):
            raise ValueError("weights and taus must be non-empty and of equal length")
        if any(b <= 0 for b in self.weights) or any(t <= 0 for t in self.taus):
            raise ValueError("all weights and correlation times must be positive")
        if not self.D0 > 0:
            raise ValueError(f"D0 must be positive, got {self.D0}")

    @property
    def n_terms(self) -> int:
        return len(self.weights)

    @property
    def tau_max(self) -> float:
        return max(self.taus)

    @property
    def variance(self) -> float:
        """Displacement variance D0 * sum_k b_k tau_k = integral of S, m^2."""
        return self.D0 * math.fsum(b * t for b, t in zip(self.weights, self.taus))

    def value(self, omega):
        """S(omega); broadcasts over ndarray omega (rad/s)."""
        om = np.asarray(omega, dtype=float)
        b = np.asarray(self.weights)
        tau = np.asarray(self.taus)
        terms = b * tau ** 2 / (1.0 + (om[..., None] * tau) ** 2)
        return (self.D0 / math.pi) * terms.sum(axis=-1)

    def sensitivity(self, omega):
        """dS/d(ell_c) at this spectrum's own restriction length.

        Uses d(tau_k)/d(ell_c) = 2 tau_k / ell_c (tau_k scales with the
        squared compartment size), which gives

            dS/d(ell_c) = (4/ell_c) sum_k D0 b_k tau_k^2 / (pi (1+w^2 tau_k^2)^2)

        and is bounded by 4 S / ell_c, with equality at omega -> 0.
        """
        om = np.asarray(omega, dtype=float)
        b = np.asarray(self.weights)
        tau = np.asarray(self.taus)
        ell_c = restriction_length_of(self)
        terms = b * tau ** 2 / (1.0 + (om[..., None] * tau) ** 2) ** 2
        return (4.0 / ell_c) * (self.D0 / math.pi) * terms.sum(axis=-1)


def lorentzian_spectrum(tissue: TissueModel) -> SpectralDensity:
    """Single-pole spectrum S = D0 tau_c^2 / (pi (1 + w^2 tau_c^2))."""
    return SpectralDensity(weights=(1.0,), taus=(tissue.tau_c,), D0=tissue.D0)


def restriction_length_of(spectrum: SpectralDensity) -> float:
    """Restriction length from the rms correlation time of the spectrum.

    ell_c^2 = 2 D0 sqrt(sum_k b_k tau_k^2); collapses to the Einstein
    relation for a single Lorentzian.
    """
    s = math.fsum(b * t * t for b, t in zip(spectrum.weights, spectrum.taus))
    return math.sqrt(2.0 * spectrum.D0 * math.sqrt(s))


@dataclass(frozen=True)
class GeometryExpansion:
    """Truncated eigenmode expansion of a compartment cross-section.

    geometry : PLANAR (size = slab width) | CYLINDER | SPHERE (size = diameter)
    size     : compartment size, m
    order    : number of retained Lorentzian terms (>= 1)
    """

    geometry: Geometry
    size: float
    order: int = DEFAULT_EXPANSION_ORDER

    def __post_init__(self):
        if self.geometry not in (Geometry.PLANAR, Geometry.CYLINDER, Geometry.SPHERE):
            raise ValueError(f"no eigenmode expansion for geometry {self.geometry}")
        if not self.size > 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")


def _scan_roots(f, n_roots: int, x_start: float, x_stop: float, n_scan: int):
    """First n_roots zeros of f by sign-change bracketing plus brentq."""
    xs = np.linspace(x_start, x_stop, n_scan)
    vals = f(xs)
    roots = []
    for i in range(len(xs) - 1):
        if vals[i] == 0.0:
            roots.append(xs[i])
        elif vals[i] * vals[i + 1] < 0.0:
            roots.append(brentq(f, xs[i], xs[i + 1], xtol=1e-13, rtol=8.9e-16))
        if len(roots) >= n_roots:
            break
    if len(roots) < n_roots:
        raise RuntimeError(f"found only {len(roots)}/{n_roots} roots up to {x_stop}")
    return np.array(roots[:n_roots])


@lru_cache(maxsize=None)
def bessel_j1prime_roots(n: int) -> tuple[float, ...]:
    """First n positive roots of J1'(x) = 0 (cylinder eigenvalues)."""
    mu = _scan_roots(lambda x: jvp(1, x, 1), n, 1e-3, (n + 3) * math.pi, 40 * (n + 3))
    return tuple(mu)


@lru_cache(maxsize=None)
def spherical_j1prime_roots(n: int) -> tuple[float, ...]:
    """First n positive roots of j1'(x) = 0 (sphere eigenvalues)."""
    mu = _scan_roots(lambda x: spherical_jn(1, x, derivative=True), n,
                     1e-3, (n + 3) * math.pi, 40 * (n + 3))
    return tuple(mu)


def _mode_data(geometry: Geometry, order: int):
    """Dimensionless eigenroots mu_k and weights b_k; length scale convention.

    Correlation times are tau_k = L^2 / (D0 mu_k^2) with L the slab width
    (planar) or the radius (cylinder, sphere).
    """
    if geometry is Geometry.PLANAR:
        # cos(k pi x / a) modes; only odd k couples to the position.
        k = 2 * np.arange(order) + 1
        mu = k * math.pi
        b = 8.0 / mu ** 2
    elif geometry is Geometry.CYLINDER:
        mu = np.array(bessel_j1prime_roots(order))
        b = 2.0 / (mu ** 2 - 1.0)
    elif geometry is Geometry.SPHERE:
        mu = np.array(spherical_j1prime_roots(order))
        b = 2.0 / (mu ** 2 - 2.0)
    else:
        raise ValueError(f"no eigenmode expansion for geometry {geometry}")
    return mu, b


def analytic_variance(geometry: Geometry, size: float) -> float:
    """Exact displacement variance along the gradient axis, m^2."""
    if geometry is Geometry.PLANAR:
        return size ** 2 / 12.0
    if geometry is Geometry.CYLINDER:
        return (size / 2.0) ** 2 / 4.0
    if geometry is Geometry.SPHERE:
        return (size / 2.0) ** 2 / 5.0
    raise ValueError(f"no analytic variance for geometry {geometry}")


def geometry_spectrum(expansion: GeometryExpansion, D0: float) -> SpectralDensity:
    """Multi-Lorentzian spectrum of a slab, cylinder or sphere.

    Warns with TruncationWarning when the retained modes carry less than
    99% of the compartment's displacement variance.
    """
    mu, b = _mode_data(expansion.geometry, expansion.order)
    L = expansion.size if expansion.geometry is Geometry.PLANAR else expansion.size / 2.0
    tau = L ** 2 / (D0 * mu ** 2)
    spectrum = SpectralDensity(weights=tuple(b), taus=tuple(tau), D0=D0)
    target = analytic_variance(expansion.geometry, expansion.size)
    deficit = 1.0 - spectrum.variance / target
    if deficit > TRUNCATION_TOLERANCE:
        warnings.warn(
            f"expansion of order {expansion.order} retains only "
            f"{100 * (1 - deficit):.2f}% of the displacement variance",
            TruncationWarning,
            stacklevel=2,
        )
    return spectrum


def expansion_for(tissue: TissueModel, order: int = DEFAULT_EXPANSION_ORDER) -> GeometryExpansion:
    """Eigenmode expansion matching a tissue model built from a geometric size."""
    if tissue.geometry is Geometry.GENERIC or tissue.size is None:
        raise ValueError("tissue has no compartment geometry/size to expand")
    return GeometryExpansion(geometry=tissue.geometry, size=tissue.size, order=order)


@lru_cache(maxsize=None)
def sphere_ell_c_factor(order: int = DEFAULT_EXPANSION_ORDER) -> float:
    """Restriction length per unit sphere diameter (about 0.327)."""
    spectrum = geometry_spectrum(
        GeometryExpansion(Geometry.SPHERE, size=1.0, order=order), D0=1.0
    )
    return restriction_length_of(spectrum)


def save_spectrum_csv(spectrum: SpectralDensity, omegas, path) -> None:
    """Two-column dump (omega_rad_per_s, S) for plotting."""
    values = spectrum.value(np.asarray(omegas, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega_rad_per_s", "S_m2_s"])
        for om, s in zip(np.asarray(omegas, dtype=float), values):
            writer.writerow([repr(float(om)), repr(float(s))])
