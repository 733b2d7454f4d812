"""Physical constants, SI unit conversion and characteristic length scales.

Everything inside the package is strict SI (metres, seconds, tesla,
rad s^-1 T^-1).  Convenience units (micrometres, milliseconds, G/cm, ...)
exist only at the CLI boundary through :func:`convert_units`.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum

# Proton gyromagnetic ratio, rad s^-1 T^-1 (CODATA recommended value).
PROTON_GAMMA = 2.6752218744e8


class Geometry(str, Enum):
    """Compartment geometry restricting the diffusion."""

    GENERIC = "generic"        # single-pole (Lorentzian) spectrum, no shape attached
    PLANAR = "planar"          # slab of width a, gradient across the slab
    CYLINDER = "cylinder"      # cylinder of diameter d, gradient perpendicular to axis
    SPHERE = "sphere"          # sphere of diameter d


# Restriction length per unit compartment size.  The cylinder factor is the
# conventional 0.37*d rule for gradients perpendicular to the axis; the slab
# factor is exact for the eigenmode expansion: ell_c = a / 30^(1/4).
CYLINDER_ELL_C_PER_DIAMETER = 0.37
PLANAR_ELL_C_PER_WIDTH = 30.0 ** -0.25


@dataclass(frozen=True)
class PhysicalConstants:
    """Nuclear constants entering the signal model.

    gamma : gyromagnetic ratio in rad s^-1 T^-1 (proton by default).
    """

    gamma: float = PROTON_GAMMA

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class TissueModel:
    """Single-compartment tissue description.

    ell_c    : restriction length, m
    D0       : free diffusion coefficient, m^2 s^-1
    T2       : transverse relaxation time, s (math.inf = relaxation-free)
    geometry : compartment shape; GENERIC means "ell_c given directly"
    size     : compartment size (slab width / diameter), m, when the model
               was built from a geometric size; None otherwise
    """

    ell_c: float
    D0: float
    T2: float = math.inf
    geometry: Geometry = Geometry.GENERIC
    size: float | None = None

    def __post_init__(self):
        if not self.ell_c > 0:
            raise ValueError(f"ell_c must be positive, got {self.ell_c}")
        if not self.D0 > 0:
            raise ValueError(f"D0 must be positive, got {self.D0}")
        if not self.T2 > 0:
            raise ValueError(f"T2 must be positive, got {self.T2}")
        if self.size is not None and not self.size > 0:
            raise ValueError(f"size must be positive, got {self.size}")

    @property
    def tau_c(self) -> float:
        """Correlation time from the Einstein relation ell_c^2 = 2 D0 tau_c."""
        return self.ell_c ** 2 / (2.0 * self.D0)

    @classmethod
    def from_tau_c(cls, tau_c: float, D0: float, **kwargs) -> "TissueModel":
        if not tau_c > 0:
            raise ValueError(f"tau_c must be positive, got {tau_c}")
        return cls(ell_c=math.sqrt(2.0 * D0 * tau_c), D0=D0, **kwargs)

    @classmethod
    def from_cylinder_diameter(cls, d: float, D0: float, T2: float = math.inf) -> "TissueModel":
        """Cylinder perpendicular to the gradient: ell_c = 0.37 d."""
        return cls(ell_c=CYLINDER_ELL_C_PER_DIAMETER * d, D0=D0, T2=T2,
                   geometry=Geometry.CYLINDER, size=d)

    @classmethod
    def from_planar_width(cls, a: float, D0: float, T2: float = math.inf) -> "TissueModel":
        """Slab of width a with the gradient across it: ell_c = a / 30^(1/4)."""
        return cls(ell_c=PLANAR_ELL_C_PER_WIDTH * a, D0=D0, T2=T2,
                   geometry=Geometry.PLANAR, size=a)

    @classmethod
    def from_sphere_diameter(cls, d: float, D0: float, T2: float = math.inf) -> "TissueModel":
        """Sphere of diameter d; the ell_c/d factor comes from the eigenmode sum."""
        from .spectra import sphere_ell_c_factor  # deferred: spectra imports units

        return cls(ell_c=sphere_ell_c_factor() * d, D0=D0, T2=T2,
                   geometry=Geometry.SPHERE, size=d)

    def with_ell_c(self, ell_c: float) -> "TissueModel":
        """Copy with a rescaled restriction length (size rescales along)."""
        size = None if self.size is None else self.size * (ell_c / self.ell_c)
        return replace(self, ell_c=ell_c, size=size)


@dataclass(frozen=True)
class LengthScales:
    """The characteristic lengths of a diffusion-weighted acquisition.

    ell_G  : dephasing length (2 D0 / (gamma G))^(1/3), m
    ell_c  : restriction length, m
    ell_D  : diffusion length sqrt(2 D0 t), m
    ell_T2 : relaxation length sqrt(2 D0 T2), m (inf for T2 = inf)
    """

    ell_G: float
    ell_c: float
    ell_D: float
    ell_T2: float


def length_scales(constants: PhysicalConstants, tissue: TissueModel,
                  G: float, t: float) -> LengthScales:
    """Evaluate all characteristic length scales for gradient G and time t.

    Raises ValueError for non-positive G or t (ell_G diverges at G = 0).
    """
    if not G > 0:
        raise ValueError(f"G must be positive, got {G}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    ell_G = (2.0 * tissue.D0 / (constants.gamma * G)) ** (1.0 / 3.0)
    ell_D = math.sqrt(2.0 * tissue.D0 * t)
    ell_T2 = math.inf if math.isinf(tissue.T2) else math.sqrt(2.0 * tissue.D0 * tissue.T2)
    return LengthScales(ell_G=ell_G, ell_c=tissue.ell_c, ell_D=ell_D, ell_T2=ell_T2)


# SI factor per unit symbol, grouped by dimension.  Conversion is allowed
# only inside a group; factors are exact powers of ten.
_UNIT_GROUPS = {
    "length": {"m": 1.0, "um": 1e-6},
    "time": {"s": 1.0, "ms": 1e-3},
    "gradient": {"T/m": 1.0, "mT/m": 1e-3, "G/cm": 1e-2},
    "diffusivity": {"m^2/s": 1.0, "cm^2/s": 1e-4, "um^2/ms": 1e-9},
}

_UNIT_TO_GROUP = {
    unit: group for group, units in _UNIT_GROUPS.items() for unit in units
}


def convert_units(value: float, from_unit: str, to_unit: str) -> float:
    """Exact factor conversion between compatible units.

    Supported symbols: m, um | s, ms | T/m, mT/m, G/cm | m^2/s, cm^2/s,
    um^2/ms.  Unknown or dimensionally mixed pairs raise ValueError.
    """
    try:
        group_from = _UNIT_TO_GROUP[from_unit]
        group_to = _UNIT_TO_GROUP[to_unit]
    except KeyError as exc:
        raise ValueError(f"unknown unit {exc.args[0]!r}") from None
    if group_from != group_to:
        raise ValueError(
            f"cannot convert {from_unit!r} ({group_from}) to {to_unit!r} ({group_to})"
        )
    factors = _UNIT_GROUPS[group_from]
    return value * (factors[from_unit] / factors[to_unit])
