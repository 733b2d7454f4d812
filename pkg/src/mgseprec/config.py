"""Flat key-value run configuration with explicit units at the boundary.

Config files hold one ``key = value`` pair per line (``#`` comments allowed);
CLI overrides use the same ``key=value`` syntax and win over file values.
Quantities carry unit suffixes: lengths default to um, times to ms, while
gradients and diffusivities require an explicit unit (mT/m, G/cm, T/m;
cm^2/s, um^2/ms, m^2/s).  Everything is normalized to SI on parsing; unknown
keys are rejected.
"""

import math
from dataclasses import dataclass

from .units import PROTON_GAMMA, Geometry, TissueModel, convert_units
from .waveforms import GradientWaveform, load_waveform_csv
from .fisher import PulseFamily


class ConfigError(ValueError):
    """Invalid or unknown configuration input (CLI exit code 2)."""


_GRADIENT_UNITS = ("T/m", "mT/m", "G/cm")
_DIFFUSIVITY_UNITS = ("m^2/s", "cm^2/s", "um^2/ms")
_LENGTH_UNITS = ("um", "m")
_TIME_UNITS = ("ms", "s")

# SI suffix used when echoing resolved values into CSV headers.
_SI_LABEL = {
    "length": "m",
    "time": "s",
    "gradient": "T/m",
    "diffusivity": "m^2/s",
}


@dataclass(frozen=True)
class KeySpec:
    name: str
    kind: str  # length | time | gradient | diffusivity | float | int | str | choice
    help: str
    default: object = None
    required: bool = False
    choices: tuple = ()

    @property
    def unit_note(self) -> str:
        if self.kind == "length":
            return "length; default unit um"
        if self.kind == "time":
            return "time; default unit ms ('inf' allowed)"
        if self.kind == "gradient":
            return "gradient; unit required: " + "|".join(_GRADIENT_UNITS)
        if self.kind == "diffusivity":
            return "diffusivity; unit required: " + "|".join(_DIFFUSIVITY_UNITS)
        if self.kind == "choice":
            return "one of " + "|".join(self.choices)
        return self.kind


def _split_quantity(raw: str):
    parts = raw.split()
    if len(parts) == 1:
        return parts[0], None
    if len(parts) == 2:
        return parts[0], parts[1]
    raise ConfigError(f"malformed quantity {raw!r}")


def parse_value(spec: KeySpec, raw: str):
    raw = raw.strip()
    try:
        if spec.kind == "length":
            num, unit = _split_quantity(raw)
            unit = unit or "um"
            if unit not in _LENGTH_UNITS:
                raise ConfigError(f"key {spec.name!r}: unsupported length unit {unit!r}")
            return convert_units(float(num), unit, "m")
        if spec.kind == "time":
            num, unit = _split_quantity(raw)
            if num in ("inf", "infinity"):
                return math.inf
            unit = unit or "ms"
            if unit not in _TIME_UNITS:
                raise ConfigError(f"key {spec.name!r}: unsupported time unit {unit!r}")
            return convert_units(float(num), unit, "s")
        if spec.kind == "gradient":
            num, unit = _split_quantity(raw)
            if unit is None:
                raise ConfigError(
                    f"key {spec.name!r}: gradients need an explicit unit "
                    f"({'|'.join(_GRADIENT_UNITS)})")
            if unit not in _GRADIENT_UNITS:
                raise ConfigError(f"key {spec.name!r}: unsupported gradient unit {unit!r}")
            return convert_units(float(num), unit, "T/m")
        if spec.kind == "diffusivity":
            num, unit = _split_quantity(raw)
            if unit is None:
                raise ConfigError(
                    f"key {spec.name!r}: diffusivities need an explicit unit "
                    f"({'|'.join(_DIFFUSIVITY_UNITS)})")
            if unit not in _DIFFUSIVITY_UNITS:
                raise ConfigError(f"key {spec.name!r}: unsupported diffusivity unit {unit!r}")
            return convert_units(float(num), unit, "m^2/s")
        if spec.kind == "float":
            return float(raw)
        if spec.kind == "int":
            return int(raw)
        if spec.kind == "choice":
            if raw not in spec.choices:
                raise ConfigError(
                    f"key {spec.name!r}: value {raw!r} not in {'|'.join(spec.choices)}")
            return raw
        if spec.kind == "str":
            return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"key {spec.name!r}: cannot parse value {raw!r}") from None
    raise ConfigError(f"key {spec.name!r}: unknown kind {spec.kind!r}")


def load_config_file(path) -> dict[str, str]:
    """Read raw key/value strings from a flat config file."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def parse_overrides(pairs) -> dict[str, str]:
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, value = pair.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve(allowed: dict[str, KeySpec], *sources: dict[str, str]) -> dict:
    """Merge raw sources (later wins), reject unknown keys, parse, apply defaults."""
    merged: dict[str, str] = {}
    for source in sources:
        for key, value in source.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = value
    resolved: dict[str, object] = {}
    for name, spec in allowed.items():
        if name in merged:
            resolved[name] = parse_value(spec, merged[name])
        elif spec.required:
            raise ConfigError(f"missing required key {name!r}")
        elif spec.default is not None:
            resolved[name] = spec.default
    return resolved


def help_epilog(allowed: dict[str, KeySpec]) -> str:
    lines = ["configuration keys (config file or --set KEY=VALUE):"]
    for spec in allowed.values():
        extra = ""
        if spec.required:
            extra = " [required]"
        elif spec.default is not None:
            extra = f" [default: {spec.default}]"
        lines.append(f"  {spec.name:<12} {spec.unit_note:<40} {spec.help}{extra}")
    return "\n".join(lines)


# execution details that must not break byte-identity across runs
_UNECHOED_KEYS = {"workers", "out", "hist_out", "plot_script"}


def header_lines(allowed: dict[str, KeySpec], resolved: dict) -> list[str]:
    """Resolved-config comment lines (SI values) embedded in output CSVs."""
    lines = []
    for name, spec in allowed.items():
        if name not in resolved or name in _UNECHOED_KEYS:
            continue
        value = resolved[name]
        label = _SI_LABEL.get(spec.kind)
        suffix = f"_{label}" if label else ""
        suffix = suffix.replace("/", "_per_").replace("^", "")
        lines.append(f"{name}{suffix} = {value!r}" if isinstance(value, float)
                     else f"{name}{suffix} = {value}")
    return lines


# --- shared key groups ------------------------------------------------------

def tissue_keys() -> dict[str, KeySpec]:
    return {
        "geometry": KeySpec("geometry", "choice", "compartment geometry",
                            default="generic",
                            choices=("generic", "planar", "cylinder", "sphere")),
        "ell_c": KeySpec("ell_c", "length", "restriction length (geometry=generic)"),
        "d": KeySpec("d", "length", "diameter (geometry=cylinder|sphere)"),
        "a": KeySpec("a", "length", "slab width (geometry=planar)"),
        "D0": KeySpec("D0", "diffusivity", "free diffusion coefficient",
                      default=1e-9),
        "T2": KeySpec("T2", "time", "transverse relaxation time", default=math.inf),
        "gamma": KeySpec("gamma", "float", "gyromagnetic ratio, rad/s/T",
                         default=PROTON_GAMMA),
    }


def tissue_from_config(cfg: dict) -> TissueModel:
    geometry = Geometry(cfg["geometry"])
    D0, T2 = cfg["D0"], cfg["T2"]
    for key, geoms in (("ell_c", (Geometry.GENERIC,)),
                       ("d", (Geometry.CYLINDER, Geometry.SPHERE)),
                       ("a", (Geometry.PLANAR,))):
        if key in cfg and geometry not in geoms:
            raise ConfigError(
                f"key {key!r} only applies to geometry "
                f"{'|'.join(g.value for g in geoms)}, got {geometry.value!r}")
    try:
        if geometry is Geometry.GENERIC:
            if "ell_c" not in cfg:
                raise ConfigError("missing required key 'ell_c' (geometry=generic)")
            return TissueModel(ell_c=cfg["ell_c"], D0=D0, T2=T2)
        if geometry is Geometry.PLANAR:
            if "a" not in cfg:
                raise ConfigError("missing required key 'a' (geometry=planar)")
            return TissueModel.from_planar_width(cfg["a"], D0, T2)
        if "d" not in cfg:
            raise ConfigError(f"missing required key 'd' (geometry={geometry.value})")
        if geometry is Geometry.CYLINDER:
            return TissueModel.from_cylinder_diameter(cfg["d"], D0, T2)
        return TissueModel.from_sphere_diameter(cfg["d"], D0, T2)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def family_from_config(cfg: dict) -> PulseFamily:
    try:
        return PulseFamily(cfg.get("delta_frac", 0.5))
    except ValueError as exc:
        raise ConfigError(f"key 'delta_frac': {exc}") from None


def waveform_from_config(cfg: dict, G: float, t: float) -> GradientWaveform:
    if "waveform_csv" in cfg:
        try:
            return load_waveform_csv(cfg["waveform_csv"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"key 'waveform_csv': {exc}") from None
    return family_from_config(cfg).waveform(G, t)
