"""Acquisition-protocol optimization: optimal diffusion time, admissible
gradient window, and precision maps over (t, G) and (d, G) grids.

The dimensionless efficiency parameter gamma^2 G^2 D0 tau_c^3 (equal to
(ell_c/ell_G)^6 / 2 with the length conventions used here) controls
attainability: well below one the error floor is reachable and the optimal
time follows the closed form t_opt = (-ln M_0) / (gamma^2 G^2 D0 tau_c^2);
near or above one the optimum saturates where the signal has decayed to
about 1/e.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import fisher
from .fisher import HAHN, PulseFamily, epsilon_0
from .units import PROTON_GAMMA, Geometry, TissueModel

DEFAULT_WINDOW_MARGIN = 3.0


class NoOptimumError(RuntimeError):
    """The precision objective is flat (no contrast anywhere in range)."""


@dataclass(frozen=True)
class OptimizationOutcome:
    """Result of optimizing the diffusion time at fixed gradient strength.

    t_opt             : maximizer of the Fisher information, s
    epsilon_at_opt    : per-measurement relative error at t_opt (with the
                        T2 penalty when the optimization included it)
    G_window          : admissible gradient window (G_low, G_high), T/m
    N_equiv_at_opt    : (epsilon_at_opt / eps_0)^2
    closed_form_t_opt : restricted-regime prediction (-ln M_0)/(g^2 G^2 D0 tau_c^2)
    validity          : efficiency parameter gamma^2 G^2 D0 tau_c^3
    """

    t_opt: float
    epsilon_at_opt: float
    G_window: tuple[float, float]
    N_equiv_at_opt: float
    closed_form_t_opt: float
    validity: float

    @property
    def window_empty(self) -> bool:
        return self.G_window[0] >= self.G_window[1]


def efficiency_parameter(tissue: TissueModel, G: float, gamma: float = PROTON_GAMMA) -> float:
    """gamma^2 G^2 D0 tau_c^3, i.e. (ell_c / ell_G)^6 / 2."""
    return (gamma * G) ** 2 * tissue.D0 * tissue.tau_c ** 3


def closed_form_optimal_time(tissue: TissueModel, G: float,
                             gamma: float = PROTON_GAMMA) -> float:
    """Restricted-regime optimal time (-ln M_0) / (gamma^2 G^2 D0 tau_c^2)."""
    bound = fisher.ultimate_bound()
    return bound.ln_M_opt / ((gamma * G) ** 2 * tissue.D0 * tissue.tau_c ** 2)


def optimal_time(tissue: TissueModel, G: float, gamma: float = PROTON_GAMMA,
                 include_T2: bool = False, family: PulseFamily = HAHN,
                 rel_tol: float = 1e-4,
                 window_margin: float = DEFAULT_WINDOW_MARGIN) -> OptimizationOutcome:
    """Maximize the Fisher information over the diffusion time at fixed G.

    Derivative-free search on log t: a dense scan brackets the optimum
    (candidates include the closed-form prediction and the 1/e decay
    crossing), then bounded golden/parabolic refinement narrows it to the
    requested relative tolerance.
    """
    if not G > 0:
        raise ValueError(f"G must be positive, got {G}")
    tau_c = tissue.tau_c
    validity = efficiency_parameter(tissue, G, gamma)
    if validity <= 0.0 or not math.isfinite(1.0 / validity):
        raise NoOptimumError("no diffusion contrast at this gradient strength")
    t_closed = closed_form_optimal_time(tissue, G, gamma)
    t_lo = 1e-3 * tau_c
    t_hi = 1e3 * tau_c * max(1.0, 1.0 / validity)
    if include_T2 and not math.isinf(tissue.T2):
        t_hi = min(t_hi, 20.0 * tissue.T2)
    t_hi = max(t_hi, 10.0 * t_lo)

    def eps_of(t):
        if family.is_hahn:
            _, eps, eps_t2, _ = fisher.hahn_precision(tissue, G, t, gamma, include_T2)
        else:
            r = fisher.qfi(tissue, family, G, t, gamma, include_T2)
            eps, eps_t2 = r.epsilon, r.epsilon_T2
        return eps_t2 if include_T2 else eps

    decades = math.log10(t_hi / t_lo)
    n_grid = max(96, int(24 * decades))
    grid = np.logspace(math.log10(t_lo), math.log10(t_hi), n_grid)
    # seed candidates: closed form, and the M ~ 1/e decay crossing
    t_decay = min((1.0 / ((gamma * G) ** 2 * tissue.D0 * tau_c ** 2),
                   (12.0 / ((gamma * G) ** 2 * tissue.D0)) ** (1.0 / 3.0)))
    extra = [t for t in (t_closed, t_decay) if t_lo < t < t_hi]
    grid = np.sort(np.concatenate([grid, np.asarray(extra)]))
    values = np.asarray([eps_of(t) for t in grid])
    if not np.isfinite(values).any():
        raise NoOptimumError("no contrast anywhere in the time bracket")
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda x: eps_of(math.exp(x)),
                          bounds=(math.log(lo), math.log(hi)),
                          method="bounded", options={"xatol": rel_tol})
    t_opt = math.exp(float(res.x))
    eps_opt = float(res.fun)
    if not np.isfinite(eps_opt) or eps_opt > values[i]:
        t_opt, eps_opt = float(grid[i]), float(values[i])
    window = gradient_window(tissue, gamma, margin=window_margin)
    return OptimizationOutcome(
        t_opt=t_opt,
        epsilon_at_opt=eps_opt,
        G_window=window,
        N_equiv_at_opt=(eps_opt / epsilon_0()) ** 2,
        closed_form_t_opt=t_closed,
        validity=validity,
    )


def gradient_window(tissue: TissueModel, gamma: float = PROTON_GAMMA,
                    margin: float = DEFAULT_WINDOW_MARGIN) -> tuple[float, float]:
    """Admissible gradient range for efficient ell_c estimation under T2.

        G_low  = margin / (gamma ell_c^2) * sqrt(2 D0 / T2)
        G_high = (1/margin) * 2 D0 / (gamma ell_c^3)

    margin >= 1 tightens the two strict inequalities symmetrically.  An empty
    window (G_low >= G_high) is a value, not an error; T2 = inf gives
    G_low = 0.
    """
    if not margin >= 1.0:
        raise ValueError(f"margin must be >= 1, got {margin}")
    ell_c = tissue.ell_c
    if math.isinf(tissue.T2):
        g_low = 0.0
    else:
        g_low = margin * math.sqrt(2.0 * tissue.D0 / tissue.T2) / (gamma * ell_c ** 2)
    g_high = 2.0 * tissue.D0 / (gamma * ell_c ** 3) / margin
    return (g_low, g_high)


@dataclass(frozen=True)
class PrecisionMap:
    """Long-form precision map over two log-spaced acquisition axes."""

    axis1_name: str
    axis1: tuple[float, ...]
    axis2_name: str
    axis2: tuple[float, ...]
    value_name: str
    values: tuple[tuple[float, ...], ...]  # shape (len(axis1), len(axis2))
    metadata: tuple[tuple[str, str], ...] = ()

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def csv_lines(self):
        yield f"# axis1={self.axis1_name} axis2={self.axis2_name} value={self.value_name}"
        for key, val in self.metadata:
            yield f"# {key} = {val}"
        yield f"{self.axis1_name},{self.axis2_name},{self.value_name}"
        for x1, row in zip(self.axis1, self.values):
            for x2, v in zip(self.axis2, row):
                yield f"{x1!r},{x2!r},{v!r}"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.csv_lines():
                fh.write(line + "\n")


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if not (lo > 0 and hi > lo and n >= 1):
        raise ValueError(f"invalid log grid ({lo}, {hi}, {n})")
    if n == 1:
        return np.asarray([lo])
    return np.logspace(math.log10(lo), math.log10(hi), n)


def precision_map_tG(tissue: TissueModel, G_grid, t_grid,
                     gamma: float = PROTON_GAMMA,
                     metadata: tuple[tuple[str, str], ...] = ()) -> PrecisionMap:
    """Map of eps_0/eps (T2 included) over diffusion time and gradient.

    Cells with no contrast carry 0 (infinite error).  Evaluation is
    vectorized; output ordering is deterministic.
    """
    t = np.asarray(t_grid, dtype=float)
    G = np.asarray(G_grid, dtype=float)
    if t.size == 0 or G.size == 0:
        raise ValueError("grids must be non-empty")
    t_mesh = t[:, None] + 0.0 * G[None, :]
    g_mesh = 0.0 * t[:, None] + G[None, :]
    _, _, eps_t2, _ = fisher.hahn_precision(tissue, g_mesh, t_mesh, gamma, include_T2=True)
    with np.errstate(divide="ignore"):
        ratio = np.where(np.isfinite(eps_t2), epsilon_0() / eps_t2, 0.0)
    return PrecisionMap(
        axis1_name="t_s", axis1=tuple(float(x) for x in t),
        axis2_name="G_T_per_m", axis2=tuple(float(x) for x in G),
        value_name="eps0_over_eps",
        values=tuple(tuple(float(v) for v in row) for row in ratio),
        metadata=metadata,
    )


def _tissue_for_size(template: TissueModel, size: float) -> TissueModel:
    if template.geometry is Geometry.CYLINDER:
        return TissueModel.from_cylinder_diameter(size, template.D0, template.T2)
    if template.geometry is Geometry.SPHERE:
        return TissueModel.from_sphere_diameter(size, template.D0, template.T2)
    if template.geometry is Geometry.PLANAR:
        return TissueModel.from_planar_width(size, template.D0, template.T2)
    return template.with_ell_c(size)  # generic: axis is ell_c itself


def precision_map_dG(tissue_template: TissueModel, d_grid, G_grid,
                     gamma: float = PROTON_GAMMA, family: PulseFamily = HAHN,
                     metadata: tuple[tuple[str, str], ...] = ()) -> PrecisionMap:
    """Map of (eps/eps_0)^2 at the per-cell optimal diffusion time.

    Every (size, G) cell runs its own time optimization with the T2 penalty;
    cells without an optimum carry +inf.
    """
    d = np.asarray(d_grid, dtype=float)
    G = np.asarray(G_grid, dtype=float)
    if d.size == 0 or G.size == 0:
        raise ValueError("grids must be non-empty")
    rows = []
    for size in d:
        tissue = _tissue_for_size(tissue_template, float(size))
        row = []
        for g in G:
            try:
                outcome = optimal_time(tissue, float(g), gamma,
                                       include_T2=True, family=family)
                row.append((outcome.epsilon_at_opt / epsilon_0()) ** 2)
            except NoOptimumError:
                row.append(math.inf)
        rows.append(tuple(row))
    return PrecisionMap(
        axis1_name="d_m", axis1=tuple(float(x) for x in d),
        axis2_name="G_T_per_m", axis2=tuple(float(x) for x in G),
        value_name="eps_over_eps0_squared",
        values=tuple(rows),
        metadata=metadata,
    )


def measurements_needed(epsilon: float) -> tuple[int, float]:
    """Measurements to match the floor's per-measurement precision.

    Returns (ceil of (eps/eps_0)^2, raw ratio).  eps below eps_0 signals an
    internal inconsistency and raises.
    """
    eps0 = epsilon_0()
    if epsilon < eps0 * (1.0 - 1e-12):
        raise ValueError(f"epsilon {epsilon} below the per-measurement floor {eps0}")
    ratio = (max(epsilon, eps0) / eps0) ** 2
    if math.isinf(ratio):
        return -1, ratio  # flagged-infinite cell
    return math.ceil(ratio - 1e-9 * max(ratio, 1.0)), ratio


def emit_plot_script(map_csv_path: str, script_path: str, title: str) -> None:
    """Write a small gnuplot script that renders a map CSV as a heat map."""
    lines = [
        "# gnuplot script; run: gnuplot <this file>",
        "set datafile separator ','",
        "set logscale xy",
        f"set title '{title}'",
        "set view map",
        f"splot '{map_csv_path}' using 2:1:3 with points pointtype 5 palette notitle",
        "pause -1",
    ]
    with open(script_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
