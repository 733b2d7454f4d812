"""First-principles random-walk simulation of restricted diffusion.

Walkers start uniformly distributed in the compartment, take Gaussian steps
of per-axis variance 2 D0 dt, reflect specularly off the boundary (multiple
bounces per step are resolved by exact chord intersection) and accrue phase
from the midpoint position along the gradient axis.  The ensemble averages
<cos phi>, <phi> and <phi^2> validate the Gaussian-phase signal model and
the geometry spectra.

Reproducibility: walkers are processed in fixed-size blocks, each drawing
from its own counter-offset Philox stream keyed by (seed, block start), and
block results are merged in block order with exact summation.  Results are
therefore bitwise identical for a given seed and walker count, regardless of
the number of worker threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .units import PROTON_GAMMA, Geometry
from .waveforms import GradientWaveform

# Walkers per independent random stream; fixed so that parallelism cannot
# change the draw sequence.
BLOCK_SIZE = 16384

# Distinct walker blocks are separated by 2^128 draws in Philox counter space.
_BLOCK_COUNTER_STRIDE = 1 << 128

_MAX_REFLECTIONS = 10

_MC_GEOMETRIES = (Geometry.PLANAR, Geometry.CYLINDER, Geometry.SPHERE)


@dataclass(frozen=True)
class McConfig:
    """Random-walk configuration.

    geometry  : PLANAR (size = slab width) | CYLINDER | SPHERE (size = diameter)
    size      : compartment size, m
    D0        : free diffusion coefficient, m^2/s
    n_walkers : ensemble size (>= 1000)
    dt        : target time step, s; rounded so that the waveform duration is
                an integer number of steps.  The rms step sqrt(2 D0 dt) must
                not exceed size/50.
    seed      : 64-bit stream seed
    waveform  : effective gradient waveform (echo condition holds)
    gamma     : gyromagnetic ratio, rad/s/T
    workers   : worker threads (does not affect results)
    """

    geometry: Geometry
    size: float
    D0: float
    n_walkers: int
    dt: float
    seed: int
    waveform: GradientWaveform
    gamma: float = PROTON_GAMMA
    workers: int = 1

    def __post_init__(self):
        if self.geometry not in _MC_GEOMETRIES:
            raise ValueError(f"geometry must be one of {_MC_GEOMETRIES}, got {self.geometry}")
        if not self.size > 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if not self.D0 > 0:
            raise ValueError(f"D0 must be positive, got {self.D0}")
        if self.n_walkers < 1000:
            raise ValueError(f"n_walkers must be >= 1000, got {self.n_walkers}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        step = math.sqrt(2.0 * self.D0 * self.dt)
        if step > self.size / 50.0 * (1.0 + 1e-9):
            raise ValueError(
                f"dt too large: rms step {step:.3g} m exceeds size/50 = {self.size / 50:.3g} m"
            )
        if not 0 <= self.seed < 2 ** 63:
            raise ValueError(f"seed must fit in 63 bits, got {self.seed}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @property
    def n_dims(self) -> int:
        return {Geometry.PLANAR: 1, Geometry.CYLINDER: 2, Geometry.SPHERE: 3}[self.geometry]

    @property
    def n_steps(self) -> int:
        n = int(round(self.waveform.duration / self.dt))
        return max(n, 1)

    @property
    def dt_effective(self) -> float:
        return self.waveform.duration / self.n_steps


@dataclass(frozen=True)
class McResult:
    """Ensemble statistics of the accrued phase.

    M_estimate     : <cos phi>
    std_error      : standard error of M_estimate
    mean_phase     : <phi> (should be consistent with zero)
    phase_variance : <phi^2>
    n_walkers      : ensemble size
    """

    M_estimate: float
    std_error: float
    mean_phase: float
    phase_variance: float
    n_walkers: int


@dataclass(frozen=True)
class PhaseHistogram:
    bin_edges: tuple[float, ...]
    density: tuple[float, ...]
    excess_kurtosis: float
    gaussian: bool  # |excess kurtosis| < 0.1


def _block_rng(seed: int, block_start: int) -> np.random.Generator:
    counter = (block_start // BLOCK_SIZE) * _BLOCK_COUNTER_STRIDE
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def _initial_positions(config: McConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform start positions; gradient axis is coordinate 0."""
    if config.geometry is Geometry.PLANAR:
        return (config.size * rng.random(n)).reshape(n, 1)
    radius = config.size / 2.0
    if config.geometry is Geometry.CYLINDER:
        r = radius * np.sqrt(rng.random(n))
        theta = 2.0 * math.pi * rng.random(n)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    r = radius * rng.random(n) ** (1.0 / 3.0)
    costh = 2.0 * rng.random(n) - 1.0
    sinth = np.sqrt(1.0 - costh ** 2)
    phi = 2.0 * math.pi * rng.random(n)
    return np.column_stack([r * sinth * np.cos(phi), r * sinth * np.sin(phi), r * costh])


def _reflect_planar(pos: np.ndarray, step: np.ndarray, width: float) -> np.ndarray:
    x = pos[:, 0] + step[:, 0]
    for _ in range(_MAX_REFLECTIONS):
        below = x < 0.0
        above = x > width
        if not (below.any() or above.any()):
            break
        x = np.where(below, -x, x)
        x = np.where(above, 2.0 * width - x, x)
    else:
        if ((x < 0.0) | (x > width)).any():
            raise ValueError("walker escaped after 10 reflections; reduce dt")
    return x.reshape(-1, 1)


def _reflect_radial(pos: np.ndarray, step: np.ndarray, radius: float) -> np.ndarray:
    """Specular reflection inside a disk/ball, resolved exactly.

    The proposed straight displacement is folded at the wall.  After the
    first bounce the billiard map in a circle preserves the incidence angle,
    so chord length and per-bounce rotation angle are constants: all
    remaining bounces collapse into one closed-form rotation of the
    (boundary point, direction) pair.  Grazing chords that would need
    arbitrarily many specular bounces are therefore handled exactly (a
    fixed iteration cap cannot be, whispering-gallery paths wrap the wall).
    For the sphere the trajectory stays in the plane spanned by the hit
    point and the direction, reducing to the same 2-D rotation.
    """
    r2 = radius * radius
    p = pos + step
    out = (p * p).sum(axis=1) > r2
    if not out.any():
        return p
    idx = np.nonzero(out)[0]
    pi = pos[idx]
    si = step[idx]

    # first wall crossing: smallest positive root of |p + alpha s| = R,
    # in the cancellation-free form for either sign of b
    a2 = (si * si).sum(axis=1)
    b = (pi * si).sum(axis=1)
    c = np.minimum((pi * pi).sum(axis=1) - r2, 0.0)  # start point is inside
    sq = np.sqrt(np.maximum(b * b - a2 * c, 0.0))
    alpha = np.where(b > 0.0, -c / (b + sq), (sq - b) / a2)
    alpha = np.clip(alpha, 0.0, 1.0)
    hit = pi + alpha[:, None] * si
    u = hit / np.sqrt((hit * hit).sum(axis=1))[:, None]  # outward unit normal
    length = (1.0 - alpha) * np.sqrt(a2)                 # remaining path length
    d_in = si / np.sqrt(a2)[:, None]
    d = d_in - 2.0 * (d_in * u).sum(axis=1)[:, None] * u  # reflected direction

    # incidence cosine (against the inward normal) is a bounce invariant
    i_n = np.clip(-(d * u).sum(axis=1), 0.0, 1.0)
    chord = 2.0 * radius * i_n
    psi = 2.0 * np.arcsin(i_n)  # central angle advanced per bounce
    grazing = chord < 1e-6 * np.maximum(length, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(grazing, 0.0, np.floor(length / np.maximum(chord, 1e-300)))
    residual = np.where(grazing, 0.0, length - k * chord)
    # grazing limit: the polygonal path hugs the wall; rotate by arc length/R
    phi = np.where(grazing, length / radius, k * psi)

    # rotate (u, d) rigidly by phi in the plane spanned by u and the
    # tangential direction of travel
    d_tan = d + i_n[:, None] * u
    tan_norm = np.sqrt((d_tan * d_tan).sum(axis=1))
    safe = np.maximum(tan_norm, 1e-300)[:, None]
    t_hat = np.where(tan_norm[:, None] > 1e-12, d_tan / safe, 0.0 * d_tan)
    cos_phi = np.cos(phi)[:, None]
    sin_phi = np.sin(phi)[:, None]
    u_rot = cos_phi * u + sin_phi * t_hat
    a_comp = -i_n[:, None]               # d . u
    b_comp = tan_norm[:, None]           # d . t_hat
    d_rot = ((a_comp * cos_phi - b_comp * sin_phi) * u
             + (a_comp * sin_phi + b_comp * cos_phi) * t_hat)
    final = radius * (1.0 - 1e-14) * u_rot + residual[:, None] * d_rot
    p[idx] = final

    # pull sub-ulp boundary overshoot back inside
    norm2 = (p * p).sum(axis=1)
    over = norm2 > r2
    if over.any():
        norm = np.sqrt(norm2[over])
        if (norm / radius - 1.0).max() > 1e-9:
            raise ValueError("radial reflection left a walker outside the boundary")
        p[over] *= (radius * (1.0 - 1e-15) / norm)[:, None]
    return p


def _step_gradients(config: McConfig) -> np.ndarray:
    """Per-step effective gradient: the exact average of G over each step."""
    n = config.n_steps
    dt = config.dt_effective
    edges = dt * np.arange(n + 1)
    q = config.waveform.integral_until(edges)
    return np.diff(q) / dt


def _run_block(config: McConfig, block_start: int, count: int,
               keep_samples: bool):
    rng = _block_rng(config.seed, block_start)
    pos = _initial_positions(config, rng, count)
    g_step = _step_gradients(config)
    dt = config.dt_effective
    sigma = math.sqrt(2.0 * config.D0 * dt)
    width_or_radius = config.size if config.geometry is Geometry.PLANAR else config.size / 2.0
    phase = np.zeros(count)
    for i in range(config.n_steps):
        step = sigma * rng.standard_normal((count, config.n_dims))
        if config.geometry is Geometry.PLANAR:
            new_pos = _reflect_planar(pos, step, width_or_radius)
        else:
            new_pos = _reflect_radial(pos, step, width_or_radius)
        coeff = config.gamma * g_step[i] * dt
        if coeff != 0.0:
            phase += coeff * 0.5 * (pos[:, 0] + new_pos[:, 0])
        pos = new_pos
    cos_phi = np.cos(phase)
    partial = {
        "n": count,
        "sum_cos": math.fsum(cos_phi),
        "sum_cos2": math.fsum(cos_phi * cos_phi),
        "sum_phi": math.fsum(phase),
        "sum_phi2": math.fsum(phase * phase),
    }
    if keep_samples:
        return partial, phase, pos
    return partial, None, None


def _run_all_blocks(config: McConfig, keep_samples: bool):
    starts = list(range(0, config.n_walkers, BLOCK_SIZE))
    counts = [min(BLOCK_SIZE, config.n_walkers - s) for s in starts]
    if config.workers == 1:
        results = [_run_block(config, s, c, keep_samples) for s, c in zip(starts, counts)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_block, config, s, c, keep_samples)
                       for s, c in zip(starts, counts)]
            results = [f.result() for f in futures]  # block order preserved
    return results


def _reduce(config: McConfig, results) -> McResult:
    n = config.n_walkers
    sum_cos = math.fsum(r[0]["sum_cos"] for r in results)
    sum_cos2 = math.fsum(r[0]["sum_cos2"] for r in results)
    sum_phi = math.fsum(r[0]["sum_phi"] for r in results)
    sum_phi2 = math.fsum(r[0]["sum_phi2"] for r in results)
    m = sum_cos / n
    var_cos = max(sum_cos2 / n - m * m, 0.0)
    std_error = math.sqrt(var_cos / (n - 1)) if n > 1 else math.inf
    return McResult(
        M_estimate=m,
        std_error=std_error,
        mean_phase=sum_phi / n,
        phase_variance=sum_phi2 / n,
        n_walkers=n,
    )


def simulate(config: McConfig) -> McResult:
    """Run the walk and return ensemble phase statistics."""
    return _reduce(config, _run_all_blocks(config, keep_samples=False))


def simulate_with_samples(config: McConfig):
    """As simulate(), additionally returning per-walker phases and final positions."""
    results = _run_all_blocks(config, keep_samples=True)
    phases = np.concatenate([r[1] for r in results])
    positions = np.concatenate([r[2] for r in results], axis=0)
    return _reduce(config, results), phases, positions


def phase_histogram(config: McConfig, bins: int = 61) -> PhaseHistogram:
    """Normalized histogram of the accrued phase plus a Gaussianity check."""
    _, phases, _ = simulate_with_samples(config)
    density, edges = np.histogram(phases, bins=bins, density=True)
    centered = phases - phases.mean()
    m2 = float((centered ** 2).mean())
    if m2 == 0.0:
        kurt = 0.0
    else:
        kurt = float((centered ** 4).mean() / m2 ** 2 - 3.0)
    return PhaseHistogram(
        bin_edges=tuple(float(e) for e in edges),
        density=tuple(float(d) for d in density),
        excess_kurtosis=kurt,
        gaussian=abs(kurt) < 0.1,
    )


def free_walk_msd(D0: float, dt: float, n_steps: int, n_walkers: int, seed: int):
    """Unrestricted 1-D control: (msd, std_error) after n_steps."""
    rng = _block_rng(seed, 0)
    sigma = math.sqrt(2.0 * D0 * dt)
    disp = sigma * rng.standard_normal((n_walkers, n_steps)).sum(axis=1)
    sq = disp * disp
    msd = float(sq.mean())
    return msd, float(sq.std(ddof=1) / math.sqrt(n_walkers))


def save_result_csv(result: McResult, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("M_estimate,std_error,mean_phase,phase_variance,n_walkers\n")
        fh.write(f"{result.M_estimate!r},{result.std_error!r},{result.mean_phase!r},"
                 f"{result.phase_variance!r},{result.n_walkers}\n")


def save_histogram_csv(hist: PhaseHistogram, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# excess_kurtosis = {hist.excess_kurtosis!r}\n")
        fh.write(f"# gaussian = {hist.gaussian}\n")
        fh.write("bin_left,bin_right,density\n")
        for left, right, d in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.density):
            fh.write(f"{left!r},{right!r},{d!r}\n")
