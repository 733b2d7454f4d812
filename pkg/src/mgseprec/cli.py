"""Command-line interface.

Subcommands: bound | signal | optimize | map | mc.  Each accepts a flat
key-value config file (-c FILE) plus --set KEY=VALUE overrides; every output
CSV embeds the fully resolved configuration as comment lines, so results are
self-describing and re-runnable.  Exit codes: 0 success, 2 usage or config
error, 3 numerical failure.
"""

import argparse
import contextlib
import json
import math
import sys

import numpy as np

from . import attenuation, montecarlo, protocol, spectra
from .attenuation import QuadratureError
from .config import (ConfigError, KeySpec, family_from_config, header_lines,
                     help_epilog, load_config_file, parse_overrides, resolve,
                     tissue_from_config, tissue_keys, waveform_from_config)
from .fisher import ultimate_bound, ultimate_bound_bruteforce, lambert_w0
from .protocol import NoOptimumError
from .units import Geometry


def _signal_keys():
    keys = tissue_keys()
    keys.update({
        "G": KeySpec("G", "gradient", "gradient amplitude", required=True),
        "t_min": KeySpec("t_min", "time", "diffusion-time grid start", required=True),
        "t_max": KeySpec("t_max", "time", "diffusion-time grid end", required=True),
        "t_points": KeySpec("t_points", "int", "number of grid points", required=True),
        "t_scale": KeySpec("t_scale", "choice", "grid spacing", default="log",
                           choices=("log", "linear")),
        "delta_frac": KeySpec("delta_frac", "float",
                              "PGSE pulse fraction delta/t (0.5 = Hahn)", default=0.5),
        "method": KeySpec("method", "choice", "attenuation engine", default="time",
                          choices=("time", "freq", "hahn")),
        "spectrum": KeySpec("spectrum", "choice", "spectral model (freq engine)",
                            default="lorentzian", choices=("lorentzian", "expansion")),
        "order": KeySpec("order", "int", "expansion truncation order", default=50),
        "quad_rel_tol": KeySpec("quad_rel_tol", "float", "quadrature tolerance",
                                default=1e-9),
        "quad_budget": KeySpec("quad_budget", "int", "quadrature evaluation budget",
                               default=1_000_000),
        "out": KeySpec("out", "str", "output CSV path ('-' = stdout)", default="-"),
    })
    return keys


def _optimize_keys():
    keys = tissue_keys()
    keys.update({
        "G": KeySpec("G", "gradient", "gradient amplitude", required=True),
        "delta_frac": KeySpec("delta_frac", "float",
                              "PGSE pulse fraction delta/t (0.5 = Hahn)", default=0.5),
        "margin": KeySpec("margin", "float", "gradient-window strictness factor",
                          default=3.0),
        "out": KeySpec("out", "str", "optional CSV path ('-' = stdout report only)",
                       default="-"),
    })
    return keys


def _map_keys():
    keys = tissue_keys()
    keys.update({
        "kind": KeySpec("kind", "choice", "map type: time-gradient or size-gradient",
                        required=True, choices=("tG", "dG")),
        "G_min": KeySpec("G_min", "gradient", "gradient grid start", required=True),
        "G_max": KeySpec("G_max", "gradient", "gradient grid end", required=True),
        "G_points": KeySpec("G_points", "int", "gradient grid points", required=True),
        "t_min": KeySpec("t_min", "time", "time grid start (kind=tG)"),
        "t_max": KeySpec("t_max", "time", "time grid end (kind=tG)"),
        "t_points": KeySpec("t_points", "int", "time grid points (kind=tG)"),
        "d_min": KeySpec("d_min", "length", "size grid start (kind=dG)"),
        "d_max": KeySpec("d_max", "length", "size grid end (kind=dG)"),
        "d_points": KeySpec("d_points", "int", "size grid points (kind=dG)"),
        "d_values": KeySpec("d_values", "str",
                            "explicit sizes in um, comma-separated (kind=dG)"),
        "delta_frac": KeySpec("delta_frac", "float",
                              "PGSE pulse fraction delta/t (0.5 = Hahn)", default=0.5),
        "out": KeySpec("out", "str", "output CSV path ('-' = stdout)", default="-"),
        "plot_script": KeySpec("plot_script", "str",
                               "write a gnuplot script referencing the CSV"),
    })
    return keys


def _mc_keys():
    keys = tissue_keys()
    del keys["T2"], keys["ell_c"]  # the walk has no relaxation; sizes are geometric
    keys["geometry"] = KeySpec("geometry", "choice", "compartment geometry",
                               required=True, choices=("planar", "cylinder", "sphere"))
    keys.update({
        "G": KeySpec("G", "gradient", "gradient amplitude (with t/delta_frac)"),
        "t": KeySpec("t", "time", "total diffusion time"),
        "delta_frac": KeySpec("delta_frac", "float",
                              "PGSE pulse fraction delta/t (0.5 = Hahn)", default=0.5),
        "waveform_csv": KeySpec("waveform_csv", "str",
                                "waveform CSV (duration_s, amplitude_T_per_m)"),
        "n_walkers": KeySpec("n_walkers", "int", "ensemble size", default=100_000),
        "dt": KeySpec("dt", "time", "time step", required=True),
        "seed": KeySpec("seed", "int", "random seed (mandatory)", required=True),
        "workers": KeySpec("workers", "int", "worker threads (no effect on results)",
                           default=1),
        "out": KeySpec("out", "str", "result CSV path ('-' = stdout)", default="-"),
        "hist_out": KeySpec("hist_out", "str", "optional phase-histogram CSV path"),
        "hist_bins": KeySpec("hist_bins", "int", "histogram bin count", default=61),
    })
    return keys


_COMMAND_KEYS = {
    "signal": _signal_keys,
    "optimize": _optimize_keys,
    "map": _map_keys,
    "mc": _mc_keys,
}


@contextlib.contextmanager
def _open_out(path):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _resolve(args, command):
    allowed = _COMMAND_KEYS[command]()
    file_values = load_config_file(args.config) if args.config else {}
    overrides = parse_overrides(args.overrides or [])
    return allowed, resolve(allowed, file_values, overrides)


def _grid(cfg, prefix, scale="log"):
    lo, hi, n = cfg[f"{prefix}_min"], cfg[f"{prefix}_max"], cfg[f"{prefix}_points"]
    if n < 1:
        raise ConfigError(f"key '{prefix}_points' must be >= 1, got {n}")
    if not lo > 0:
        raise ConfigError(f"key '{prefix}_min' must be positive, got {lo}")
    if hi < lo:
        raise ConfigError(f"key '{prefix}_max' must be >= {prefix}_min")
    if n == 1:
        return np.asarray([lo])
    if hi == lo:
        raise ConfigError(f"key '{prefix}_max' must exceed {prefix}_min for {n} points")
    if scale == "linear":
        return np.linspace(lo, hi, n)
    return np.logspace(math.log10(lo), math.log10(hi), n)


def cmd_bound(args) -> int:
    bound = ultimate_bound()
    if args.json:
        payload = {
            "epsilon_0": bound.epsilon_0,
            "M_0": bound.M_opt,
            "minus_ln_M_0": bound.ln_M_opt,
        }
        if args.check:
            m_bf, eps_bf = ultimate_bound_bruteforce()
            payload.update({
                "bruteforce_M_0": m_bf,
                "bruteforce_epsilon_0": eps_bf,
                "bruteforce_epsilon_0_diff": abs(eps_bf - bound.epsilon_0),
                "lambert_residual": _lambert_residual(),
            })
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0
    print(f"epsilon_0    = {bound.epsilon_0:.10g}")
    print(f"M_0          = {bound.M_opt:.10g}")
    print(f"minus_ln_M_0 = {bound.ln_M_opt:.10g}")
    if args.check:
        m_bf, eps_bf = ultimate_bound_bruteforce()
        print(f"bruteforce_M_0        = {m_bf:.10g}")
        print(f"bruteforce_epsilon_0  = {eps_bf:.10g}")
        print(f"bruteforce_eps0_diff  = {abs(eps_bf - bound.epsilon_0):.3g}")
        print(f"lambert_residual      = {_lambert_residual():.3g}")
    return 0


def _lambert_residual() -> float:
    x = -2.0 * math.exp(-2.0)
    w = lambert_w0(x)
    return abs(w * math.exp(w) - x)


def cmd_signal(args) -> int:
    allowed, cfg = _resolve(args, "signal")
    tissue = tissue_from_config(cfg)
    family = family_from_config(cfg)
    method = cfg["method"]
    if method == "hahn" and not family.is_hahn:
        raise ConfigError("method=hahn requires delta_frac=0.5")
    times = _grid(cfg, "t", cfg["t_scale"])
    gamma, G = cfg["gamma"], cfg["G"]

    if method == "freq":
        if cfg["spectrum"] == "expansion":
            if tissue.geometry is Geometry.GENERIC:
                raise ConfigError("spectrum=expansion needs geometry planar|cylinder|sphere")
            spectrum = spectra.geometry_spectrum(
                spectra.expansion_for(tissue, cfg["order"]), tissue.D0)
        else:
            spectrum = spectra.lorentzian_spectrum(tissue)

    rows = []
    for t in times:
        if method == "hahn":
            res = attenuation.hahn_closed_form(tissue, G, float(t), gamma)
        elif method == "time":
            res = attenuation.attenuation_time_exact(
                family.waveform(G, float(t)), tissue, gamma)
        else:
            res = attenuation.attenuation_freq(
                family.waveform(G, float(t)), spectrum, gamma,
                rel_tol=cfg["quad_rel_tol"], max_evals=cfg["quad_budget"])
        res = attenuation.apply_T2(res, tissue.T2)
        rows.append(res)

    try:
        include_t2 = not math.isinf(tissue.T2)
        t_opt = protocol.optimal_time(tissue, G, gamma, include_T2=include_t2,
                                      family=family).t_opt
        flag_idx = int(np.argmin(np.abs(np.log(times) - math.log(t_opt))))
    except NoOptimumError:
        t_opt, flag_idx = None, -1

    with _open_out(cfg["out"]) as fh:
        fh.write("# mgseprec signal\n")
        for line in header_lines(allowed, cfg):
            fh.write(f"# {line}\n")
        if t_opt is not None:
            fh.write(f"# t_opt_s = {t_opt!r}\n")
        fh.write("t_s,beta,M_norm,M_norm_T2,at_t_opt\n")
        for i, res in enumerate(rows):
            fh.write(f"{res.t!r},{res.beta!r},{res.M_norm!r},{res.M_norm_T2!r},"
                     f"{1 if i == flag_idx else 0}\n")
    return 0


def cmd_optimize(args) -> int:
    allowed, cfg = _resolve(args, "optimize")
    tissue = tissue_from_config(cfg)
    family = family_from_config(cfg)
    include_t2 = not math.isinf(tissue.T2)
    outcome = protocol.optimal_time(tissue, cfg["G"], cfg["gamma"],
                                    include_T2=include_t2, family=family,
                                    window_margin=cfg["margin"])
    n_int, ratio = protocol.measurements_needed(outcome.epsilon_at_opt)
    status = "empty" if outcome.window_empty else "ok"
    fields = [
        ("t_opt_s", outcome.t_opt),
        ("epsilon_at_opt", outcome.epsilon_at_opt),
        ("epsilon_0", ultimate_bound().epsilon_0),
        ("N_equiv_at_opt", ratio),
        ("N_measurements", n_int),
        ("closed_form_t_opt_s", outcome.closed_form_t_opt),
        ("efficiency_parameter", outcome.validity),
        ("G_low_T_per_m", outcome.G_window[0]),
        ("G_high_T_per_m", outcome.G_window[1]),
        ("window_status", status),
    ]
    if args.json:
        print(json.dumps(dict(fields), indent=2))
    else:
        for key, value in fields:
            print(f"{key} = {value:.10g}" if isinstance(value, float) else f"{key} = {value}")
        if status == "empty":
            print("warning: gradient window empty (infeasible under T2)")
    if cfg["out"] != "-":
        with open(cfg["out"], "w") as fh:
            fh.write("# mgseprec optimize\n")
            for line in header_lines(allowed, cfg):
                fh.write(f"# {line}\n")
            fh.write(",".join(key for key, _ in fields) + "\n")
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for _, v in fields) + "\n")
    return 0


def cmd_map(args) -> int:
    allowed, cfg = _resolve(args, "map")
    tissue = tissue_from_config(cfg)
    gamma = cfg["gamma"]
    metadata = tuple((line.split(" = ")[0], line.split(" = ")[1])
                     for line in header_lines(allowed, cfg))
    if cfg["kind"] == "tG":
        for key in ("t_min", "t_max", "t_points"):
            if key not in cfg:
                raise ConfigError(f"missing required key {key!r} for kind=tG")
        pmap = protocol.precision_map_tG(
            tissue, _grid(cfg, "G"), _grid(cfg, "t"), gamma, metadata=metadata)
    else:
        if "d_values" in cfg:
            try:
                d_grid = np.asarray(
                    [float(x) * 1e-6 for x in cfg["d_values"].split(",")])
            except ValueError:
                raise ConfigError(f"key 'd_values': cannot parse {cfg['d_values']!r}") from None
        else:
            for key in ("d_min", "d_max", "d_points"):
                if key not in cfg:
                    raise ConfigError(f"missing required key {key!r} for kind=dG")
            d_grid = _grid(cfg, "d")
        pmap = protocol.precision_map_dG(
            tissue, d_grid, _grid(cfg, "G"), gamma,
            family=family_from_config(cfg), metadata=metadata)
    with _open_out(cfg["out"]) as fh:
        fh.write("# mgseprec map\n")
        for line in pmap.csv_lines():
            fh.write(line + "\n")
    if "plot_script" in cfg:
        if cfg["out"] == "-":
            raise ConfigError("plot_script requires a file 'out' path")
        protocol.emit_plot_script(cfg["out"], cfg["plot_script"],
                                  f"mgseprec map {cfg['kind']}")
    return 0


def cmd_mc(args) -> int:
    allowed, cfg = _resolve(args, "mc")
    geometry = Geometry(cfg["geometry"])
    if geometry is Geometry.PLANAR:
        if "a" not in cfg:
            raise ConfigError("missing required key 'a' (geometry=planar)")
        size = cfg["a"]
    else:
        if "d" not in cfg:
            raise ConfigError(f"missing required key 'd' (geometry={geometry.value})")
        size = cfg["d"]
    if "waveform_csv" in cfg:
        waveform = waveform_from_config(cfg, 0.0, 0.0)
    else:
        for key in ("G", "t"):
            if key not in cfg:
                raise ConfigError(f"missing required key {key!r} (or use waveform_csv)")
        waveform = waveform_from_config(cfg, cfg["G"], cfg["t"])
    try:
        mc_config = montecarlo.McConfig(
            geometry=geometry, size=size, D0=cfg["D0"], n_walkers=cfg["n_walkers"],
            dt=cfg["dt"], seed=cfg["seed"], waveform=waveform, gamma=cfg["gamma"],
            workers=cfg["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    header = ["mgseprec mc"] + header_lines(allowed, cfg)
    if "hist_out" in cfg:
        result, phases, _ = montecarlo.simulate_with_samples(mc_config)
        density, edges = np.histogram(phases, bins=cfg["hist_bins"], density=True)
        centered = phases - phases.mean()
        m2 = float((centered ** 2).mean())
        kurt = 0.0 if m2 == 0.0 else float((centered ** 4).mean() / m2 ** 2 - 3.0)
        hist = montecarlo.PhaseHistogram(
            bin_edges=tuple(float(e) for e in edges),
            density=tuple(float(v) for v in density),
            excess_kurtosis=kurt, gaussian=abs(kurt) < 0.1)
        montecarlo.save_histogram_csv(hist, cfg["hist_out"], header)
    else:
        result = montecarlo.simulate(mc_config)
    with _open_out(cfg["out"]) as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("M_estimate,std_error,mean_phase,phase_variance,n_walkers\n")
        fh.write(f"{result.M_estimate!r},{result.std_error!r},{result.mean_phase!r},"
                 f"{result.phase_variance!r},{result.n_walkers}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgseprec",
        description="Precision limits and protocol optimization for "
                    "restriction-length estimation with spin-echo diffusion NMR.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bound = sub.add_parser("bound", help="print the per-measurement error floor")
    p_bound.add_argument("--json", action="store_true", help="machine-readable output")
    p_bound.add_argument("--check", action="store_true",
                         help="also run the brute-force minimization oracle")
    p_bound.set_defaults(func=cmd_bound)

    for name, func, description in (
        ("signal", cmd_signal, "decay curve CSV over a diffusion-time grid"),
        ("optimize", cmd_optimize, "optimal diffusion time and gradient window"),
        ("map", cmd_map, "precision map CSV over (t, G) or (size, G)"),
        ("mc", cmd_mc, "random-walk validation of the signal model"),
    ):
        sp = sub.add_parser(
            name, help=description,
            epilog=help_epilog(_COMMAND_KEYS[name]()),
            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("-c", "--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", dest="overrides", default=[],
                        metavar="KEY=VALUE", help="override a config key")
        if name == "optimize":
            sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (QuadratureError, NoOptimumError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
