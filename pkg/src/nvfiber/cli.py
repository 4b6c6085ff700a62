"""Command-line pipelines.

Exit codes: 0 success, 1 usage or configuration error, 2 domain failure
(failed adiabaticity check, fit non-convergence, missing channel).
Diagnostics go to stderr; data to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Sequence

import numpy as np

from . import dipole_coupling as dc
from . import emitter_sim as es
from . import fiber_modes as fm
from . import photon_analysis as pa
from . import taper_design as td
from . import timetag_io as tio
from .config import ConfigError, RunConfig, load_config, parse_quantity
from .fitting import FitError

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2


class DomainFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _qty(dim):
    def conv(text):
        try:
            return parse_quantity(text, dim)
        except ConfigError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    conv.__name__ = dim
    return conv


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 1]")
    return v


def _four_rates(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected S1,S2,N1,N2")
    out = []
    for p in parts:
        p = p.strip()
        try:
            out.append(float(p))
        except ValueError:
            out.append(_qty("rate")(p))
    return out


def _write_or_print(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ----------------------------------------------------------------- handlers

def cmd_modes(args, cfg: RunConfig):
    spec = cfg.fiber(args.diameter)
    lam = args.wavelength or cfg.get("fiber", "wavelength", 637e-9)
    l_max = args.l_max if args.l_max is not None else cfg.get("fiber", "l_max")
    modes = (fm.all_guided_modes(spec, lam) if l_max is None
             else fm.enumerate_guided_modes(spec, lam, l_max))
    rows = ["label,n_eff,beta_per_m,u,w"]
    rows += [f"{m.label},{m.n_eff!r},{m.beta!r},{m.u!r},{m.w!r}" for m in modes]
    _write_or_print("\n".join(rows), args.out)
    cut = fm.second_mode_cutoff_diameter(lam, spec.n_core(lam), spec.surround_index)
    print(f"d = {spec.diameter * 1e9:.4g} nm, lambda = {lam * 1e9:.4g} nm, "
          f"V = {fm.v_number(spec, lam):.6g}, {len(modes)} guided mode(s), "
          f"second-mode cutoff d = {cut * 1e9:.6g} nm", file=sys.stderr)


def _dipole(args):
    make = {"radial": dc.DipoleEmitter.radial, "azimuthal": dc.DipoleEmitter.azimuthal,
            "axial": dc.DipoleEmitter.axial}[args.orientation]
    return make() if args.r is None else make(r=args.r)


def cmd_coupling_sweep(args, cfg: RunConfig):
    if args.spectrum == "config":
        spectrum = cfg.spectrum()
    elif args.spectrum == "mono":
        spectrum = dc.SpectrumModel.monochromatic(args.wavelength)
    else:
        spectrum = dc.SpectrumModel.nv_default(args.points)
    res = dc.coupling_sweep(args.d_min, args.d_max, args.step, spectrum, _dipole(args),
                            cfg.get("fiber", "core_index", "silica"),
                            cfg.get("fiber", "surround_index", 1.0), workers=args.workers)
    res.to_csv(args.out or sys.stdout)
    cut = res.fraction_cutoff(args.eps)
    print(f"argmax d = {res.argmax_diameter * 1e9:.4g} nm, peak eta = {res.peak_eta:.6g}, "
          f"unimodal = {res.is_unimodal()}, fraction cutoff = "
          f"{'none' if cut is None else f'{cut * 1e9:.4g} nm'}", file=sys.stderr)


def cmd_taper(args, cfg: RunConfig):
    if args.cone is not None:
        d1, d2, ang = args.cone
        profile = td.linear_cone(_qty("length")(d1), _qty("length")(d2), float(ang))
    else:
        r0 = args.r0
        if args.elongation is not None:
            recipe = td.PullRecipe(r0, args.hot_zone, args.elongation, args.kind)
        else:
            if args.kind != "constant_hot_zone":
                raise ConfigError("--waist-diameter targets need --kind constant_hot_zone")
            recipe = td.PullRecipe.for_waist(r0, args.waist_diameter / 2, args.hot_zone)
        profile = td.profile_from_recipe(recipe)
    rep = td.adiabaticity_check(profile, args.wavelength, args.safety,
                                cfg.get("fiber", "core_index", "silica"),
                                cfg.get("fiber", "surround_index", 1.0))
    if args.out:
        rep.to_csv(args.out)
    print(f"waist d = {profile.waist_radius * 2e9:.6g} nm, waist length = "
          f"{profile.waist_length * 1e3:.6g} mm, max rho = {rep.max_rho:.4g} at z = "
          f"{rep.worst_position * 1e3:.6g} mm, margin = {rep.min_margin:.4g}, "
          f"{'PASS' if rep.passed else 'FAIL'}", file=sys.stderr)
    if not rep.passed:
        raise DomainFailure("taper is not adiabatic")


def cmd_simulate(args, cfg: RunConfig):
    scene = cfg.scene()
    duration = args.duration or cfg.get("scene", "duration")
    if duration is None:
        raise ConfigError("simulation duration missing (--duration or [scene] duration)")
    seed = args.seed if args.seed is not None else scene.seed
    stream = es.simulate_stream(scene, duration, seed)
    out = args.out or cfg.get("io", "output")
    if not out:
        raise ConfigError("output path missing (--out or [io] output)")
    fmt = args.format or cfg.get("io", "format") or ("csv" if out.endswith(".csv") else "ttg")
    if fmt == "csv":
        tio.write_csv(stream, out)
    else:
        tio.write_ttag(stream, out)
    print(f"{len(stream)} records -> {out} (ch1 {stream.count(1)}, ch2 {stream.count(2)}, "
          f"sync {stream.count(0)})", file=sys.stderr)


def _read_stream(path, lenient=False):
    if path.endswith(".csv"):
        return tio.read_csv(path, strict=not lenient)
    return tio.read_ttag(path, strict=not lenient)


def cmd_correlate(args, cfg: RunConfig):
    stream = _read_stream(args.input, args.lenient)
    for ch in (args.ch_a, args.ch_b):
        if stream.count(ch) == 0:
            raise DomainFailure(f"channel {ch} has no records in {args.input}")
    bw = args.bin or cfg.get("fit", "bin_width", 1e-9)
    md = args.max_delay or cfg.get("fit", "max_delay", 200e-9)
    hist = pa.correlate(stream, args.ch_a, args.ch_b, bw, md, args.mode, args.duration)
    if args.mode == "start_stop":
        rows = ["bin_center_s,counts"] + [f"{float(t)!r},{int(c)}" for t, c in zip(hist.delays, hist.counts)]
        _write_or_print("\n".join(rows), args.out)
        return
    raw = pa.normalize_g2(hist)
    cols = ["bin_center_s", "counts", "g2_raw"]
    data = [hist.delays, hist.counts, raw.g2]
    if args.background is not None:
        s1, s2, n1, n2 = args.background
        cor = pa.corrected_g2(raw, pa.BackgroundRecord(s1, s2, n1, n2))
        cols.append("g2_corrected")
        data.append(cor.g2)
    rows = [",".join(cols)]
    for vals in zip(*data):
        rows.append(",".join(str(int(v)) if i == 1 else repr(float(v)) for i, v in enumerate(vals)))
    _write_or_print("\n".join(rows), args.out)
    zero = int(np.argmin(np.abs(hist.delays)))
    msg = f"g2_raw(0) = {raw.g2[zero]:.4g}"
    if args.background is not None:
        msg += f", g2_corrected(0) = {data[-1][zero]:.4g}"
    print(msg, file=sys.stderr)


def _read_columns(path, names):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    head = [h.strip() for h in rows[0]]
    missing = [n for n in names if n not in head]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}; have {head}")
    idx = [head.index(n) for n in names]
    out = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            out.append([float(r[i]) for i in idx])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: line {lineno}: malformed row {r!r}") from None
    return np.array(out).T if out else np.zeros((len(names), 0))


def _emit_fit(fit, path):
    _write_or_print(fit.to_json(), path)


def cmd_fit_lifetime(args, cfg: RunConfig):
    bw = args.bin or cfg.get("fit", "bin_width", 0.1e-9)
    window = args.window or cfg.get("fit", "window", 200e-9)
    if args.input.endswith(".csv") and not args.stream_csv:
        t, c = _read_columns(args.input, ["bin_center_s", "counts"])
        delta = float(np.median(np.diff(t))) if t.size > 1 else bw
        curve = pa.DecayCurve(t, c.astype(np.int64), delta)
    else:
        stream = _read_stream(args.input)
        try:
            curve = pa.decay_histogram(stream, args.sync, args.signal, bw, window)
        except ValueError as exc:
            raise DomainFailure(str(exc)) from None
    fit = pa.fit_lifetime(curve, args.t_min or cfg.get("fit", "t_min", 0.0))
    _emit_fit(fit, args.out)
    print(f"tau_slow = {fit.tau_slow * 1e9:.4g} ns ({fit.components} component(s))",
          file=sys.stderr)


def cmd_fit_saturation(args, cfg: RunConfig):
    p, r = _read_columns(args.input, ["power_W", "rate"])
    fit = pa.fit_saturation(p, r)
    _emit_fit(fit, args.out)
    print(f"P_sat = {fit.p_sat * 1e6:.4g} uW, R_inf = {fit.r_inf:.4g} /s", file=sys.stderr)


def cmd_fit_cosine(args, cfg: RunConfig):
    th, r = _read_columns(args.input, ["theta_rad", "rate"])
    fit = pa.fit_cosine(th, r)
    _emit_fit(fit, args.out)
    if fit.suppression_defined:
        print(f"suppression factor = {fit.suppression:.4g}", file=sys.stderr)
    else:
        print("suppression undefined: modulation amplitude >= mean", file=sys.stderr)


def cmd_fit_g2(args, cfg: RunConfig):
    with open(args.input, newline="") as fh:
        head = next(csv.reader(fh), [])
    tau_col = "tau_s" if "tau_s" in head else "bin_center_s"
    g_col = args.column or ("g2" if "g2" in head else
                            "g2_corrected" if "g2_corrected" in head else "g2_raw")
    tau, g = _read_columns(args.input, [tau_col, g_col])
    fit = pa.fit_g2_three_level(pa.G2Curve(tau, g))
    _emit_fit(fit, args.out)
    print(f"tau1 = {fit.tau1 * 1e9:.4g} ns, a = {fit.a:.4g}"
          + (" (two-level branch)" if fit.two_level else f", tau2 = {fit.tau2 * 1e9:.4g} ns"),
          file=sys.stderr)


def cmd_budget(args, cfg: RunConfig):
    b = dc.efficiency_budget(args.beta_side, args.fiber_T, args.confocal)
    lines = [
        f"fiber coupling per side      {b.beta_side * 100:g} %",
        f"fiber-to-detector transmission {b.fiber_transmission * 100:g} %",
        f"end-to-end, one side         {b.end_to_end_one_side * 100:g} %",
        f"end-to-end, both sides       {b.end_to_end_two_side * 100:g} %",
        f"confocal collection          {b.confocal_efficiency * 100:g} %",
        f"fiber / confocal ratio       {b.fiber_to_confocal_ratio:g}",
    ]
    print("\n".join(lines))
    if args.json:
        _write_or_print(json.dumps(b.__dict__, indent=2, sort_keys=True), args.json)


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nvfiber", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="run configuration file (sectioned key = value)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    L, T, P = _qty("length"), _qty("time"), _qty("power")

    s = sub.add_parser("modes", help="guided modes of a fiber")
    s.add_argument("--diameter", type=L, help="fiber diameter, e.g. 450nm")
    s.add_argument("--wavelength", type=L, help="vacuum wavelength, e.g. 637nm")
    s.add_argument("--l-max", type=int, help="highest azimuthal order (default: all)")
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.set_defaults(func=cmd_modes)

    s = sub.add_parser("coupling-sweep", help="coupling efficiency versus diameter")
    s.add_argument("--d-min", type=L, default=200e-9)
    s.add_argument("--d-max", type=L, default=1e-6)
    s.add_argument("--step", type=L, default=10e-9)
    s.add_argument("--spectrum", choices=["nv", "mono", "config"], default="nv")
    s.add_argument("--wavelength", type=L, default=637e-9, help="for --spectrum mono")
    s.add_argument("--points", type=int, default=32, help="spectral quadrature points")
    s.add_argument("--orientation", choices=["radial", "azimuthal", "axial"], default="radial")
    s.add_argument("--r", type=L, help="dipole radius (default: on the surface)")
    s.add_argument("--eps", type=float, default=0.01, help="fraction-cutoff threshold")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.set_defaults(func=cmd_coupling_sweep)

    s = sub.add_parser("taper", help="taper profile and adiabaticity report")
    s.add_argument("--r0", type=L, default=62.5e-6, help="initial fiber radius")
    s.add_argument("--hot-zone", type=L, default=5e-3, help="hot-zone length L")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--waist-diameter", type=L, default=450e-9)
    g.add_argument("--elongation", type=L, help="total elongation x_end")
    s.add_argument("--kind", choices=["constant_hot_zone", "linear"], default="constant_hot_zone")
    s.add_argument("--cone", nargs=3, metavar=("D_START", "D_END", "HALF_ANGLE_DEG"),
                   help="check a straight cone instead of a pull recipe")
    s.add_argument("--wavelength", type=L, default=700e-9)
    s.add_argument("--safety", type=float, default=1.0)
    s.add_argument("--out", help="CSV output (z_m, r_m, rho)")
    s.set_defaults(func=cmd_taper)

    s = sub.add_parser("simulate", help="Monte-Carlo photon stream from a scene")
    s.add_argument("--duration", type=T)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="stream file (.ttg or .csv)")
    s.add_argument("--format", choices=["ttg", "csv"])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", help="correlation histogram and g2")
    s.add_argument("input", help="stream file (.ttg or .csv)")
    s.add_argument("--ch-a", type=int, default=1)
    s.add_argument("--ch-b", type=int, default=2)
    s.add_argument("--bin", type=T, help="bin width (default 1ns)")
    s.add_argument("--max-delay", type=T, help="delay range (default 200ns)")
    s.add_argument("--mode", choices=["full", "start_stop"], default="full")
    s.add_argument("--duration", type=T, help="acquisition time (default: last tag)")
    s.add_argument("--background", type=_four_rates, metavar="S1,S2,N1,N2",
                   help="mean signal and background rates per channel")
    s.add_argument("--lenient", action="store_true", help="sort out-of-order input")
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("fit-lifetime", help="bi-exponential lifetime fit")
    s.add_argument("input", help="stream file, or CSV decay curve (bin_center_s,counts)")
    s.add_argument("--stream-csv", action="store_true", help="treat a .csv input as a stream")
    s.add_argument("--sync", type=int, default=0)
    s.add_argument("--signal", type=int, default=1)
    s.add_argument("--bin", type=T)
    s.add_argument("--window", type=T)
    s.add_argument("--t-min", type=T, help="ignore delays below this")
    s.add_argument("--out", help="JSON output path (default stdout)")
    s.set_defaults(func=cmd_fit_lifetime)

    s = sub.add_parser("fit-saturation", help="saturation curve fit (CSV power_W,rate)")
    s.add_argument("input")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_saturation)

    s = sub.add_parser("fit-cosine", help="polarization cosine fit (CSV theta_rad,rate)")
    s.add_argument("input")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_cosine)

    s = sub.add_parser("fit-g2", help="three-level g2 fit (CSV tau_s,g2)")
    s.add_argument("input")
    s.add_argument("--column", help="g2 column name (default g2, g2_corrected or g2_raw)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_g2)

    s = sub.add_parser("budget", help="collection-efficiency budget")
    s.add_argument("--beta-side", type=_fraction, default=0.15)
    s.add_argument("--fiber-T", type=_fraction, default=0.10)
    s.add_argument("--confocal", type=_fraction, default=0.005)
    s.add_argument("--json", help="also write the budget as JSON")
    s.set_defaults(func=cmd_budget)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"nvfiber: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (tio.TimeTagFormatError, tio.TimeTagValidationError) as exc:
        print(f"nvfiber: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainFailure, FitError, td.ModeSolveError) as exc:
        print(f"nvfiber: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"nvfiber: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
