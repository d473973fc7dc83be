"""Command-line front end.

Exit codes: 0 success, 2 input or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as mio
from .bsa import PAIR_NAMES, STATE_ORDER, ProjectionTable, extinction_ratio, hom_scan, projection_test, visibility
from .devices import FitError, fit_coupling_curve, solve_pdc
from .netsim import SessionRequest, channels_required, run_simulation
from .protocol import UndefinedEstimate
from .scenario import ConfigError, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _delays(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        if len(parts) == 3:
            start, stop, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 3 or stop <= start:
                raise ValueError
            return np.linspace(start, stop, n)
        vals = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:points or a comma list, got {text!r}") from None
    if vals.size < 1 or np.any(np.diff(vals) <= 0):
        raise argparse.ArgumentTypeError("delays must be strictly increasing")
    return vals


def _out_dir(args) -> Path:
    p = Path(args.out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create output directory {str(p)!r}: {e.strerror}") from None
    return p


def _emit(lines, out: Path, name: str) -> str:
    text = mio.kv_to_text(lines)
    mio.write_text(out / name, text)
    sys.stdout.write(text)
    return text


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_fit(args) -> int:
    try:
        text = mio.read_text(args.input)
    except OSError as e:
        raise InputError(f"cannot read {args.input!r}: {e.strerror}") from None
    samples = mio.coupler_from_csv(text)
    fits = {}
    lines = []
    for pol in ("H", "V"):
        if pol not in samples:
            continue
        f = fit_coupling_curve(*samples[pol])
        fits[pol] = f
        k = pol.lower()
        lines += [(f"kappa_{k}", f.kappa), (f"arc_extra_{k}", f.arc_extra), (f"rms_residual_{k}", f.rms_residual),
                  (f"samples_{k}", f.n_samples)]
    if "H" in fits and "V" in fits and fits["H"].kappa != fits["V"].kappa:
        hi = max(3 * math.pi / min(fits["H"].kappa, fits["V"].kappa), 1.0)
        pdc, residual = solve_pdc(fits["H"].kappa, fits["V"].kappa, (0.0, hi))
        lines += [("pdc_length_mm", pdc.coupling_length), ("pdc_residual", residual)]
    out = _out_dir(args)
    _emit(lines, out, "fit.txt")
    if args.plot:
        from .plotting import plot_coupler_fit

        plot_coupler_fit(samples, fits, out / "fit.png")
    return EXIT_OK


def cmd_hom(args) -> int:
    cfg = load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    trials = cfg.hom.trials if args.trials is None else args.trials
    delays = cfg.hom.delays if args.delays is None else args.delays
    curve = hom_scan(cfg.analyzers[0], cfg.hom.source, delays + cfg.hom.delay_offset, trials, seed,
                     cfg.detectors, jobs=args.jobs)
    if cfg.hom.delay_offset:
        curve = type(curve)(delays, curve.counts, curve.trials_per_point)
    vis = {p: visibility(curve, p) for p in PAIR_NAMES}
    out = _out_dir(args)
    mio.write_text(out / "hom.csv", mio.hom_to_csv(curve))
    lines = [("seed", seed), ("trials_per_point", trials), ("points", len(delays))]
    for p in PAIR_NAMES:
        lines += [(f"visibility_{p}", vis[p].value), (f"peaked_{p}", vis[p].peaked)]
    lines.append(("visibility_mean", float(np.mean([v.value for v in vis.values()]))))
    _emit(lines, out, "hom.txt")
    if args.plot:
        from .plotting import plot_hom

        plot_hom(curve, out / "hom.png", {p: v.value for p, v in vis.items()})
    return EXIT_OK


def cmd_projection(args) -> int:
    cfg = load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    trials = cfg.projection.trials if args.trials is None else args.trials
    counts = {}
    for i, state in enumerate(STATE_ORDER):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        counts[state] = projection_test(cfg.analyzers[0], state, trials, rng, cfg.projection.input_port, cfg.detectors)
    table = ProjectionTable(counts)
    out = _out_dir(args)
    mio.write_text(out / "projection.csv", mio.projection_to_csv(table))
    lines = [("seed", seed), ("trials", trials), ("input_port", cfg.projection.input_port),
             ("extinction_ratio_hv", extinction_ratio(table))]
    for s in STATE_ORDER:
        lines += [(f"fraction_{s}_p{k}", float(f)) for k, f in enumerate(table.fractions(s), start=1)]
    _emit(lines, out, "projection.txt")
    if args.plot:
        from .plotting import plot_projection

        plot_projection(table, out / "projection.png")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    requests = cfg.requests
    if args.trials is not None:
        requests = [SessionRequest(r.client_a, r.client_b, args.trials) for r in requests]
    method = args.method or cfg.method
    report = run_simulation(cfg.clients, cfg.server(), requests, seed, jobs=args.jobs, method=method)
    out = _out_dir(args)
    mio.write_text(out / "report.txt", mio.kv_to_text(report.summary()))
    for s in report.sessions:
        mio.write_text(out / f"coincidences_{s.index}.csv", mio.coincidence_to_csv(s.table))
        if len(s.result.tables) > 1:
            for (sa, sb), t in sorted(s.result.tables.items()):
                mio.write_text(out / f"coincidences_{s.index}_{sa}_{sb}.csv", mio.coincidence_to_csv(t))
    lines = []
    for s in report.sessions:
        est = s.estimates()
        lines += [(f"session.{s.index}.{k}", est[k]) for k in ("Q_rect", "Q_diag", "E_rect", "E_diag")]
    sys.stdout.write(mio.kv_to_text(lines))
    if args.plot:
        from .plotting import plot_estimates

        labels = [f"{s.client_a}-{s.client_b}" for s in report.sessions]
        ests = [s.estimates() for s in report.sessions]
        plot_estimates(labels, [(e["Q_rect"], e["Q_diag"]) for e in ests],
                       [(e["E_rect"], e["E_diag"]) for e in ests], out / "estimates.png")
    return EXIT_OK


def cmd_channels(args) -> int:
    if args.n < 2:
        raise InputError(f"need at least 2 clients, got {args.n}")
    tops = ("star", "mesh") if args.topology == "both" else (args.topology,)
    for t in tops:
        sys.stdout.write(f"{t} = {channels_required(t, args.n)}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="RNG seed (default: scenario seed)")
    common.add_argument("--trials", type=_positive, default=None,
                        help="trials per point / per state, or pulse pairs per session for 'run'")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    common.add_argument("--plot", dest="plot", action="store_true", default=True, help="write PNG figures (default)")
    common.add_argument("--no-plot", dest="plot", action="store_false", help="skip figures")

    p = argparse.ArgumentParser(prog="mdinet", description="MDI-QKD star-network simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="fit coupled-mode curves from a CSV of samples")
    s.add_argument("input", help="CSV with header coupling_length_mm,cross_power,polarization")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("hom", parents=[common], help="HOM delay scan and pair visibilities")
    s.add_argument("scenario")
    s.add_argument("--delays", type=_delays, default=None, help="start:stop:points or a comma list")
    s.set_defaults(func=cmd_hom)

    s = sub.add_parser("projection", parents=[common], help="single-photon projection test")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_projection)

    s = sub.add_parser("run", parents=[common], help="full network run")
    s.add_argument("scenario")
    s.add_argument("--method", choices=("exact", "pulse"), default=None)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("channels", parents=[common], help="quantum channels for star vs mesh")
    s.add_argument("n", type=int)
    s.add_argument("--topology", choices=("star", "mesh", "both"), default="both")
    s.set_defaults(func=cmd_channels)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ConfigError, mio.ParseError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT
    except (FitError, UndefinedEstimate, ArithmeticError, np.linalg.LinAlgError, ValueError) as e:
        sys.stderr.write(f"numeric failure: {e}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
