"""Command-line entry point: ``nbundle <command> [options]``.

Every command writes headered CSV files and a ``run_manifest.json`` into
``--out``; passing that manifest back through ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, header_lines, load_config, write_manifest
from .qspace import build_space
from .sweeps import (bundle_duration, correlation_table, counting_table, laser_detuning,
                     rate_summary, resonance_table, scan, sweep_cn)
from .bundles import cluster, write_bundles_csv, write_histogram_csv
from .steady import observables
from .trajectories import read_click_record, simulate, write_click_record

COMMANDS = ("resonances", "scan", "sweep-cn", "trajectory", "analyze")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, header: list[str], columns: list[str], rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


def parse_grid(text: str):
    """``a,b,c`` list or ``start:stop:num[:log]`` range."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) not in (3, 4):
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start:stop:num[:log]")
        spacing = parts[3] if len(parts) == 4 else "lin"
        return {"start": float(parts[0]), "stop": float(parts[1]), "num": int(parts[2]),
                "spacing": spacing}
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="YAML config or run_manifest.json to start from")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    g.add_argument("--workers", type=int, help="worker processes")
    g.add_argument("--nmax", dest="n_max", type=int, help="photon-number truncation")
    g.add_argument("--dt", type=float, help="propagator step, units of 1/g")
    g.add_argument("--g-hz", dest="g_hz", type=float, help="coupling in Hz for rate_cps columns")
    g.add_argument("--figures", action="store_const", const=True, default=None,
                   help="also render PNG figures")
    m = common.add_argument_group("model (units of g)")
    m.add_argument("--gamma-a", dest="gamma_a", type=float)
    m.add_argument("--gamma-sigma", dest="gamma_sigma", type=float)
    m.add_argument("--delta", type=float, help="emitter-cavity detuning")
    m.add_argument("--omega", type=float, help="drive amplitude")
    m.add_argument("--omega-L", dest="omega_L_detuning", type=float,
                   help="laser-cavity detuning (rule 'fixed')")

    parser = argparse.ArgumentParser(prog="nbundle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resonances", parents=[common], help="resonance table for N and omega")
    p.add_argument("--N-values", dest="N_values", type=_int_list, help="e.g. 1,2,3,4,5")
    p.add_argument("--omega-grid", dest="omega_grid", type=parse_grid)

    p = sub.add_parser("scan", parents=[common], help="steady state over (omega, omega_L)")
    p.add_argument("--omega-grid", dest="omega_grid", type=parse_grid)
    p.add_argument("--omega-L-grid", dest="omega_L_grid", type=parse_grid)
    p.add_argument("--orders", type=_int_list, help="correlation orders, e.g. 2,3,4,5")

    p = sub.add_parser("sweep-cn", parents=[common], help="purity and rates along C_N")
    p.add_argument("--N", type=int)
    p.add_argument("--omega-grid", dest="omega_grid", type=parse_grid)
    p.add_argument("--rule", dest="omega_L_rule", choices=("fixed", "ladder", "dressed", "ridge"))
    p.add_argument("--target-bundles", dest="target_bundles", type=int)
    p.add_argument("--duration", type=float, help="trajectory length per point, 1/gamma_a")
    p.add_argument("--max-duration", dest="max_duration", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--window", type=float)

    for name, helptext in (("trajectory", "simulate one click record and analyse it"),
                           ("analyze", "analyse an existing click record")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--N", type=int)
        p.add_argument("--window", type=float, help="clustering gap, 1/gamma_a")
        p.add_argument("--tau-max", dest="tau_max", type=float)
        p.add_argument("--tau-bin", dest="tau_bin", type=float)
        p.add_argument("--count-window", dest="count_window", type=float)
        if name == "trajectory":
            p.add_argument("--rule", dest="omega_L_rule", choices=("fixed", "ladder", "dressed", "ridge"))
            p.add_argument("--duration", type=float, help="1/gamma_a")
            p.add_argument("--target-bundles", dest="target_bundles", type=int)
            p.add_argument("--burn-in", dest="burn_in", type=float)
            p.add_argument("--snapshot", action="store_const", const=True, default=None,
                           help="also record populations over --snapshot-duration")
            p.add_argument("--snapshot-duration", dest="snapshot_duration", type=float)
        else:
            p.add_argument("--record", help="click record written by 'trajectory'")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    mapping = {}
    if args.config:
        mapping, command = load_config(args.config)
        if command is not None and command != args.command:
            raise ValueError(f"manifest is for '{command}', not '{args.command}'")
    flags = {k: v for k, v in vars(args).items()
             if k not in ("config", "command") and v is not None}
    mapping.update(flags)
    return RunConfig.from_mapping(mapping)


def cmd_resonances(cfg: RunConfig, out: Path, header) -> list[Path]:
    if any(int(N) < 1 for N in cfg.N_values):
        raise ValueError("N values must be >= 1")
    rows = resonance_table(cfg.N_values, cfg.omegas(), cfg.delta)
    paths = [write_table(out / "resonances.csv", header(),
                         ["N", "omega", "eq1_detuning", "eq2_detuning"], rows)]
    if cfg.figures:
        from .plotting import plot_resonances
        paths.append(plot_resonances(rows, out / "resonances.png"))
    return paths


def cmd_scan(cfg: RunConfig, out: Path, header) -> list[Path]:
    rows = scan(cfg.params(), cfg.omegas(), cfg.detunings(), cfg.truncation, cfg.orders,
                cfg.workers)
    cols = ["omega", "omega_L_detuning", "status", "n_a", "n_sigma"] + [f"g{n}" for n in cfg.orders]
    paths = [write_table(out / "scan.csv", header(), cols, rows)]
    if cfg.figures:
        from .plotting import plot_scan
        paths.append(plot_scan(rows, cfg.orders, out / "scan.png"))
    return paths


def cmd_sweep_cn(cfg: RunConfig, out: Path, header) -> list[Path]:
    rows = sweep_cn(cfg.params(), cfg.omegas(), cfg.N, cfg.truncation, cfg.seed,
                    cfg.omega_L_rule, cfg.dt, cfg.burn_in, cfg.window, cfg.target_bundles,
                    cfg.max_duration, cfg.duration, cfg.workers)
    cols = ["omega", "omega_L", "status", "n_a", "g2", "gN", "lambda1", "lambda1_err", "lambdaN",
            "lambdaN_err", "purity", "purity_err", "other_rate", "n_bundles", "duration", "seed"]
    if cfg.g_hz is not None:
        cols.append("rate_cps")
        for r in rows:
            if "lambdaN" in r:
                r["rate_cps"] = r["lambdaN"] * cfg.g_hz
    paths = [write_table(out / "sweep_cn.csv", header(rate_units="g"), cols, rows)]
    if cfg.figures:
        from .plotting import plot_sweep
        paths.append(plot_sweep(rows, cfg.N, out / "sweep_cn.png"))
    return paths


def analyze_record(record, cfg: RunConfig, out: Path, header, snapshot=None) -> list[Path]:
    space = build_space(int(record.settings.get("n_max", cfg.truncation)))
    N = cfg.N
    stream = cluster(record, cfg.window)
    hdr = {line[2:].split("=", 1)[0]: line[2:].split("=", 1)[1] for line in header()}
    paths = []
    write_bundles_csv(stream, out / "bundles.csv", {**hdr, "time_units": "1/gamma_a"})
    write_histogram_csv(stream.histogram(), out / "histogram.csv", hdr)
    paths += [out / "bundles.csv", out / "histogram.csv"]
    rates = rate_summary(record, N, cfg.window, space)
    if cfg.g_hz is not None and "lambdaN" in rates:
        rates["rate_cps"] = rates["lambdaN"] * cfg.g_hz
    paths.append(write_table(out / "rates.csv", header(rate_units="g"), list(rates), [rates]))
    corr = correlation_table(record, N, cfg.window, cfg.tau_max, cfg.tau_bin, space)
    n_rows = len(corr["tau"])
    paths.append(write_table(out / "correlations.csv", header(tau_units="1/gamma_a"), list(corr),
                             [{k: v[i] for k, v in corr.items()} for i in range(n_rows)]))
    counting = None
    if N >= 2 and record.observed_time >= cfg.count_window:
        counting = counting_table(record, N, cfg.count_window)
        extra = {k: _fmt(counting[k]) for k in ("lambda1", "lambdaN", "chi2", "p_value", "dof",
                                                "windows", "T", "mean", "variance")}
        rows = [{"n": n, "observed": o, "expected": e}
                for n, o, e in zip(counting["n"], counting["observed"], counting["expected"])]
        paths.append(write_table(out / "counting.csv",
                                 header(rate_units="gamma_a", **extra), ["n", "observed", "expected"],
                                 rows))
    if cfg.figures:
        from . import plotting
        paths.append(plotting.plot_clicks(record, out / "clicks.png", snapshot=snapshot))
        paths.append(plotting.plot_correlations(corr, N, out / "correlations.png"))
        if counting is not None:
            paths.append(plotting.plot_counting(counting, out / "counting.png"))
    return paths


def cmd_trajectory(cfg: RunConfig, out: Path, header) -> list[Path]:
    space = build_space(cfg.truncation)
    params = cfg.params()
    params = params.with_(omega_L_detuning=laser_detuning(cfg.omega_L_rule, params, space, cfg.N))
    duration = cfg.duration
    if duration is None:
        n_a = observables(params, space, ())["n_a"]
        duration = bundle_duration(n_a, cfg.N, cfg.target_bundles, cfg.burn_in, cfg.max_duration)
    record = simulate(params, space, duration, cfg.seed, dt=cfg.dt, burn_in=cfg.burn_in)
    write_click_record(record, out / "clicks.csv")
    paths = [out / "clicks.csv"]
    snapshot = None
    if cfg.snapshot:
        _, snapshot = simulate(params, space, cfg.snapshot_duration, cfg.seed, dt=cfg.dt,
                               burn_in=0.0, snapshot=True)
        cols = ["time"] + space.labels()
        rows = [dict(zip(cols, [t, *pop])) for t, pop in zip(snapshot.times, snapshot.populations)]
        paths.append(write_table(out / "snapshot.csv", header(time_units="1/gamma_a"), cols, rows))
    return paths + analyze_record(record, cfg, out, header, snapshot)


def cmd_analyze(cfg: RunConfig, out: Path, header) -> list[Path]:
    if not cfg.record:
        raise ValueError("analyze needs --record <clicks.csv>")
    return analyze_record(read_click_record(cfg.record), cfg, out, header)


HANDLERS = {"resonances": cmd_resonances, "scan": cmd_scan, "sweep-cn": cmd_sweep_cn,
            "trajectory": cmd_trajectory, "analyze": cmd_analyze}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)

        def header(**extra):
            return header_lines(cfg, args.command, extra)

        t0 = time.perf_counter()
        paths = HANDLERS[args.command](cfg, out, header)
        timings = {"total": round(time.perf_counter() - t0, 3)}
        manifest = write_manifest(out, args.command, cfg, paths, timings)
        print(json.dumps({"status": "ok", "command": args.command, "manifest": str(manifest),
                          "outputs": [p.name for p in paths]}))
        return 0
    except Exception as exc:
        print(json.dumps({"status": "error", "command": args.command,
                          "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
