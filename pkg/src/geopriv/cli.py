"""Command-line interface.

Subcommands: mask, evaluate, heatmap, simulate, sweep. All outputs are
written atomically (temp file + rename), all randomness flows from a
single --seed, and exit codes are stable: 0 success, 1 validation
error, 2 I/O error.

A --config file of key=value lines supplies defaults; explicit flags
always win.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile

from .errors import GeoprivError
from .heatmap import (
    GridSpec,
    aggregate_multi,
    aggregate_single,
    classify,
    coarsen,
    danger_overlay,
    heatmap_geojson_str,
    retention_filter,
    write_alerts_csv,
)
from .ingest import (
    parse_age_sidecar,
    parse_population,
    parse_timestamp,
    parse_traces,
    parse_zones,
    read_homes_csv,
    sample_residential_points,
    write_homes_csv,
    write_traces_csv,
)
from .mask import (
    GeoIndConfig,
    MaskConfig,
    mask_dataset,
    read_masked_csv,
    write_masked_csv,
)
from .privacy import evaluate_dataset
from .tracesim import (
    DEFAULT_D_MAX_M,
    DEFAULT_T_WINDOW_S,
    SimConfig,
    generate_traces,
    tradeoff_sweep,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(message: str) -> "GeoprivError":
    return GeoprivError(message)


def _check(condition: bool, flag: str, requirement: str):
    if not condition:
        raise _fail(f"{flag}: {requirement}")


def _atomic_write(path: str, data: str | bytes):
    mode = "wb" if isinstance(data, bytes) else "w"
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".geopriv-")
    try:
        with os.fdopen(fd, mode, newline="" if mode == "w" else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _warn_row_errors(errors, source: str):
    for err in errors:
        print(f"warning: {source}: {err}", file=sys.stderr)


def _load_traces(path: str):
    records, errors = parse_traces(path)
    _warn_row_errors(errors, path)
    return records


def _load_homes(args, pop=None):
    """Residential points from --homes or --synthesize-homes."""
    if getattr(args, "homes", None):
        return read_homes_csv(args.homes)
    ppp = getattr(args, "synthesize_homes", None)
    if ppp is not None:
        _check(ppp >= 1, "--synthesize-homes", "persons per point must be >= 1")
        if pop is None:
            if not getattr(args, "population", None):
                raise _fail("--synthesize-homes requires --population")
            pop = parse_population(args.population)
        return sample_residential_points(pop, ppp, seed=args.seed)
    raise _fail("no residential source: pass --homes or --synthesize-homes")


def _render_plot(render, path: str):
    buf = io.BytesIO()
    render(buf)
    _atomic_write(path, buf.getvalue())


def cmd_mask(args) -> int:
    _check(args.seed >= 0, "--seed", "must be >= 0")
    zones = parse_zones(args.zones) if args.zones else None
    revoked = frozenset(u for u in (args.revoke_users or "").split(",") if u)
    brackets = parse_age_sidecar(args.age_sidecar) if args.age_sidecar else None

    pop = None
    if args.mechanism == "gaussian-skew":
        _check(args.c is not None, "--c", "required for gaussian-skew")
        _check(args.c > 0, "--c", "must be > 0 meters")
        _check(0.0 <= args.am <= 1.0, "--am", "must be in [0, 1]")
        _check(args.min_displacement >= 0, "--min-displacement", "must be >= 0")
        if not args.population:
            raise _fail("--population: required for gaussian-skew")
        pop = parse_population(args.population)
        cfg = MaskConfig(
            scale_m=args.c, age_weight=args.am, min_displacement_m=args.min_displacement
        )
    elif args.mechanism == "planar-laplace":
        _check(args.epsilon is not None, "--epsilon", "required for planar-laplace")
        _check(args.epsilon > 0, "--epsilon", "must be > 0 (units 1/m)")
        _check(args.radius > 0, "--radius", "must be > 0 meters")
        cfg = GeoIndConfig(epsilon=args.epsilon, nominal_radius_m=args.radius)
    else:
        cfg = None

    records = _load_traces(args.traces)
    masked, report = mask_dataset(
        records,
        pop,
        cfg,
        args.mechanism,
        zones=zones,
        seed=args.seed,
        user_brackets=brackets,
        revoked_users=revoked,
    )
    buf = io.StringIO()
    write_masked_csv(masked, buf)
    _atomic_write(args.out, buf.getvalue())
    removed = report.total_removed
    print(
        f"geopriv mask: seed={args.seed} mechanism={args.mechanism} "
        f"in={len(records)} redacted={removed} out={len(masked)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _check(0.0 < args.coverage < 1.0, "--coverage", "must be in (0, 1)")
    _check(args.k_target >= 1, "--k-target", "must be >= 1")
    _check(args.seed >= 0, "--seed", "must be >= 0")

    masked, errors = read_masked_csv(args.masked)
    _warn_row_errors(errors, args.masked)
    if not masked:
        raise _fail(f"{args.masked}: no masked records to evaluate")
    needs_epsilon = [m for m in masked if m.mechanism == "planar-laplace" and m.epsilon is None]
    if needs_epsilon:
        if args.epsilon is None:
            raise _fail(
                "--epsilon: required to evaluate planar-laplace records "
                "(the masked CSV does not carry it)"
            )
        _check(args.epsilon > 0, "--epsilon", "must be > 0 (units 1/m)")
        from dataclasses import replace

        masked = [
            replace(m, epsilon=args.epsilon)
            if m.mechanism == "planar-laplace" and m.epsilon is None
            else m
            for m in masked
        ]

    homes = _load_homes(args)
    report = evaluate_dataset(masked, homes, args.coverage, args.k_target, seed=args.seed)
    _atomic_write(args.out, report.to_json() + "\n")
    if args.out_csv:
        buf = io.StringIO()
        write_masked_csv(masked, buf, k_risk=list(report.results))
        _atomic_write(args.out_csv, buf.getvalue())
    if args.plot:
        from .plots import plot_k_distribution

        _render_plot(lambda buf: plot_k_distribution(report, buf), args.plot)
    s = report.summary()
    print(
        f"geopriv evaluate: seed={args.seed} n={s['n']} median_k={s['median_k']:g} "
        f"frac_k_ge_target={s['frac_k_ge_target']:.4f} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_heatmap(args) -> int:
    _check(args.cell_size > 0, "--cell-size", "must be > 0 meters")
    _check(args.window_days >= 1, "--window-days", "must be >= 1")
    _check(args.coarsen >= 1, "--coarsen", "must be >= 1")
    if args.mode == "single":
        _check(bool(args.user), "--user", "required in single mode")
    else:
        _check(args.k_min is not None, "--k-min", "required in multi mode")
        _check(args.k_min >= 1, "--k-min", "must be >= 1")

    records = _load_traces(args.traces)
    zones = parse_zones(args.zones) if args.zones else None

    if args.mode == "single":
        known = {r.user_id for r in records}
        if args.user not in known:
            raise _fail(f"--user: unknown user id {args.user!r}")
        records = [r for r in records if r.user_id == args.user]

    if records:
        now = parse_timestamp(args.now) if args.now else max(r.timestamp for r in records)
        records = retention_filter(records, now, args.window_days)

    if records:
        lats = [r.point.lat_deg for r in records]
        lons = [r.point.lon_deg for r in records]
        spec = GridSpec.cover((min(lats), min(lons), max(lats), max(lons)), args.cell_size)
        if args.mode == "single":
            hm = aggregate_single(records, spec, zones)
            if hm.cell_users:
                hm = classify(hm)
        else:
            hm = aggregate_multi(records, spec, args.k_min, zones)
        if args.coarsen > 1:
            hm = coarsen(hm, args.coarsen)
        geojson = heatmap_geojson_str(hm) + "\n"
    else:
        geojson = (
            json.dumps({"type": "FeatureCollection", "features": []}, indent=2, sort_keys=True)
            + "\n"
        )
    _atomic_write(args.out, geojson)

    alerts_path = args.alerts
    if zones is not None and zones.danger_zones:
        alerts = danger_overlay(records, zones)
        if alerts_path is None:
            alerts_path = os.path.splitext(args.out)[0] + ".alerts.csv"
        buf = io.StringIO()
        write_alerts_csv(alerts, buf)
        _atomic_write(alerts_path, buf.getvalue())
        print(f"geopriv heatmap: {len(alerts)} danger alerts -> {alerts_path}", file=sys.stderr)
    print(
        f"geopriv heatmap: seed={args.seed} mode={args.mode} records={len(records)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    _check(args.users >= 0, "--users", "must be >= 0")
    _check(0 <= args.infected <= args.users, "--infected", "must be between 0 and --users")
    _check(args.duration_hours >= 1, "--duration-hours", "must be >= 1")
    _check(args.step_minutes >= 1, "--step-minutes", "must be >= 1")
    _check(args.speed > 0, "--speed", "must be > 0 m/s")
    _check(args.seed >= 0, "--seed", "must be >= 0")

    pop = parse_population(args.population)
    cfg = SimConfig(
        n_users=args.users,
        n_infected=args.infected,
        duration_hours=args.duration_hours,
        step_minutes=args.step_minutes,
        speed_mps=args.speed,
        seed=args.seed,
        start=parse_timestamp(args.start),
    )
    records = generate_traces(cfg, pop)
    buf = io.StringIO()
    write_traces_csv(records, buf)
    _atomic_write(args.out, buf.getvalue())
    print(
        f"geopriv simulate: seed={args.seed} users={args.users} records={len(records)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _parse_grid(text: str, mechanism: str) -> list[float]:
    expected_key = "c" if mechanism == "gaussian-skew" else "epsilon"
    if "=" not in text:
        raise _fail(f"--grid: expected {expected_key}=v1,v2,..., got {text!r}")
    key, _, values = text.partition("=")
    if key.strip() != expected_key:
        raise _fail(f"--grid: parameter {key.strip()!r} does not match mechanism {mechanism!r}")
    try:
        grid = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise _fail(f"--grid: values must be numbers, got {values!r}")
    if not grid:
        raise _fail("--grid: needs at least one value")
    if any(v <= 0 for v in grid):
        raise _fail("--grid: values must be > 0")
    return grid


def cmd_sweep(args) -> int:
    _check(0.0 < args.coverage < 1.0, "--coverage", "must be in (0, 1)")
    _check(args.k_target >= 1, "--k-target", "must be >= 1")
    _check(args.d_max > 0, "--d-max", "must be > 0 meters")
    _check(args.t_window >= 0, "--t-window", "must be >= 0 seconds")
    _check(0.0 <= args.am <= 1.0, "--am", "must be in [0, 1]")
    _check(args.seed >= 0, "--seed", "must be >= 0")
    grid = _parse_grid(args.grid, args.mechanism)

    pop = parse_population(args.population)
    records = _load_traces(args.traces)
    homes = _load_homes(args, pop=pop)
    brackets = parse_age_sidecar(args.age_sidecar) if args.age_sidecar else None

    if args.infected:
        infected = {u for u in args.infected.split(",") if u}
    else:
        users = sorted({r.user_id for r in records})
        _check(
            args.n_infected <= len(users),
            "--n-infected",
            f"only {len(users)} users in the trace file",
        )
        infected = set(users[: args.n_infected])

    rows = tradeoff_sweep(
        records,
        pop,
        homes,
        args.mechanism,
        grid,
        infected,
        d_max_m=args.d_max,
        t_window_s=args.t_window,
        k_target=args.k_target,
        coverage=args.coverage,
        seed=args.seed,
        age_weight=args.am,
        user_brackets=brackets,
    )
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    _atomic_write(args.out, buf.getvalue())
    if args.plot:
        from .plots import plot_tradeoff

        label = "scaling factor c (m)" if args.mechanism == "gaussian-skew" else "epsilon (1/m)"
        _render_plot(lambda buf: plot_tradeoff(rows, buf, label), args.plot)
    print(
        f"geopriv sweep: seed={args.seed} mechanism={args.mechanism} rows={len(rows)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_synthesize_homes(args) -> int:
    _check(args.persons_per_point >= 1, "--persons-per-point", "must be >= 1")
    _check(args.seed >= 0, "--seed", "must be >= 0")
    pop = parse_population(args.population)
    homes = sample_residential_points(pop, args.persons_per_point, seed=args.seed)
    buf = io.StringIO()
    write_homes_csv(homes, buf)
    _atomic_write(args.out, buf.getvalue())
    print(
        f"geopriv synthesize-homes: seed={args.seed} homes={len(homes)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(
        prog="geopriv",
        description="Density-aware geomasking with k-anonymity evaluation, "
        "k-suppressed heat maps, and contact-tracing utility analysis.",
    )
    parser.add_argument(
        "--config",
        help="key=value file supplying flag defaults (explicit flags win)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="global RNG seed (default 0)")
        p.add_argument("--config", help=argparse.SUPPRESS)

    p = sub.add_parser("mask", help="anonymize a trace CSV")
    p.add_argument("--traces", required=True, help="input CSV: user_id,timestamp,lat,lon")
    p.add_argument(
        "--mechanism",
        required=True,
        choices=["gaussian-skew", "planar-laplace", "redact-only"],
    )
    p.add_argument("--population", help="block-group GeoJSON (required for gaussian-skew)")
    p.add_argument("--c", type=float, help="gaussian scaling factor in meters (> 0)")
    p.add_argument(
        "--am", type=float, default=0.0, help="age-multiplier weight in [0, 1] (default 0)"
    )
    p.add_argument(
        "--min-displacement",
        type=float,
        default=0.0,
        help="minimum skew distance in meters (default 0)",
    )
    p.add_argument("--epsilon", type=float, help="planar-laplace privacy parameter (1/m)")
    p.add_argument(
        "--radius",
        type=float,
        default=100.0,
        help="nominal protection radius documenting the (epsilon, r) level (default 100 m)",
    )
    p.add_argument("--zones", help="consent/danger zone GeoJSON")
    p.add_argument("--age-sidecar", help="user_id,bracket CSV")
    p.add_argument("--revoke-users", help="comma-separated user ids to remove entirely")
    p.add_argument("--out", required=True, help="masked CSV output path")
    common(p)
    p.set_defaults(handler=cmd_mask)
    commands["mask"] = p

    p = sub.add_parser("evaluate", help="quantify k-anonymity of a masked CSV")
    p.add_argument("--masked", required=True, help="masked CSV from geopriv mask")
    p.add_argument("--homes", help="residential points CSV: id,lat,lon")
    p.add_argument(
        "--synthesize-homes",
        type=float,
        metavar="PERSONS_PER_POINT",
        help="synthesize homes from --population at this many persons per point",
    )
    p.add_argument("--population", help="block-group GeoJSON (for --synthesize-homes)")
    p.add_argument(
        "--coverage", type=float, default=0.95, help="buffer coverage probability (default 0.95)"
    )
    p.add_argument("--k-target", type=int, default=10, help="anonymity target k (default 10)")
    p.add_argument(
        "--epsilon",
        type=float,
        help="epsilon used to mask planar-laplace records (not stored in the CSV)",
    )
    p.add_argument("--out", required=True, help="JSON report output path")
    p.add_argument("--out-csv", help="also write the masked CSV with k/risk columns filled")
    p.add_argument("--plot", help="write a k-distribution PNG to this path")
    common(p)
    p.set_defaults(handler=cmd_evaluate)
    commands["evaluate"] = p

    p = sub.add_parser("heatmap", help="aggregate traces into a classified heat map")
    p.add_argument("--traces", required=True)
    p.add_argument("--mode", required=True, choices=["single", "multi"])
    p.add_argument("--user", help="user id (single mode)")
    p.add_argument("--k-min", type=int, help="minimum distinct users per emitted cell (multi mode)")
    p.add_argument(
        "--cell-size", type=float, default=100.0, help="grid cell size in meters (default 100)"
    )
    p.add_argument(
        "--coarsen", type=int, default=1, help="merge factor x factor blocks (default 1)"
    )
    p.add_argument("--zones", help="consent/danger zone GeoJSON")
    p.add_argument(
        "--window-days",
        type=int,
        default=14,
        help="retention window in days (default 14)",
    )
    p.add_argument(
        "--now",
        help="retention reference instant, ISO-8601 (default: newest record timestamp)",
    )
    p.add_argument("--out", required=True, help="heat-map GeoJSON output path")
    p.add_argument("--alerts", help="danger-alert CSV path (default: derived from --out)")
    common(p)
    p.set_defaults(handler=cmd_heatmap)
    commands["heatmap"] = p

    p = sub.add_parser("simulate", help="generate synthetic traces")
    p.add_argument("--population", required=True, help="block-group GeoJSON world")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--infected", type=int, default=0, help="number of infected users (prefix)")
    p.add_argument("--duration-hours", type=int, required=True)
    p.add_argument("--step-minutes", type=int, default=15)
    p.add_argument("--speed", type=float, default=1.4, help="walking speed m/s (default 1.4)")
    p.add_argument(
        "--start", default="2021-03-01T00:00:00Z", help="first record timestamp (ISO-8601)"
    )
    p.add_argument("--out", required=True, help="traces CSV output path")
    common(p)
    p.set_defaults(handler=cmd_simulate)
    commands["simulate"] = p

    p = sub.add_parser("sweep", help="privacy-utility tradeoff across a parameter grid")
    p.add_argument("--traces", required=True)
    p.add_argument("--population", required=True)
    p.add_argument(
        "--mechanism",
        default="gaussian-skew",
        choices=["gaussian-skew", "planar-laplace"],
    )
    p.add_argument(
        "--grid",
        required=True,
        help="parameter grid, e.g. c=50,100,200,400 or epsilon=0.05,0.02",
    )
    p.add_argument("--homes", help="residential points CSV: id,lat,lon")
    p.add_argument(
        "--synthesize-homes",
        type=float,
        metavar="PERSONS_PER_POINT",
        help="synthesize homes from --population",
    )
    p.add_argument("--infected", help="comma-separated infected user ids")
    p.add_argument(
        "--n-infected",
        type=int,
        default=5,
        help="number of infected users (first ids sorted; default 5)",
    )
    p.add_argument("--d-max", type=float, default=DEFAULT_D_MAX_M, help="contact distance meters")
    p.add_argument(
        "--t-window", type=int, default=DEFAULT_T_WINDOW_S, help="contact time window seconds"
    )
    p.add_argument("--k-target", type=int, default=10)
    p.add_argument("--coverage", type=float, default=0.95)
    p.add_argument("--am", type=float, default=0.0, help="age-multiplier weight in [0, 1]")
    p.add_argument("--age-sidecar", help="user_id,bracket CSV")
    p.add_argument("--out", required=True, help="sweep CSV output path")
    p.add_argument("--plot", help="write the tradeoff chart PNG to this path")
    common(p)
    p.set_defaults(handler=cmd_sweep)
    commands["sweep"] = p

    p = sub.add_parser("synthesize-homes", help="write synthesized residential points to CSV")
    p.add_argument("--population", required=True)
    p.add_argument("--persons-per-point", type=float, required=True)
    p.add_argument("--out", required=True, help="homes CSV output path")
    common(p)
    p.set_defaults(handler=cmd_synthesize_homes)
    commands["synthesize-homes"] = p

    return parser, commands


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise _fail(f"{path}:{i}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(argv: list[str], commands: dict[str, argparse.ArgumentParser]):
    """Install config values as subparser defaults so explicit flags win."""
    if "--config" not in argv:
        return
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UsageError("--config needs a path")
    raw = _read_config_file(argv[idx + 1])
    command = next((a for a in argv if a in commands), None)
    sub = commands.get(command)
    if sub is None:
        return
    typed = {}
    for action in sub._actions:
        if action.dest in raw:
            value = raw[action.dest]
            typed[action.dest] = action.type(value) if action.type else value
    sub.set_defaults(**typed)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        _apply_config(argv, commands)
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print("run 'geopriv --help' or 'geopriv <command> --help' for usage", file=sys.stderr)
        return EXIT_VALIDATION
    except GeoprivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
