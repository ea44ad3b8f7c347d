"""Command-line front end: runs, sweeps, topology analytics, TLE generation.

Every run writes a self-describing output directory (summary.csv,
series.csv, config.yaml); re-running with the persisted config and seed
reproduces the directory byte for byte. Exit codes: 0 success, 1 runtime
failure, 2 usage or validation error.
"""
import argparse
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import yaml

from . import metrics, simcore, topology
from .constellation import (
    ConstellationParams,
    Scenario,
    ScenarioError,
    generate_walker_star,
    scenario_from_dict,
    write_tle_file,
)
from .routing import EARLY_DISCARDING, PORT_FORWARDING, ROUTING_STRATEGIES
from .simcore import ConfigError, SimConfig
from .topology import LINE_OF_SIGHT, MIN_DISTANCE

SEED_ENV_VAR = "ORBITNET_SEED"
DEFAULT_STRESS_FACTOR = 1.5

_FORWARDING_ALIASES = {"port": PORT_FORWARDING, "early": EARLY_DISCARDING,
                       PORT_FORWARDING: PORT_FORWARDING,
                       EARLY_DISCARDING: EARLY_DISCARDING}
_BUILDER_ALIASES = {"mindist": MIN_DISTANCE, "los": LINE_OF_SIGHT,
                    MIN_DISTANCE: MIN_DISTANCE, LINE_OF_SIGHT: LINE_OF_SIGHT}

_SIM_KEYS = {
    "duration", "snapshot_interval", "weight_refresh_interval", "total_volume",
    "link_rate_fraction", "link_rate_bps", "trip_delay", "link_switch_delay",
    "forwarding", "routing", "traffic_strategy", "topology_builder", "seed",
    "packet_size", "k_disjoint", "ema_periods", "max_queuing_delay",
    "stress", "stress_factor",
}


class UsageError(Exception):
    pass


def default_scenario_dict() -> dict:
    text = (resources.files("orbitnet") / "data" / "default_scenario.yaml").read_text()
    return yaml.safe_load(text)


def _load_config_file(path: str | None) -> tuple[dict, dict, Path | None]:
    """Returns (scenario mapping, sim mapping, base dir)."""
    if path is None:
        return default_scenario_dict(), {}, None
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {p}")
    except yaml.YAMLError as exc:
        raise UsageError(f"{p}: not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise UsageError(f"{p}: top level must be a mapping")
    unknown = sorted(set(raw) - {"scenario", "sim"})
    if unknown:
        raise UsageError(f"{p}: unknown top-level keys {unknown} "
                         f"(expected 'scenario' and 'sim')")
    scen = raw.get("scenario", default_scenario_dict())
    if isinstance(scen, str):
        scen_path = Path(scen)
        if not scen_path.is_absolute():
            scen_path = p.parent / scen_path
        scen = yaml.safe_load(scen_path.read_text())
    sim = raw.get("sim", {})
    if not isinstance(sim, dict):
        raise UsageError(f"{p}: 'sim' must be a mapping")
    unknown = sorted(set(sim) - _SIM_KEYS)
    if unknown:
        raise UsageError(f"{p}: sim: unknown keys {unknown}")
    return scen, sim, p.parent


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer")
    return 0


def build_config(args) -> tuple[SimConfig, dict]:
    """Assemble the resolved SimConfig plus the persistable mapping."""
    scen_dict, sim, base_dir = _load_config_file(getattr(args, "config", None))

    overrides = {
        "duration": getattr(args, "duration", None),
        "total_volume": getattr(args, "volume", None),
        "weight_refresh_interval": getattr(args, "refresh", None),
        "routing": getattr(args, "routing", None),
        "traffic_strategy": getattr(args, "traffic", None),
    }
    fwd = getattr(args, "forwarding", None)
    if fwd is not None:
        overrides["forwarding"] = _FORWARDING_ALIASES[fwd]
    builder = getattr(args, "builder", None)
    if builder is not None:
        overrides["topology_builder"] = _BUILDER_ALIASES[builder]
    for key, value in overrides.items():
        if value is not None:
            sim[key] = value
    sim["seed"] = _resolve_seed(args)
    if getattr(args, "stress", False):
        sim["stress"] = True

    stress = bool(sim.pop("stress", False))
    factor = float(sim.pop("stress_factor", DEFAULT_STRESS_FACTOR))
    if stress:
        base_volume = float(sim.get("total_volume", 3e8))
        fraction = float(sim.get("link_rate_fraction", 0.14))
        if sim.get("link_rate_bps") is None:
            sim["link_rate_bps"] = fraction * base_volume
        sim["total_volume"] = base_volume * factor

    scenario = scenario_from_dict(scen_dict, base_dir=base_dir)
    sim.setdefault("duration", 60.0)
    config = SimConfig(scenario=scenario, **sim)
    persist = {"scenario": scen_dict, "sim": dict(sorted(sim.items()))}
    return config, persist


def _write_run_outputs(out_dir: Path, report: metrics.MetricsReport,
                       config: SimConfig, persist: dict):
    """Populate the run directory atomically (temp dir + rename)."""
    if out_dir.exists():
        raise UsageError(f"output directory already exists: {out_dir}")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out_dir.parent, prefix=".orbitnet-tmp-"))
    try:
        with open(tmp / "summary.csv", "w") as fh:
            metrics.emit(report, "summary_csv", fh, config=config)
        with open(tmp / "series.csv", "w") as fh:
            metrics.emit(report, "series_csv", fh)
        with open(tmp / "config.yaml", "w") as fh:
            yaml.safe_dump(persist, fh, sort_keys=True, default_flow_style=False)
        os.rename(tmp, out_dir)
    except BaseException:
        import shutil
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def cmd_run(args) -> int:
    config, persist = build_config(args)
    report = simcore.run(config)
    _write_run_outputs(Path(args.out), report, config, persist)
    metrics.emit(report, "console_table", sys.stdout)
    print(f"outputs written to {args.out}")
    return 0


_SWEEP_DEFAULTS = {
    "volume": [i * 1e8 for i in range(1, 11)],
    "refresh": [1.0, 30.0, 60.0],
    "strategy": list(ROUTING_STRATEGIES),
}


def cmd_sweep(args) -> int:
    if args.values is not None:
        values = [v for v in (s.strip() for s in args.values.split(",")) if v]
        if args.axis in ("volume", "refresh"):
            values = [float(v) for v in values]
        if not values:
            raise UsageError("empty sweep value list")
    else:
        values = _SWEEP_DEFAULTS[args.axis]

    # The refresh axis crosses both forwarding schemes (Table-style rows).
    runs: list[dict] = []
    for value in values:
        if args.axis == "volume":
            runs.append({"volume": value})
        elif args.axis == "refresh":
            for fwd in (PORT_FORWARDING, EARLY_DISCARDING):
                runs.append({"refresh": value, "forwarding": fwd})
        else:
            if value not in ROUTING_STRATEGIES:
                raise UsageError(f"unknown routing strategy {value!r}")
            runs.append({"routing": value})

    out_root = Path(args.out)
    if out_root.exists():
        raise UsageError(f"output directory already exists: {out_root}")
    out_root.mkdir(parents=True)
    master_seed = _resolve_seed(args)

    rows = []
    failures = 0
    for idx, spec in enumerate(runs):
        run_args = argparse.Namespace(**vars(args))
        for key, val in spec.items():
            setattr(run_args, key, val)
        run_args.seed = master_seed + idx
        label = ";".join(f"{k}={v}" for k, v in spec.items())
        try:
            config, persist = build_config(run_args)
            report = simcore.run(config)
            _write_run_outputs(out_root / f"run_{idx:03d}", report, config, persist)
            row = metrics.summary_row(report, config)
            row["run"] = f"run_{idx:03d}"
            row["axis_value"] = label
            row["seed"] = run_args.seed
            row["status"] = "ok"
        except Exception as exc:
            failures += 1
            row = {"run": f"run_{idx:03d}", "axis_value": label,
                   "seed": master_seed + idx, "status": f"failed: {exc}"}
        rows.append(row)

    import csv as _csv
    columns = ["run", "axis_value", "seed", "status", *metrics.SUMMARY_COLUMNS]
    with open(out_root / "sweep_summary.csv", "w") as fh:
        writer = _csv.DictWriter(fh, fieldnames=columns, lineterminator="\n",
                                 restval="")
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows) - failures}/{len(rows)} runs succeeded; "
          f"combined summary in {out_root / 'sweep_summary.csv'}")
    return 1 if failures else 0


def cmd_topo_analyze(args) -> int:
    config, _ = build_config(args)
    scenario = config.scenario
    duration = args.duration if args.duration is not None else 3600.0
    interval = config.snapshot_interval
    steps = max(1, math.ceil(duration / interval))
    builders = ([MIN_DISTANCE, LINE_OF_SIGHT] if args.builder is None
                else [_BUILDER_ALIASES[args.builder]])

    out_root = Path(args.out)
    if out_root.exists():
        raise UsageError(f"output directory already exists: {out_root}")
    out_root.mkdir(parents=True)

    gs_ids = sorted(scenario.city_to_gs.values())
    gs_of_city = scenario.city_to_gs
    cities = sorted(c.id for c in scenario.cities)

    link_rows = []
    interval_rows = []
    pair_sums: dict[tuple[str, str, str], list] = {}
    summaries = {}
    for builder in builders:
        prev = None
        reports: list[list] = [[], []]  # avg length, change count
        run_len = 0
        intervals: list[int] = []
        for step in range(steps):
            t = step * interval
            pos = topology.satellite_positions(scenario, t)
            if builder == MIN_DISTANCE:
                snap = topology.build_min_distance(scenario, t, pos)
            else:
                snap = topology.build_los(prev, scenario, t, pos)
            avg = (sum(l.length for l in snap.links.values()) / len(snap.links)
                   if snap.links else 0.0)
            change = 0 if prev is None else topology.diff_snapshots(prev, snap)
            reports[0].append(avg)
            reports[1].append(change)
            link_rows.append((t, builder, avg, change))
            if prev is None or change == 0:
                run_len += 1
            else:
                intervals.append(run_len)
                run_len = 1
            for city in cities:
                src_gs = gs_of_city[city]
                dist = topology.shortest_path_lengths(snap, src_gs)
                for other in cities:
                    if other == city:
                        continue
                    d = dist.get(gs_of_city[other])
                    if d is None:
                        continue
                    acc = pair_sums.setdefault((builder, city, other), [0.0, 0])
                    acc[0] += d
                    acc[1] += 1
            prev = snap
        intervals.append(run_len)
        for i, length in enumerate(intervals):
            interval_rows.append((builder, i, length))
        mean_len = sum(reports[0]) / len(reports[0])
        zero_frac = sum(1 for c in reports[1] if c == 0) / len(reports[1])
        summaries[builder] = {
            "mean_avg_link_length_km": mean_len,
            "zero_change_snapshot_fraction": zero_frac,
            "mean_stability_interval": sum(intervals) / len(intervals),
        }

    with open(out_root / "link_series.csv", "w") as fh:
        fh.write("t,builder,average_link_length_km,link_change_count\n")
        for t, b, avg, chg in link_rows:
            fh.write(f"{metrics.fmt(t)},{b},{metrics.fmt(avg)},{chg}\n")
    with open(out_root / "stability_intervals.csv", "w") as fh:
        fh.write("builder,interval_index,length_snapshots\n")
        for b, i, length in interval_rows:
            fh.write(f"{b},{i},{length}\n")
    with open(out_root / "pair_distances.csv", "w") as fh:
        fh.write("builder,src_city,dst_city,mean_distance_km\n")
        for (b, s, d), (total, count) in sorted(pair_sums.items()):
            fh.write(f"{b},{s},{d},{metrics.fmt(total / count)}\n")

    for builder, summary in summaries.items():
        print(f"[{builder}]")
        for key, val in summary.items():
            print(f"  {key}: {val:.4f}")
    print(f"analytics written to {out_root}")
    return 0


def cmd_gen_constellation(args) -> int:
    params = ConstellationParams(
        num_planes=args.planes,
        sats_per_plane=args.sats_per_plane,
        inclination=math.radians(args.inclination_deg),
        altitude=args.altitude_km,
        phase_factor=args.phase_factor,
        raan_spread=math.radians(args.raan_spread_deg),
    )
    elements = generate_walker_star(params, epoch=args.epoch)
    write_tle_file(elements, args.out)
    print(f"wrote {len(elements)} TLE records to {args.out}")
    return 0


def _add_common_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config file (scenario + sim sections)")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (falls back to ${SEED_ENV_VAR}, then 0)")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds")
    p.add_argument("--volume", type=float, default=None, help="total traffic, bit/s")
    p.add_argument("--refresh", type=float, default=None,
                   help="weight refresh interval, s")
    p.add_argument("--forwarding", choices=["port", "early"], default=None)
    p.add_argument("--routing", choices=list(ROUTING_STRATEGIES), default=None)
    p.add_argument("--traffic", choices=["linear", "exponential"], default=None)
    p.add_argument("--builder", choices=["mindist", "los"], default=None)
    p.add_argument("--stress", action="store_true",
                   help="stress preset: volume x1.5 at base-provisioned link rate")
    p.add_argument("--out", required=True, help="output directory (must not exist)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitnet",
        description="Source-routed SDN LEO network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one simulation run")
    _add_common_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="parameter sweep of runs")
    _add_common_run_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=["volume", "refresh", "strategy"],
                         required=True)
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated axis values (defaults per axis)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_topo = sub.add_parser("topo-analyze", help="topology stability analytics")
    _add_common_run_flags(p_topo)
    p_topo.set_defaults(func=cmd_topo_analyze)

    p_gen = sub.add_parser("gen-constellation", help="write a TLE file")
    p_gen.add_argument("--planes", type=int, default=6)
    p_gen.add_argument("--sats-per-plane", type=int, default=11)
    p_gen.add_argument("--inclination-deg", type=float, default=86.4)
    p_gen.add_argument("--altitude-km", type=float, default=781.0)
    p_gen.add_argument("--phase-factor", type=int, default=0)
    p_gen.add_argument("--raan-spread-deg", type=float, default=180.0)
    p_gen.add_argument("--epoch", type=float, default=0.0)
    p_gen.add_argument("--out", required=True, help="output TLE path")
    p_gen.set_defaults(func=cmd_gen_constellation)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
