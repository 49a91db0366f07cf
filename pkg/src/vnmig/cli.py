"""Command-line front end.

Subcommands: run (single migration, repeated over seeds), sweep (rtt |
table-size | rate), validate (scenario diagnostics), lag-cdf (channel lag
samples). Scenario files are human-editable key/value text with mandatory
unit suffixes; results are CSV or JSON with a provenance header, and every
diagnostic goes to stderr as a one-line JSON record so results never mix
with errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

from . import analysis
from .controller import (ORDERINGS, STRATEGIES, CommandChannel,
                         MigrationAborted, MigrationOptions, all_pairs_flows,
                         migrate)
from .topology import (LatencyTable, ScenarioTopology, VnShape,
                       build_cross_aggregate_scenario, build_gateway_scenario,
                       scale_vn_latencies, validate)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3

CHANNELS = ("ssh", "of-message")
FORMATS = ("csv", "json")
VARIANTS = ("same-aggregate", "cross-aggregate")
SWEEP_AXES = ("rtt", "table-size", "rate")

RUN_COLUMNS = ["rep", "seed", "strategy", "ordering", "channel", "flow_id",
               "src", "dst", "rate_pps", "sent", "received", "lost",
               "loss_pct", "duplicates", "max_gap_ms", "duration_ms"]


class ConfigError(ValueError):
    def __init__(self, detail: str, keys=()):
        super().__init__(detail)
        self.detail = detail
        self.keys = list(keys)


def _fail(kind: str, detail: str, keys=()) -> None:
    record = {"error": kind, "detail": detail}
    if keys:
        record["keys"] = sorted(keys)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


# ---------------------------------------------------------------------------
# scenario files


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    variant: str
    hosts: int
    vn_shape: VnShape
    latencies: LatencyTable
    capacity_pps: float
    seed: int

    def build(self, seed: int | None = None) -> ScenarioTopology:
        builder = build_cross_aggregate_scenario if self.variant == "cross-aggregate" \
            else build_gateway_scenario
        return builder(self.hosts, self.vn_shape, self.latencies,
                       seed=self.seed if seed is None else seed,
                       capacity_pps=self.capacity_pps)

    def as_dict(self) -> dict:
        return {
            "name": self.name, "variant": self.variant, "hosts": self.hosts,
            "vn_shape": _shape_to_text(self.vn_shape),
            "latency.host_gateway_ms": self.latencies.host_gateway_ms,
            "latency.vlan_attach_ms": self.latencies.vlan_attach_ms,
            "latency.vn_link_ms": self.latencies.vn_link_ms,
            "latency.stitched_ms": self.latencies.stitched_ms,
            "capacity_pps": self.capacity_pps, "seed": self.seed,
        }


def _shape_to_text(shape: VnShape) -> str:
    if not shape.links:
        return ", ".join(shape.switches)
    return ", ".join(f"{a}-{b}" for a, b in shape.links)


def parse_vn_shape(text: str) -> VnShape:
    switches: list[str] = []
    links: list[tuple[str, str]] = []

    def add(name: str) -> None:
        if name not in switches:
            switches.append(name)

    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token:
            a, _, b = token.partition("-")
            a, b = a.strip(), b.strip()
            if not a or not b:
                raise ConfigError(f"malformed vn_shape edge {token!r}")
            add(a)
            add(b)
            links.append((a, b))
        else:
            add(token)
    if not switches:
        raise ConfigError("vn_shape is empty")
    return VnShape(tuple(switches), tuple(links))


def _parse_quantity(key: str, raw: str, unit: str) -> float:
    parts = raw.split()
    if len(parts) != 2 or parts[1] != unit:
        raise ConfigError(f"{key} must carry the unit {unit!r}, got {raw!r}", [key])
    try:
        return float(parts[0])
    except ValueError:
        raise ConfigError(f"{key} has a non-numeric value {parts[0]!r}", [key])


KNOWN_KEYS = {"name", "variant", "hosts", "vn_shape", "capacity", "seed",
              "latency.host_gateway", "latency.vlan_attach",
              "latency.vn_link", "latency.stitched"}


def parse_scenario_text(text: str) -> ScenarioSpec:
    values: dict[str, str] = {}
    unknown: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS and not key.startswith("latency.vn_link."):
            unknown.append(key)
            continue
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", [key])
        values[key] = value
    if unknown:
        raise ConfigError("unknown scenario keys: " + ", ".join(sorted(unknown)),
                          unknown)

    missing = [k for k in ("hosts", "vn_shape") if k not in values]
    if missing:
        raise ConfigError("missing required scenario keys: " + ", ".join(missing),
                          missing)

    variant = values.get("variant", "same-aggregate")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}",
                          ["variant"])
    try:
        hosts = int(values["hosts"])
    except ValueError:
        raise ConfigError(f"hosts must be an integer, got {values['hosts']!r}",
                          ["hosts"])
    shape = parse_vn_shape(values["vn_shape"])

    overrides = []
    for key, raw in values.items():
        if key.startswith("latency.vn_link."):
            edge = key[len("latency.vn_link."):]
            a, _, b = edge.partition("-")
            if not a or not b:
                raise ConfigError(f"malformed link override key {key!r}", [key])
            overrides.append(((a, b), _parse_quantity(key, raw, "ms")))

    latencies = LatencyTable(
        host_gateway_ms=_parse_quantity("latency.host_gateway",
                                        values.get("latency.host_gateway", "1 ms"), "ms"),
        vlan_attach_ms=_parse_quantity("latency.vlan_attach",
                                       values.get("latency.vlan_attach", "1 ms"), "ms"),
        vn_link_ms=_parse_quantity("latency.vn_link",
                                   values.get("latency.vn_link", "5 ms"), "ms"),
        stitched_ms=_parse_quantity("latency.stitched",
                                    values.get("latency.stitched", "2 ms"), "ms"),
        vn_link_overrides=tuple(overrides),
    )
    capacity = _parse_quantity("capacity", values.get("capacity", "1000000 pkt/s"),
                               "pkt/s")
    try:
        seed = int(values.get("seed", "0"))
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {values['seed']!r}", ["seed"])
    return ScenarioSpec(values.get("name", "unnamed"), variant, hosts, shape,
                        latencies, capacity, seed)


def load_scenario(path: str) -> ScenarioSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path!r}: {exc.strerror}")
    return parse_scenario_text(text)


# ---------------------------------------------------------------------------
# run config


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration for the run subcommand; every
    enumeration is checked before any simulation starts."""

    scenario_path: str
    strategy: str = "gateway"
    ordering: str = "algorithm1"
    channel: str = "of-message"
    seed: int = 0
    repetitions: int = 1
    rate_pps: float = 200.0
    migrate_at_s: float = 0.5
    flow_duration_s: float = 1.5
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        problems = []
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.ordering not in ORDERINGS:
            problems.append(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if self.channel not in CHANNELS:
            problems.append(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if self.fmt not in FORMATS:
            problems.append(f"format must be one of {FORMATS}, got {self.fmt!r}")
        if self.repetitions < 1:
            problems.append("reps must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario_path, "strategy": self.strategy,
            "ordering": self.ordering, "channel": self.channel,
            "seed": self.seed, "repetitions": self.repetitions,
            "rate_pps": self.rate_pps, "migrate_at_s": self.migrate_at_s,
            "flow_duration_s": self.flow_duration_s, "format": self.fmt,
        }


def _emit(rows, config: dict, fmt: str, out: str | None, columns=None) -> None:
    if out is None:
        if fmt == "json":
            payload = {"schema": analysis.RESULT_SCHEMA, "config": config,
                       "rows": list(rows)}
            json.dump(payload, sys.stdout, sort_keys=True, indent=2)
            sys.stdout.write("\n")
        else:
            import io

            buf = io.StringIO()
            _write_csv_to(buf, rows, config, columns)
            sys.stdout.write(buf.getvalue())
        return
    if fmt == "json":
        analysis.write_json(out, rows, config)
    else:
        analysis.write_csv(out, rows, config, columns)


def _write_csv_to(fh, rows, config, columns) -> None:
    import csv as _csv

    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    fh.write(f"# {analysis.RESULT_SCHEMA}\n")
    fh.write("# config=" + json.dumps(config, sort_keys=True,
                                      separators=(",", ":")) + "\n")
    writer = _csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    spec = load_scenario(args.scenario)
    topo = spec.build()
    diags = validate(topo)
    for d in diags:
        print(d)
    if diags:
        _fail("validation", f"{len(diags)} diagnostic(s)")
        return EXIT_CONFIG
    print(f"scenario {spec.name!r}: ok "
          f"({len(topo.hosts)} hosts, {len(topo.old_vn.switches)} switches per VN)")
    return EXIT_OK


def cmd_run(args) -> int:
    config = RunConfig(
        scenario_path=args.scenario, strategy=args.strategy,
        ordering=args.ordering, channel=args.channel, seed=args.seed,
        repetitions=args.reps, rate_pps=args.rate,
        migrate_at_s=args.migrate_at, flow_duration_s=args.flow_duration,
        out=args.out, fmt=args.format)
    spec = load_scenario(config.scenario_path)
    scenario = spec.build()
    diags = validate(scenario)
    if diags:
        raise ConfigError("scenario failed validation: " + "; ".join(diags))

    provenance = {"command": "run", **config.as_dict(),
                  "scenario_spec": spec.as_dict()}
    rows = []
    runs = []
    for rep in range(config.repetitions):
        seed = f"{config.seed}:rep{rep}"
        flows = all_pairs_flows(scenario, config.rate_pps, 0.0,
                                config.flow_duration_s)
        options = MigrationOptions(flows=flows, seed=seed,
                                   migrate_at_s=config.migrate_at_s,
                                   ordering=config.ordering)
        metrics = migrate(scenario, config.strategy,
                          CommandChannel.named(config.channel), options)
        runs.append(metrics.as_dict())
        for f in metrics.flows:
            rows.append({
                "rep": rep, "seed": seed, "strategy": metrics.strategy,
                "ordering": metrics.ordering, "channel": metrics.channel_kind,
                "flow_id": f.flow_id, "src": f.src, "dst": f.dst,
                "rate_pps": f.rate_pps, "sent": f.sent,
                "received": f.received, "lost": f.lost,
                "loss_pct": f.loss_pct, "duplicates": f.duplicates,
                "max_gap_ms": f.max_gap_ms, "duration_ms": metrics.duration_ms,
            })
    if config.fmt == "json":
        _emit(runs, provenance, "json", config.out)
    else:
        _emit(rows, provenance, "csv", config.out, RUN_COLUMNS)
    return EXIT_OK


def _parse_values(raw: str, axis: str) -> list[float]:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        values.append(float(token))
    if not values:
        raise ConfigError("sweep needs a non-empty --values list", ["values"])
    if any(v <= 0 for v in values):
        raise ConfigError(f"{axis} sweep values must be positive", ["values"])
    return values


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {args.axis!r}",
                          ["axis"])
    if args.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}", ["format"])
    values = _parse_values(args.values, args.axis)
    spec = load_scenario(args.scenario)
    scenario = spec.build()
    diags = validate(scenario)
    if diags:
        raise ConfigError("scenario failed validation: " + "; ".join(diags))

    provenance = {"command": "sweep", "axis": args.axis, "values": values,
                  "seed": args.seed, "repetitions": args.reps,
                  "scenario_spec": spec.as_dict()}

    if args.axis == "rtt":
        def scenario_fn(rtt_ms, seed_idx):
            return scale_vn_latencies(spec.build(), rtt_ms / 2.0)

        rows = analysis.sweep_rtt(scenario_fn, values,
                                  seeds=range(args.reps))
        for row in rows:
            row.pop("per_direction", None)
        columns = ["rtt_ms", "ordering", "seed", "lost_packets",
                   "sent_packets", "loss_pct", "analytic_lost_packets"]
    elif args.axis == "table-size":
        rows = analysis.sweep_table_size([int(v) for v in values],
                                         seeds=range(args.reps),
                                         scenario=scenario)
        columns = ["rules_per_switch", "mean_duration_ms", "ci95_lo",
                   "ci95_hi", "per_rule_cost_ms", "switch_count"]
    else:
        rows = analysis.compare_strategies(scenario, values, args.reps,
                                           base_seed=args.seed)
        columns = ["rate_pps", "experiment", "src", "dst", "mean_loss_pct",
                   "ci95_lo", "ci95_hi", "repetitions"]

    rows = sorted(rows, key=lambda r: tuple(str(r.get(c)) for c in columns))
    _emit(rows, provenance, args.format, args.out, columns)
    return EXIT_OK


def cmd_lag_cdf(args) -> int:
    if args.channel not in CHANNELS:
        raise ConfigError(f"channel must be one of {CHANNELS}", ["channel"])
    if args.samples < 1:
        raise ConfigError("samples must be >= 1", ["samples"])
    channel = CommandChannel.named(args.channel)
    cdf = analysis.channel_lag_cdf(channel, args.samples, seed=args.seed)
    provenance = {"command": "lag-cdf", "channel": args.channel,
                  "samples": args.samples, "seed": args.seed}
    rows = [{"index": i, "lag_ms": v} for i, v in enumerate(cdf.samples_ms)]
    _emit(rows, provenance, args.format, args.out, ["index", "lag_ms"])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vnmig",
        description="Deterministic live virtual-network migration simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one migration configuration, repeated over seeds")
    run.add_argument("--scenario", required=True)
    run.add_argument("--strategy", default="gateway")
    run.add_argument("--ordering", default="algorithm1")
    run.add_argument("--channel", default="of-message")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--reps", type=int, default=1)
    run.add_argument("--rate", type=float, default=200.0,
                     help="per-flow packet rate (pkt/s)")
    run.add_argument("--migrate-at", type=float, default=0.5,
                     help="migration start time (s)")
    run.add_argument("--flow-duration", type=float, default=1.5,
                     help="per-flow duration (s)")
    run.add_argument("--out", default=None)
    run.add_argument("--format", default="csv")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="rtt, table-size or rate sweep")
    sweep.add_argument("--scenario", required=True)
    sweep.add_argument("--axis", required=True)
    sweep.add_argument("--values", required=True,
                       help="comma-separated sweep values")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--reps", type=int, default=5)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--format", default="csv")
    sweep.set_defaults(fn=cmd_sweep)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", required=True)
    val.set_defaults(fn=cmd_validate)

    cdf = sub.add_parser("lag-cdf", help="sample a command channel's lag distribution")
    cdf.add_argument("--channel", required=True)
    cdf.add_argument("--samples", type=int, default=50)
    cdf.add_argument("--seed", type=int, default=0)
    cdf.add_argument("--out", default=None)
    cdf.add_argument("--format", default="csv")
    cdf.set_defaults(fn=cmd_lag_cdf)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _fail("config", exc.detail, exc.keys)
        return EXIT_CONFIG
    except MigrationAborted as exc:
        _fail("migration-aborted", str(exc))
        return EXIT_ABORTED
    except ValueError as exc:
        _fail("config", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
