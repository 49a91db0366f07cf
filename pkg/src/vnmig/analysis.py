"""Loss analysis and experiment sweeps.

The analytic redirect-loss oracle, measured-vs-analytic comparison against
recorded command execution times, and the seeded experiment sweeps:
strategy comparison across data rates, loss versus round-trip time,
migration duration versus flow-table size, and command-channel lag CDFs.
Results are plain row dicts, exportable as CSV or JSON with a full
provenance header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .controller import (CommandChannel, LagModel, MigrationOptions,
                         all_pairs_flows, migrate, simulate_baseline)
from .metrics import MigrationMetrics
from .simengine import make_rng
from .topology import (LatencyTable, ScenarioTopology, VnShape,
                       build_gateway_scenario, path_latency_ms,
                       scale_vn_latencies)

RESULT_SCHEMA = "vnmig.results.v1"


# ---------------------------------------------------------------------------
# analytic loss


@dataclass(frozen=True)
class LossEstimate:
    """Redirect loss for one bidirectional host pair when both of its
    redirect points swap atomically at independent times.

    Fractional packet counts are exact interval*rate products; the rounded
    companions floor them to whole packets for comparisons.
    """

    fwd_packets: float
    rev_packets: float
    src_done_ms: float
    dst_done_ms: float
    fwd_latency_ms: float
    rev_latency_ms: float
    fwd_rate_pps: float
    rev_rate_pps: float

    @property
    def fwd_count(self) -> int:
        return math.floor(self.fwd_packets + 1e-9)

    @property
    def rev_count(self) -> int:
        return math.floor(self.rev_packets + 1e-9)

    @property
    def total_packets(self) -> float:
        return self.fwd_packets + self.rev_packets


def analytic_loss(src_done_ms: float, dst_done_ms: float,
                  fwd_latency_ms: float, rev_latency_ms: float,
                  fwd_rate_pps: float, rev_rate_pps: float) -> LossEstimate:
    """Packets dropped when the source-side redirect lands at src_done_ms
    and the destination-side one at dst_done_ms.

    Forward direction: packets that entered the old VN too late to beat the
    destination's cutover, or that entered the new VN before the
    destination admitted it -- exactly one of the two windows is non-empty.
    The reverse direction is symmetric with its own latency and rate. With
    both latencies positive the two directions cannot both be zero, no
    matter how the execution times fall.
    """
    if fwd_latency_ms <= 0 or rev_latency_ms <= 0:
        raise ValueError("path latencies must be positive")
    if fwd_rate_pps < 0 or rev_rate_pps < 0:
        raise ValueError("rates must be >= 0")
    skew = dst_done_ms - src_done_ms
    if skew >= fwd_latency_ms:
        fwd = (skew - fwd_latency_ms) * fwd_rate_pps / 1000.0
    else:
        fwd = (-skew + fwd_latency_ms) * fwd_rate_pps / 1000.0
    if -skew >= rev_latency_ms:
        rev = (-skew - rev_latency_ms) * rev_rate_pps / 1000.0
    else:
        rev = (skew + rev_latency_ms) * rev_rate_pps / 1000.0
    return LossEstimate(fwd, rev, src_done_ms, dst_done_ms,
                        fwd_latency_ms, rev_latency_ms,
                        fwd_rate_pps, rev_rate_pps)


def pair_analytic_loss(topology: ScenarioTopology, metrics: MigrationMetrics,
                       src_host: str, dst_host: str,
                       rate_pps: float) -> LossEstimate:
    """Oracle value for one host pair, evaluated at the execution times the
    run actually recorded for the atomic per-gateway swap."""
    gw_src = topology.host_gateway(src_host)
    gw_dst = topology.host_gateway(dst_host)
    t_src = metrics.command_exec_ms(1, gw_src)
    t_dst = metrics.command_exec_ms(1, gw_dst)
    d_fwd = path_latency_ms(topology, gw_src, gw_dst, "old")
    d_rev = path_latency_ms(topology, gw_dst, gw_src, "old")
    return analytic_loss(t_src, t_dst, d_fwd, d_rev, rate_pps, rate_pps)


# ---------------------------------------------------------------------------
# statistics helpers


def mean_ci95(values) -> tuple[float, float, float]:
    """Sample mean with a normal-approximation 95% interval."""
    vals = list(values)
    n = len(vals)
    mean = sum(vals) / n
    if n < 2:
        return mean, mean, mean
    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
    half = 1.96 * math.sqrt(var / n)
    return mean, mean - half, mean + half


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# experiment sweeps


def _run_options(seed, flows, **kw) -> MigrationOptions:
    return MigrationOptions(flows=flows, seed=seed, **kw)


def compare_strategies(scenario: ScenarioTopology, rates, repetitions: int,
                       base_seed=0, *, migrate_at_s: float = 0.5,
                       flow_duration_s: float = 1.5,
                       channel: CommandChannel | None = None) -> list[dict]:
    """Loss comparison across data rates: no migration at all, simultaneous
    redirect commands, and the loss-free three-phase ordering.

    Returns one row per (rate, experiment, direction) with the mean loss
    percentage and its 95% interval across repetitions.
    """
    channel = channel or CommandChannel.of_default()
    rows: list[dict] = []
    for rate in rates:
        per_flow: dict[tuple[str, str], dict[str, list[float]]] = {}
        for rep in range(repetitions):
            seed = f"{base_seed}:rate{rate}:rep{rep}"
            flows = all_pairs_flows(scenario, rate, 0.0, flow_duration_s)
            runs = {
                "baseline": simulate_baseline(
                    scenario, _run_options(seed, flows)),
                "symmetric": migrate(
                    scenario, "gateway", channel,
                    _run_options(seed, flows, migrate_at_s=migrate_at_s,
                                 ordering="simultaneous")),
                "asymmetric": migrate(
                    scenario, "gateway", channel,
                    _run_options(seed, flows, migrate_at_s=migrate_at_s,
                                 ordering="algorithm1")),
            }
            for kind, metrics in runs.items():
                for f in metrics.flows:
                    bucket = per_flow.setdefault((f.src, f.dst), {})
                    bucket.setdefault(kind, []).append(f.loss_pct)
        for (src, dst), buckets in sorted(per_flow.items()):
            for kind in ("baseline", "symmetric", "asymmetric"):
                mean, lo, hi = mean_ci95(buckets[kind])
                rows.append({
                    "rate_pps": rate, "experiment": kind,
                    "src": src, "dst": dst,
                    "mean_loss_pct": mean, "ci95_lo": lo, "ci95_hi": hi,
                    "repetitions": repetitions,
                })
    return rows


def make_rtt_template(host_count: int, vn_shape: VnShape,
                      latencies: LatencyTable | None = None,
                      base_seed=0, cross_aggregate: bool = False):
    """Returns scenario_fn(rtt_ms, seed) with the largest gateway-to-gateway
    one-way latency pinned to rtt/2."""
    latencies = latencies or LatencyTable()

    def scenario_fn(rtt_ms: float, seed) -> ScenarioTopology:
        base = build_gateway_scenario(host_count, vn_shape, latencies,
                                      seed=seed if isinstance(seed, int) else base_seed)
        return scale_vn_latencies(base, rtt_ms / 2.0)

    return scenario_fn


def sweep_rtt(scenario_fn, rtt_values, strategies=("algorithm1", "simultaneous"),
              seeds=range(30), *, rate_pps: float = 200.0,
              migrate_at_s: float = 0.5, flow_duration_s: float = 1.5,
              channel: CommandChannel | None = None) -> list[dict]:
    """Loss versus round-trip time, per redirect ordering.

    One-way gateway-to-gateway latency is rtt/2 in each direction. The
    default channel is a low-jitter switch-message channel so command-time
    skew stays small against the path latencies under study; pass a channel
    to override. For simultaneous runs each row also carries the analytic
    prediction evaluated at the recorded execution times.
    """
    channel = channel or CommandChannel.of_low_jitter()
    rows: list[dict] = []
    for rtt in rtt_values:
        if rtt <= 0:
            raise ValueError("rtt values must be positive")
        for ordering in strategies:
            for seed_idx in seeds:
                seed = f"rtt{rtt}:{ordering}:seed{seed_idx}"
                scenario = scenario_fn(rtt, seed_idx)
                flows = all_pairs_flows(scenario, rate_pps, 0.0, flow_duration_s)
                metrics = migrate(scenario, "gateway", channel,
                                  _run_options(seed, flows,
                                               migrate_at_s=migrate_at_s,
                                               ordering=ordering))
                analytic_total = None
                per_direction = []
                if ordering == "simultaneous":
                    analytic_total = 0.0
                    for f in metrics.flows:
                        est = pair_analytic_loss(scenario, metrics, f.src,
                                                 f.dst, f.rate_pps)
                        analytic_total += est.fwd_packets
                        per_direction.append(
                            (f.flow_id, f.lost, est.fwd_packets))
                rows.append({
                    "rtt_ms": rtt, "ordering": ordering, "seed": seed_idx,
                    "lost_packets": metrics.total_lost(),
                    "sent_packets": metrics.total_sent(),
                    "loss_pct": (100.0 * metrics.total_lost() / metrics.total_sent())
                    if metrics.total_sent() else 0.0,
                    "analytic_lost_packets": analytic_total,
                    "per_direction": per_direction,
                })
    return rows


def summarize_rtt_sweep(rows) -> dict:
    """Mean loss per (rtt, ordering) plus the simultaneous-loss line fit."""
    by_key: dict[tuple[float, str], list[int]] = {}
    for row in rows:
        by_key.setdefault((row["rtt_ms"], row["ordering"]), []).append(row["lost_packets"])
    means = {key: sum(v) / len(v) for key, v in by_key.items()}
    sym = sorted((rtt, mean) for (rtt, ordering), mean in means.items()
                 if ordering == "simultaneous")
    fit = linear_fit([r for r, _ in sym], [m for _, m in sym]) if len(sym) >= 2 else None
    return {"means": means, "simultaneous_fit": fit}


def default_duration_scenario(seed=0) -> ScenarioTopology:
    """Two hosts behind a single-switch VN: the smallest instance that
    isolates per-rule install cost in the duration measurement."""
    return build_gateway_scenario(2, VnShape.single(), LatencyTable(), seed=seed)


# deterministic default for duration sweeps; uniform jitter would leak into
# the affine fit at small table sizes
_CONSTANT_10MS = LagModel.constant(10.0)


def sweep_table_size(sizes, per_rule_cost_ms: float = 0.7, seeds=range(3),
                     scenario: ScenarioTopology | None = None,
                     channel: CommandChannel | None = None,
                     clone_channel: CommandChannel | None = None,
                     drain_delay_ms: float | None = None) -> list[dict]:
    """Migration duration versus synthetic flow-table size per switch.

    Defaults isolate the per-rule install cost: a deterministic (constant
    lag) command channel and the minimal two-host scenario, so duration
    grows affinely with table size. Zero traffic — this measures the
    control plane.
    """
    scenario = scenario or default_duration_scenario()
    channel = channel or CommandChannel("of-message", _CONSTANT_10MS)
    clone_channel = clone_channel or CommandChannel.ideal()
    rows: list[dict] = []
    for size in sizes:
        if size <= 0:
            raise ValueError("table sizes must be positive")
        durations = []
        for seed_idx in seeds:
            metrics = migrate(
                scenario, "gateway", channel,
                MigrationOptions(flows=(), migrate_at_s=0.1,
                                 per_rule_cost_ms=per_rule_cost_ms,
                                 prepopulate_rules=size,
                                 clone_channel=clone_channel,
                                 drain_delay_ms=drain_delay_ms,
                                 seed=f"size{size}:seed{seed_idx}"))
            durations.append(metrics.duration_ms)
        mean, lo, hi = mean_ci95(durations)
        rows.append({
            "rules_per_switch": size,
            "mean_duration_ms": mean, "ci95_lo": lo, "ci95_hi": hi,
            "per_rule_cost_ms": per_rule_cost_ms,
            "switch_count": len(scenario.old_vn.switches),
        })
    return rows


@dataclass(frozen=True)
class LagCdf:
    channel_kind: str
    samples_ms: tuple[float, ...]  # sorted

    def quantile(self, q: float) -> float:
        if not 0 <= q <= 1:
            raise ValueError("quantile must be in [0, 1]")
        idx = min(len(self.samples_ms) - 1, max(0, math.ceil(q * len(self.samples_ms)) - 1))
        return self.samples_ms[idx]

    @property
    def median_ms(self) -> float:
        return self.quantile(0.5)

    @property
    def max_ms(self) -> float:
        return self.samples_ms[-1]


def channel_lag_cdf(channel: CommandChannel, samples: int, seed=0) -> LagCdf:
    """Empirical CDF of command issue-to-execution lag."""
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = make_rng(seed, f"lag-cdf/{channel.kind}")
    draws = sorted(channel.sample_lag_ms(rng) for _ in range(samples))
    return LagCdf(channel.kind, tuple(draws))


# ---------------------------------------------------------------------------
# emission


def _provenance(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def write_csv(path, rows, config: dict, columns=None) -> None:
    """CSV with provenance comment lines; column order is fixed by the
    caller or by the first row's key order."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        fh.write(f"# {RESULT_SCHEMA}\n")
        fh.write(f"# config={_provenance(config)}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_json(path, rows, config: dict) -> None:
    payload = {"schema": RESULT_SCHEMA, "config": config, "rows": list(rows)}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
