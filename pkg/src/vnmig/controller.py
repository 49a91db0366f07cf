"""Migration controller.

Flow-table polling, translation and cloning; construction and execution of
the three-phase traffic-redirection schedule over modeled command channels;
the presenter layer that keeps the client application's view of the network
stable across the move; and the end-to-end ``migrate`` orchestration for
both the gateway strategy and the interface-toggle strategy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

from . import dataplane as dp
from .metrics import CommandRecord, FlowOutcome, MigrationMetrics
from .netsim import PacketNetwork, SwitchEvent
from .simengine import Engine, HostFlow, make_rng, ms_to_us, s_to_us, us_to_ms
from .topology import (ScenarioTopology, VnMapping, max_gateway_path_ms,
                       validate)

log = logging.getLogger(__name__)

GATEWAY_RULE_PRIORITY = 10

ORDERINGS = ("algorithm1", "simultaneous", "pseudocode-literal")
STRATEGIES = ("gateway", "interface-toggle")


class MigrationAborted(RuntimeError):
    """Migration gave up; the old VN is still serving traffic."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


# ---------------------------------------------------------------------------
# command channels


@dataclass(frozen=True)
class LagModel:
    """Named distribution for command-execution lag, in milliseconds."""

    family: str  # constant | uniform | lognormal
    params: tuple

    def __post_init__(self):
        if self.family == "constant":
            (value,) = self.params
            if value < 0:
                raise ValueError("constant lag must be >= 0")
        elif self.family == "uniform":
            lo, hi = self.params
            if lo < 0 or hi < lo:
                raise ValueError("uniform lag needs 0 <= lo <= hi")
        elif self.family == "lognormal":
            median, sigma = self.params
            if median <= 0 or sigma <= 0:
                raise ValueError("lognormal lag needs median > 0 and sigma > 0")
        else:
            raise ValueError(f"unknown lag family {self.family!r}")

    @classmethod
    def constant(cls, value_ms: float) -> "LagModel":
        return cls("constant", (value_ms,))

    @classmethod
    def uniform(cls, lo_ms: float, hi_ms: float) -> "LagModel":
        return cls("uniform", (lo_ms, hi_ms))

    @classmethod
    def lognormal(cls, median_ms: float, sigma: float) -> "LagModel":
        return cls("lognormal", (median_ms, sigma))

    @property
    def upper_bound_ms(self) -> float | None:
        if self.family == "constant":
            return self.params[0]
        if self.family == "uniform":
            return self.params[1]
        return None

    def sample_ms(self, rng) -> float:
        if self.family == "constant":
            return self.params[0]
        if self.family == "uniform":
            return rng.uniform(*self.params)
        median, sigma = self.params
        return rng.lognormvariate(math.log(median), sigma)


@dataclass(frozen=True)
class CommandChannel:
    """How scheduling commands reach switches.

    The ssh kind pays a per-command authentication overhead on top of its
    lag draw; the switch-message kind must use a bounded lag family so its
    samples never exceed the configured upper bound.
    """

    kind: str  # ssh | of-message
    lag: LagModel
    auth_overhead_ms: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ssh", "of-message"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "of-message":
            if self.lag.upper_bound_ms is None:
                raise ValueError("of-message channels need a bounded lag model")
            if self.auth_overhead_ms:
                raise ValueError("auth overhead applies to ssh channels only")
        if self.auth_overhead_ms < 0:
            raise ValueError("auth overhead must be >= 0")

    def sample_lag_ms(self, rng) -> float:
        lag = self.auth_overhead_ms + self.lag.sample_ms(rng)
        upper = self.lag.upper_bound_ms
        if self.kind == "of-message" and upper is not None:
            assert lag <= upper + 1e-9
        return lag

    @classmethod
    def ssh_default(cls) -> "CommandChannel":
        return cls("ssh", LagModel.lognormal(1000.0, 0.5), auth_overhead_ms=100.0)

    @classmethod
    def of_default(cls) -> "CommandChannel":
        return cls("of-message", LagModel.uniform(5.0, 100.0))

    @classmethod
    def of_low_jitter(cls) -> "CommandChannel":
        return cls("of-message", LagModel.uniform(1.0, 5.0))

    @classmethod
    def ideal(cls) -> "CommandChannel":
        return cls("of-message", LagModel.constant(0.0))

    @classmethod
    def named(cls, name: str) -> "CommandChannel":
        if name == "ssh":
            return cls.ssh_default()
        if name == "of-message":
            return cls.of_default()
        raise ValueError(f"unknown channel name {name!r}")


# ---------------------------------------------------------------------------
# polling, translation, cloning


@dataclass(frozen=True)
class TableSnapshot:
    """Point-in-time copy of the affected switches' tables."""

    taken_us: int
    tables: dict[str, tuple[dp.FlowRule, ...]]

    def total_rules(self) -> int:
        return sum(len(rules) for rules in self.tables.values())


def poll_flow_tables(net: PacketNetwork, switch_ids, now_us: int) -> TableSnapshot:
    """Snapshot every affected switch's table; fail-closed if any switch is
    unreachable (nothing has been mutated at this point)."""
    tables: dict[str, tuple[dp.FlowRule, ...]] = {}
    for dpid in switch_ids:
        if dpid in net.unreachable:
            raise MigrationAborted("poll", f"switch {dpid} unreachable")
        tables[dpid] = tuple(net.switches[dpid].table.snapshot())
    return TableSnapshot(taken_us=now_us, tables=tables)


def translate_rule(rule: dp.FlowRule, from_dpid: str, mapping: VnMapping) -> dp.FlowRule:
    """Rewrite a rule's ports for the mapped switch; everything else is
    preserved. Missing port mappings are a hard error — they mean the
    mapping bookkeeping is incomplete."""
    ports = mapping.port_map.get(from_dpid)
    if ports is None:
        raise KeyError(f"switch {from_dpid} is not in the mapping")
    new_match = rule.match
    if new_match.in_port is not None:
        if new_match.in_port not in ports:
            raise KeyError(f"port {new_match.in_port} of {from_dpid} is unmapped")
        new_match = replace(new_match, in_port=ports[new_match.in_port])
    action = rule.action
    if isinstance(action, dp.Output):
        if action.port not in ports:
            raise KeyError(f"port {action.port} of {from_dpid} is unmapped")
        action = dp.Output(ports[action.port])
    return replace(rule, match=new_match, action=action)


@dataclass(frozen=True)
class ClonePlan:
    """Per-switch install batches with their virtual completion times."""

    batches: tuple[tuple[str, tuple[dp.FlowRule, ...], int], ...]  # (new dpid, rules, done_us)
    completion_us: int


def plan_clone(snapshot: TableSnapshot, mapping: VnMapping, per_rule_cost_ms: float,
               channel: CommandChannel, rng, issue_us: int) -> ClonePlan:
    """Translate every polled rule and lay out the serial install timeline:
    one channel lag per switch batch, then the per-rule install costs. A
    single controller thread issues the mods, so batches run back to back.
    """
    cost_us = ms_to_us(per_rule_cost_ms)
    batches = []
    cursor = issue_us
    for dpid, rules in snapshot.tables.items():
        translated = tuple(translate_rule(r, dpid, mapping) for r in rules)
        cursor += ms_to_us(channel.sample_lag_ms(rng))
        cursor += cost_us * len(translated)
        batches.append((mapping.to_new_switch(dpid), translated, cursor))
    return ClonePlan(tuple(batches), cursor)


def clone_tables(net: PacketNetwork, snapshot: TableSnapshot, mapping: VnMapping,
                 per_rule_cost_ms: float, channel: CommandChannel, rng,
                 issue_us: int) -> int:
    """Schedule the clone onto the engine; returns the completion time.

    Any translation failure aborts before a single install is scheduled,
    leaving the old VN authoritative.
    """
    try:
        plan = plan_clone(snapshot, mapping, per_rule_cost_ms, channel, rng, issue_us)
    except KeyError as exc:
        raise MigrationAborted("clone", str(exc)) from exc
    for dpid, rules, done_us in plan.batches:
        net.engine.schedule(done_us, "clone-batch", (dpid, rules))
    return plan.completion_us


# ---------------------------------------------------------------------------
# redirection schedule


@dataclass(frozen=True)
class RedirectPoint:
    """A switch where traffic is redirected from the old VN to the new one.

    For a full migration these are the gateways; for a partial migration
    they are the old VN's neighbor switches of the migrated region, wired
    up the same way.
    """

    switch_id: str
    host_ports: tuple[int, ...]
    port_to_old: int
    port_to_new: int | None


def gateway_redirect_points(topology: ScenarioTopology) -> tuple[RedirectPoint, ...]:
    return tuple(
        RedirectPoint(w.gateway, (w.host_port,), w.old_vn_port, w.new_vn_port)
        for w in topology.gateway_wiring
    )


@dataclass(frozen=True)
class ScheduledCommand:
    phase: int
    target: str
    mods: tuple[dp.FlowMod, ...]
    label: str


@dataclass(frozen=True)
class RedirectionSchedule:
    ordering: str
    phases: tuple[tuple[ScheduledCommand, ...], ...]
    drain_delay_ms: float

    def all_commands(self) -> list[ScheduledCommand]:
        return [cmd for phase in self.phases for cmd in phase]


def build_redirection_schedule(redirect_points, topology: ScenarioTopology,
                               ordering: str = "algorithm1",
                               drain_delay_ms: float | None = None) -> RedirectionSchedule:
    """Build the redirection command list.

    algorithm1 (three phases, loss-free ordering):
      1. at every redirect point, admit traffic arriving from the new VN
         toward each host port;
      2. re-point each host port's forwarding rule from the old VN port to
         the new VN port;
      3. after a drain delay that lets packets still inside the old VN
         arrive, disconnect the old VN by dropping traffic it delivers.

    simultaneous: the same three mods per redirect point collapsed into one
    atomic command per point, all issued at once (the provably lossy way).

    pseudocode-literal: keeps phase 3 as an update predicated on rules that
    still output to the old VN port, which phase 2 has already rewritten —
    it therefore matches nothing and leaves the old VN connected. Available
    for comparison only.
    """
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}")
    points = tuple(redirect_points)
    for p in points:
        if p.port_to_new is None:
            raise ValueError(f"redirect point {p.switch_id} has no port toward the new VN")
        if not p.host_ports:
            raise ValueError(f"redirect point {p.switch_id} has no host-facing ports")

    if drain_delay_ms is None:
        drain_delay_ms = 2.0 * max_gateway_path_ms(topology, "old")

    def admit_new(p: RedirectPoint, hp: int) -> dp.FlowMod:
        return dp.Install(dp.FlowRule(GATEWAY_RULE_PRIORITY,
                                      dp.Match(in_port=p.port_to_new),
                                      dp.Output(hp)))

    def repoint_host(p: RedirectPoint, hp: int) -> dp.FlowMod:
        return dp.Update(dp.RulePredicate(in_port=hp, out_port=p.port_to_old),
                         dp.Output(p.port_to_new))

    def drop_old(p: RedirectPoint) -> dp.FlowMod:
        return dp.Install(dp.FlowRule(GATEWAY_RULE_PRIORITY,
                                      dp.Match(in_port=p.port_to_old),
                                      dp.DROP))

    def literal_drop(p: RedirectPoint, hp: int) -> dp.FlowMod:
        return dp.Update(dp.RulePredicate(in_port=hp, out_port=p.port_to_old),
                         dp.DROP)

    if ordering == "simultaneous":
        phase = tuple(
            ScheduledCommand(1, p.switch_id,
                             tuple(admit_new(p, hp) for hp in p.host_ports)
                             + tuple(repoint_host(p, hp) for hp in p.host_ports)
                             + (drop_old(p),),
                             "atomic-swap")
            for p in points
        )
        return RedirectionSchedule(ordering, (phase,), 0.0)

    phase1 = tuple(ScheduledCommand(1, p.switch_id, (admit_new(p, hp),), "admit-new-vn")
                   for p in points for hp in p.host_ports)
    phase2 = tuple(ScheduledCommand(2, p.switch_id, (repoint_host(p, hp),), "repoint-host")
                   for p in points for hp in p.host_ports)
    if ordering == "algorithm1":
        phase3 = tuple(ScheduledCommand(3, p.switch_id, (drop_old(p),), "disconnect-old-vn")
                       for p in points)
    else:  # pseudocode-literal
        phase3 = tuple(ScheduledCommand(3, p.switch_id,
                                        tuple(literal_drop(p, hp) for hp in p.host_ports),
                                        "disconnect-old-vn-literal")
                       for p in points)
    return RedirectionSchedule(ordering, (phase1, phase2, phase3), drain_delay_ms)


@dataclass(frozen=True)
class ExecutionRecord:
    commands: tuple[CommandRecord, ...]
    phase_done_us: tuple[int, ...]

    @property
    def completion_us(self) -> int:
        return self.phase_done_us[-1] if self.phase_done_us else 0

    def exec_us(self, phase: int, target: str) -> int:
        for c in self.commands:
            if c.phase == phase and c.target == target:
                return ms_to_us(c.exec_ms)
        raise KeyError((phase, target))


def plan_schedule_execution(schedule: RedirectionSchedule, channel: CommandChannel,
                            rng, start_us: int, unreachable=frozenset()) -> ExecutionRecord:
    """Lay out issue/execution times for every command.

    Commands within a phase are issued together and land after independent
    per-command lag draws; the next phase is issued only once every
    execution in the current phase is confirmed. The drain delay is applied
    before the final (disconnect) phase. A command whose target does not
    answer is retried once, then the whole migration aborts — safe, because
    the disconnect phase has not run.
    """
    records: list[CommandRecord] = []
    phase_done: list[int] = []
    issue_us = start_us
    last_phase = len(schedule.phases)
    for phase_idx, phase in enumerate(schedule.phases, start=1):
        if phase_idx == last_phase and phase_idx > 1:
            issue_us += ms_to_us(schedule.drain_delay_ms)
        barrier = issue_us
        for cmd in phase:
            attempts = 1
            lag_ms = channel.sample_lag_ms(rng)
            if cmd.target in unreachable:
                attempts = 2
                lag_ms = channel.sample_lag_ms(rng)  # the retry's draw
                if cmd.target in unreachable:
                    raise MigrationAborted(
                        f"phase-{phase_idx}",
                        f"command to {cmd.target} failed after retry")
            exec_us = issue_us + ms_to_us(lag_ms)
            records.append(CommandRecord(
                phase=phase_idx, target=cmd.target, label=cmd.label,
                issue_ms=us_to_ms(issue_us), exec_ms=us_to_ms(exec_us),
                attempts=attempts))
            barrier = max(barrier, exec_us)
        phase_done.append(barrier)
        issue_us = barrier
    return ExecutionRecord(tuple(records), tuple(phase_done))


def execute_schedule(net: PacketNetwork, schedule: RedirectionSchedule,
                     channel: CommandChannel, rng, start_us: int) -> ExecutionRecord:
    """Plan the execution and put every command on the engine clock."""
    record = plan_schedule_execution(schedule, channel, rng, start_us,
                                     unreachable=net.unreachable)
    flat_cmds = schedule.all_commands()
    assert len(flat_cmds) == len(record.commands)
    for cmd, rec in zip(flat_cmds, record.commands):
        net.engine.schedule(ms_to_us(rec.exec_ms), "redirect-command",
                            (cmd.target, cmd.mods))
    return record


# ---------------------------------------------------------------------------
# presenter


@dataclass
class PresenterState:
    """Keeps the client application inside a single, stable VN view.

    Events from new-VN switches are rewritten to their old-VN identities;
    lifecycle noise from migration infrastructure (gateways, bridges, the
    new VN itself) never reaches the client.
    """

    mapping: VnMapping
    active_vn: str = "old"
    suppress: frozenset = frozenset()
    suppressed_count: int = 0
    unmapped_count: int = 0


def presenter_translate(event: SwitchEvent, state: PresenterState,
                        old_switches, new_switches) -> SwitchEvent | None:
    """Translate one raw switch event into the client's view, or swallow it.

    Returns None for suppressed events.
    """
    dpid = event.dpid
    if dpid in new_switches:
        if event.kind != "packet-in":
            state.suppressed_count += 1
            return None
        old_dpid = state.mapping.to_old_switch(dpid)
        port = event.port
        if port is not None:
            try:
                port = state.mapping.to_old_port(dpid, port)
            except KeyError:
                state.unmapped_count += 1
                state.suppressed_count += 1
                return None
        return SwitchEvent(event.kind, old_dpid, port, event.packet, event.time_us)
    if dpid in old_switches:
        return event
    if dpid in state.suppress:
        state.suppressed_count += 1
        return None
    state.unmapped_count += 1
    state.suppressed_count += 1
    return None


class MigrationController:
    """Binds the mapping, the presenter and the client app to a network.

    Flow-mods and packet-outs produced by the client app against its
    (old-VN) view are steered to the switch the triggering event actually
    came from, so the app keeps working identically before, during and
    after the move.
    """

    def __init__(self, topology: ScenarioTopology, net: PacketNetwork,
                 app: dp.LearningSwitchApp):
        self.topology = topology
        self.net = net
        self.app = app
        self.old_switches = frozenset(topology.old_vn.switches)
        self.new_switches = frozenset(topology.new_vn.switches)
        infra = set(topology.gateways) | set(topology.bridges)
        self.presenter = PresenterState(mapping=topology.mapping,
                                        suppress=frozenset(infra))
        self.client_events: list[SwitchEvent] = []
        net.controller = self

    # netsim hooks ---------------------------------------------------------

    def on_switch_event(self, event: SwitchEvent) -> None:
        translated = presenter_translate(event, self.presenter,
                                         self.old_switches, self.new_switches)
        if translated is not None:
            self.client_events.append(translated)

    def on_packet_in(self, dpid: str, port: int, packet, now_us: int) -> None:
        raw = SwitchEvent("packet-in", dpid, port, packet, now_us)
        event = presenter_translate(raw, self.presenter,
                                    self.old_switches, self.new_switches)
        if event is None:
            return
        self.client_events.append(event)
        decision = self.app.handle_packet_in(event.dpid, event.port,
                                             packet, now_us)
        use_new = dpid in self.new_switches
        for mod in decision.mods:
            self._apply_app_mod(event.dpid, mod, use_new, now_us)
        out = decision.out
        if out is None:
            return
        if out != dp.FLOOD and use_new:
            out = self.presenter.mapping.to_new_port(event.dpid, out)
        self.net.packet_out(dpid, out, port, packet, now_us)

    # helpers ----------------------------------------------------------------

    def _apply_app_mod(self, virtual_dpid: str, mod: dp.FlowMod, use_new: bool,
                       now_us: int) -> None:
        target = virtual_dpid
        if use_new:
            target = self.presenter.mapping.to_new_switch(virtual_dpid)
            if isinstance(mod, dp.Install):
                mod = dp.Install(translate_rule(mod.rule, virtual_dpid,
                                                self.presenter.mapping))
        self.net.apply_mod(target, mod, now_us)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class MigrationOptions:
    """Knobs for one migration run; every stochastic input is derived from
    ``seed`` through named streams."""

    flows: tuple[HostFlow, ...] = ()
    migrate_at_s: float = 1.0
    run_until_s: float | None = None
    ordering: str = "algorithm1"
    drain_delay_ms: float | None = None  # default: 2x the deepest old-VN path
    per_rule_cost_ms: float = 0.7
    clone_channel: CommandChannel | None = None
    t_drop_s: float = 5.0
    rule_ttl_s: float | None = None
    buffer_capacity: int = 10
    seed: object = 0
    prepopulate_rules: int = 0
    unreachable: frozenset = frozenset()
    record_events: bool = False


def all_pairs_flows(topology: ScenarioTopology, rate_pps: float, start_s: float,
                    duration_s: float) -> tuple[HostFlow, ...]:
    """One CBR flow per ordered host pair."""
    flows = []
    for src in topology.hosts:
        for dst in topology.hosts:
            if src != dst:
                flows.append(HostFlow(f"{src}->{dst}", src, dst, rate_pps,
                                      start_s, duration_s))
    return tuple(flows)


def _install_gateway_baseline(net: PacketNetwork, topology: ScenarioTopology) -> None:
    """Pre-migration gateway tables: host traffic into the old VN, old-VN
    traffic back to the host, and anything from the new VN dropped."""
    for w in topology.gateway_wiring:
        for mod in (
            dp.Install(dp.FlowRule(GATEWAY_RULE_PRIORITY,
                                   dp.Match(in_port=w.host_port),
                                   dp.Output(w.old_vn_port))),
            dp.Install(dp.FlowRule(GATEWAY_RULE_PRIORITY,
                                   dp.Match(in_port=w.old_vn_port),
                                   dp.Output(w.host_port))),
            dp.Install(dp.FlowRule(GATEWAY_RULE_PRIORITY,
                                   dp.Match(in_port=w.new_vn_port),
                                   dp.DROP)),
        ):
            net.apply_mod(w.gateway, mod, 0)


def _prepopulate(net: PacketNetwork, topology: ScenarioTopology, count: int) -> None:
    """Synthetic forwarding state for duration experiments."""
    for dpid in topology.old_vn.switches:
        ports = topology.switch_ports[dpid]
        out = dp.Output(ports[0])
        for i in range(count):
            rule = dp.FlowRule(5, dp.Match(src=f"x{i}", dst=f"y{i}"), out)
            net.apply_mod(dpid, dp.Install(rule), 0)


def _auto_horizon_us(topology: ScenarioTopology, options: MigrationOptions,
                     migration_end_us: int) -> int:
    """Run long enough that every emitted packet has either arrived or is
    provably lost, and the migration itself has completed."""
    flow_end = max((s_to_us(f.end_s) for f in options.flows), default=0)
    slack = ms_to_us(3 * max_gateway_path_ms(topology, "old") + 200.0)
    return max(flow_end + slack, migration_end_us + slack)


class _MigrationRun:
    """One migration driven by engine events.

    The timeline (clone batches, command executions, toggles) is planned
    when the start event fires, from the actual polled tables and freshly
    drawn channel lags, then scheduled as absolute-time events.
    """

    def __init__(self, topology, net, controller, strategy, channel, options):
        self.topology = topology
        self.net = net
        self.controller = controller
        self.strategy = strategy
        self.channel = channel
        self.options = options
        self.lag_rng = make_rng(options.seed, "channel-lags")
        self.record: ExecutionRecord | None = None
        self.clone_records: list[CommandRecord] = []
        self.start_us: int | None = None
        self.done_us: int | None = None
        self.phase_ts: dict[str, float] = {}
        self.error: MigrationAborted | None = None

        engine = net.engine
        engine.on("migration-start", self._on_start)
        engine.on("clone-batch", self._on_clone_batch)
        engine.on("redirect-command", self._on_redirect_command)
        engine.on("toggle", self._on_toggle)
        engine.on("cutover", self._on_cutover)

    def _on_start(self, now_us: int, _data) -> None:
        opts = self.options
        self.start_us = now_us
        try:
            for dpid in self.topology.new_vn.switches:
                self.net.emit_switch_event("switch-join", dpid, now_us)
            snapshot = poll_flow_tables(self.net, self.topology.old_vn.switches, now_us)
            self.phase_ts["poll"] = us_to_ms(now_us)
            clone_channel = opts.clone_channel or CommandChannel.of_default()
            clone_done = clone_tables(self.net, snapshot, self.topology.mapping,
                                      opts.per_rule_cost_ms, clone_channel,
                                      self.lag_rng, now_us)
            self.phase_ts["clone_done"] = us_to_ms(clone_done)
            if self.strategy == "gateway":
                schedule = build_redirection_schedule(
                    gateway_redirect_points(self.topology), self.topology,
                    ordering=opts.ordering, drain_delay_ms=opts.drain_delay_ms)
                self.record = execute_schedule(self.net, schedule, self.channel,
                                               self.lag_rng, clone_done)
                for i, done in enumerate(self.record.phase_done_us, start=1):
                    self.phase_ts[f"phase{i}_done"] = us_to_ms(done)
                self.done_us = self.record.completion_us
                cutover = self.record.phase_done_us[1] if len(self.record.phase_done_us) > 1 \
                    else self.record.phase_done_us[0]
                self.net.engine.schedule(cutover, "cutover", ())
            else:
                self._plan_toggles(clone_done)
        except MigrationAborted as exc:
            self.error = exc
            log.warning("migration aborted at %s: %s", exc.stage, exc.reason)

    def _plan_toggles(self, issue_us: int) -> None:
        """Interface-toggle strategy: bring every new-VN attachment up and
        every old-VN attachment down, one command per interface, all issued
        together over the command channel."""
        records = []
        done = issue_us
        commands = []
        for w in self.topology.gateway_wiring:
            commands.append((w.new_attach, True, f"up-{w.new_attach[0]}"))
        for w in self.topology.gateway_wiring:
            commands.append((w.old_attach, False, f"down-{w.old_attach[0]}"))
        for (dpid, port), up, label in commands:
            attempts = 1
            lag_ms = self.channel.sample_lag_ms(self.lag_rng)
            if dpid in self.net.unreachable:
                attempts = 2
                lag_ms = self.channel.sample_lag_ms(self.lag_rng)
                if dpid in self.net.unreachable:
                    raise MigrationAborted(
                        "toggle", f"command to {dpid} failed after retry")
            exec_us = issue_us + ms_to_us(lag_ms)
            self.net.engine.schedule(exec_us, "toggle", (dpid, port, up))
            records.append(CommandRecord(1, dpid, label, us_to_ms(issue_us),
                                         us_to_ms(exec_us), attempts))
            done = max(done, exec_us)
        self.record = ExecutionRecord(tuple(records), (done,))
        self.phase_ts["toggle_done"] = us_to_ms(done)
        self.done_us = done
        self.net.engine.schedule(done, "cutover", ())

    def _on_clone_batch(self, now_us: int, data) -> None:
        if self.error is not None:
            return
        dpid, rules = data
        for rule in rules:
            self.net.apply_mod(dpid, dp.Install(rule), now_us)

    def _on_redirect_command(self, now_us: int, data) -> None:
        if self.error is not None:
            return
        target, mods = data
        for mod in mods:
            self.net.apply_mod(target, mod, now_us)

    def _on_toggle(self, now_us: int, data) -> None:
        if self.error is not None:
            return
        dpid, port, up = data
        self.net.set_interface_admin(dpid, port, up, now_us)

    def _on_cutover(self, now_us: int, _data) -> None:
        if self.error is None:
            self.controller.presenter.active_vn = "new"


def _collect_metrics(net: PacketNetwork, controller: MigrationController,
                     run: _MigrationRun | None, strategy: str, ordering: str,
                     channel_kind: str, options: MigrationOptions,
                     end_us: int) -> MigrationMetrics:
    net.close_flows(end_us)
    flows = []
    for stats in net.flows.values():
        f = stats.flow
        loss_pct = 0.0 if stats.sent == 0 else 100.0 * stats.lost / stats.sent
        flows.append(FlowOutcome(
            flow_id=f.flow_id, src=f.src, dst=f.dst, rate_pps=f.rate_pps,
            sent=stats.sent, received=stats.received, lost=stats.lost,
            loss_pct=loss_pct, duplicates=stats.duplicates,
            max_gap_ms=us_to_ms(stats.max_gap_us)))
    commands: tuple[CommandRecord, ...] = ()
    duration_ms = 0.0
    phase_ts: dict[str, float] = {}
    aborted = False
    abort_reason = None
    if run is not None:
        phase_ts = dict(run.phase_ts)
        if run.error is not None:
            aborted = True
            abort_reason = str(run.error)
        elif run.record is not None and run.start_us is not None:
            commands = run.record.commands
            duration_ms = us_to_ms(run.done_us - run.start_us)
    return MigrationMetrics(
        strategy=strategy, ordering=ordering, channel_kind=channel_kind,
        seed=options.seed, duration_ms=duration_ms, phase_timestamps=phase_ts,
        flows=tuple(flows), commands=commands, aborted=aborted,
        abort_reason=abort_reason,
        suppressed_events=controller.presenter.suppressed_count,
        drops=dict(net.drops))


def _setup(scenario: ScenarioTopology, strategy: str,
           options: MigrationOptions) -> tuple[Engine, PacketNetwork, MigrationController]:
    diags = validate(scenario)
    if diags:
        raise ValueError("scenario failed validation: " + "; ".join(diags))
    engine = Engine(record_log=options.record_events)
    gateway_app = "hub" if strategy == "interface-toggle" else None
    net = PacketNetwork(scenario, engine, buffer_capacity=options.buffer_capacity,
                        gateway_app=gateway_app)
    app = dp.LearningSwitchApp(t_drop_s=options.t_drop_s,
                               rule_ttl_s=options.rule_ttl_s)
    controller = MigrationController(scenario, net, app)
    net.unreachable = set(options.unreachable)

    if strategy == "gateway":
        _install_gateway_baseline(net, scenario)
    else:
        # attachments into the not-yet-active VN start administratively down
        for w in scenario.gateway_wiring:
            dpid, port = w.new_attach
            net.switches[dpid].ports[port].admin_up = False

    if options.prepopulate_rules:
        _prepopulate(net, scenario, options.prepopulate_rules)

    for dpid in scenario.old_vn.switches:
        net.emit_switch_event("switch-join", dpid, 0)
    for dpid in list(scenario.gateways) + list(scenario.bridges):
        net.emit_switch_event("switch-join", dpid, 0)

    for flow in options.flows:
        net.add_flow(flow)
    return engine, net, controller


def simulate_baseline(scenario: ScenarioTopology,
                      options: MigrationOptions) -> MigrationMetrics:
    """Traffic-only run with no migration; the loss reference point."""
    engine, net, controller = _setup(scenario, "gateway", options)
    end_us = _auto_horizon_us(scenario, options, 0) if options.run_until_s is None \
        else s_to_us(options.run_until_s)
    engine.run_until(end_us)
    return _collect_metrics(net, controller, None, "baseline", "none",
                            "none", options, end_us)


@dataclass
class RunHandle:
    """Everything a post-run inspection might need: the metrics plus the
    live controller and network state."""

    metrics: MigrationMetrics
    controller: MigrationController
    net: PacketNetwork
    engine: Engine
    error: MigrationAborted | None = None


def run_migration(scenario: ScenarioTopology, strategy: str,
                  channel: CommandChannel, options: MigrationOptions) -> RunHandle:
    """Run one full migration; returns the handle without raising on abort.

    gateway strategy: poll, clone, then execute the redirection schedule in
    the configured ordering. interface-toggle strategy: poll, clone, then
    flip the attachment interfaces' admin state over the command channel.
    Any failure aborts with the old VN untouched and still serving.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if options.ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {options.ordering!r}")
    engine, net, controller = _setup(scenario, strategy, options)
    run = _MigrationRun(scenario, net, controller, strategy, channel, options)
    start_us = s_to_us(options.migrate_at_s)
    engine.schedule(start_us, "migration-start", ())
    if options.run_until_s is not None:
        end_us = s_to_us(options.run_until_s)
    else:
        # the timeline is planned when the start event fires, so run up to
        # it first, then extend the horizon past the planned completion
        engine.run_until(start_us)
        migration_end = run.done_us if run.done_us is not None else start_us
        end_us = _auto_horizon_us(scenario, options, migration_end)
    engine.run_until(end_us)
    metrics = _collect_metrics(net, controller, run, strategy, options.ordering,
                               channel.kind, options, end_us)
    return RunHandle(metrics, controller, net, engine, run.error)


def migrate(scenario: ScenarioTopology, strategy: str, channel: CommandChannel,
            options: MigrationOptions) -> MigrationMetrics:
    """Run one full migration and measure it; raises MigrationAborted (with
    the partial metrics attached) if the migration gave up."""
    handle = run_migration(scenario, strategy, channel, options)
    if handle.error is not None:
        err = MigrationAborted(handle.error.stage, handle.error.reason)
        err.metrics = handle.metrics
        err.handle = handle
        raise err
    return handle.metrics
