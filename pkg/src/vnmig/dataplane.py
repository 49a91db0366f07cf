"""OpenFlow-style switch models.

Priority-ordered flow tables with (in_port, src, dst) matching, flow-mod
application, the MAC-learning client application with its conflicting-replay
quarantine, shared-VLAN broadcast, and hypervisor-side buffering for
administratively-down interfaces.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class Output:
    port: int


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Miss:
    pass


DROP = Drop()
MISS = Miss()

FLOOD = "flood"


@dataclass(frozen=True)
class Match:
    """Exact-match fields; None means wildcard."""

    in_port: int | None = None
    src: str | None = None
    dst: str | None = None

    def matches(self, in_port: int, src: str, dst: str) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.src is not None and self.src != src:
            return False
        if self.dst is not None and self.dst != dst:
            return False
        return True


@dataclass(frozen=True)
class FlowRule:
    priority: int
    match: Match
    action: Output | Drop
    expiry_us: int | None = None


@dataclass(frozen=True)
class RulePredicate:
    """Exact-field conjunction used by Update/Delete flow-mods.

    ``out_port`` selects rules whose action is Output(out_port).
    """

    in_port: int | None = None
    src: str | None = None
    dst: str | None = None
    out_port: int | None = None

    def selects(self, rule: FlowRule) -> bool:
        m = rule.match
        if self.in_port is not None and m.in_port != self.in_port:
            return False
        if self.src is not None and m.src != self.src:
            return False
        if self.dst is not None and m.dst != self.dst:
            return False
        if self.out_port is not None and rule.action != Output(self.out_port):
            return False
        return True


@dataclass(frozen=True)
class Install:
    rule: FlowRule


@dataclass(frozen=True)
class Update:
    predicate: RulePredicate
    action: Output | Drop


@dataclass(frozen=True)
class Delete:
    predicate: RulePredicate


FlowMod = Install | Update | Delete


class FlowModError(ValueError):
    """A flow-mod referenced state that does not exist on the switch."""


class FlowTable:
    """Priority-ordered rule set.

    Lookup returns the highest-priority matching rule; priority ties break
    by earliest installation, which keeps lookups deterministic. Installing
    a rule with an existing (priority, match) replaces that rule in place,
    so a table never holds two rules with identical (priority, match).
    """

    def __init__(self):
        self.rules: list[FlowRule] = []
        self._order: list[tuple[int, int]] = []  # (-priority, install_seq)
        self._keys: set[tuple[int, Match]] = set()
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self.rules)

    def install(self, rule: FlowRule) -> int:
        key = (rule.priority, rule.match)
        if key in self._keys:
            for idx, existing in enumerate(self.rules):
                if (existing.priority, existing.match) == key:
                    self.rules[idx] = rule
                    return 1
        seq = self._next_seq
        self._next_seq += 1
        order_key = (-rule.priority, seq)
        idx = bisect.bisect_right(self._order, order_key)
        self._order.insert(idx, order_key)
        self.rules.insert(idx, rule)
        self._keys.add(key)
        return 1

    def _remove_at(self, idx: int) -> FlowRule:
        rule = self.rules.pop(idx)
        self._order.pop(idx)
        self._keys.discard((rule.priority, rule.match))
        return rule

    def update(self, predicate: RulePredicate, action: Output | Drop) -> int:
        count = 0
        for idx, rule in enumerate(self.rules):
            if predicate.selects(rule):
                self.rules[idx] = replace(rule, action=action)
                count += 1
        return count

    def delete(self, predicate: RulePredicate) -> int:
        victims = [i for i, r in enumerate(self.rules) if predicate.selects(r)]
        for i in reversed(victims):
            self._remove_at(i)
        return len(victims)

    def lookup(self, in_port: int, src: str, dst: str) -> Output | Drop | Miss:
        for rule in self.rules:
            if rule.match.matches(in_port, src, dst):
                return rule.action
        return MISS

    def remove_expired_at(self, now_us: int) -> list[FlowRule]:
        """Remove rules whose expiry equals now (event-driven removal)."""
        victims = [i for i, r in enumerate(self.rules)
                   if r.expiry_us is not None and r.expiry_us == now_us]
        return [self._remove_at(i) for i in reversed(victims)]

    def purge_expired(self, now_us: int) -> list[FlowRule]:
        victims = [i for i, r in enumerate(self.rules)
                   if r.expiry_us is not None and r.expiry_us <= now_us]
        return [self._remove_at(i) for i in reversed(victims)]

    def snapshot(self) -> list[FlowRule]:
        return list(self.rules)  # rules are frozen, a shallow copy is a snapshot

    def to_text(self) -> str:
        """Line-oriented dump for debugging and golden-file comparisons."""
        lines = []
        for r in self.rules:
            m = r.match
            fields = []
            fields.append(f"in_port={m.in_port if m.in_port is not None else '*'}")
            fields.append(f"src={m.src if m.src is not None else '*'}")
            fields.append(f"dst={m.dst if m.dst is not None else '*'}")
            if isinstance(r.action, Output):
                act = f"output:{r.action.port}"
            else:
                act = "drop"
            line = f"priority={r.priority} {' '.join(fields)} -> {act}"
            if r.expiry_us is not None:
                line += f" expiry_us={r.expiry_us}"
            lines.append(line)
        return "\n".join(lines)


def match(table: FlowTable, packet, in_port: int) -> Output | Drop | Miss:
    """Table lookup for one packet; a pure function of its arguments."""
    return table.lookup(in_port, packet.src, packet.dst)


@dataclass
class PortState:
    number: int
    admin_up: bool = True


@dataclass
class SwitchState:
    """One modeled switch: identity, ports, flow table, role and client app.

    role is one of gateway / vn-switch / bridge; app selects miss behavior:
    "learning" raises a packet-in to the controller, "hub" floods, None
    drops. Bridge-role switches run as two-port hubs and own no client app
    state.
    """

    datapath_id: str
    ports: dict[int, PortState]
    table: FlowTable = field(default_factory=FlowTable)
    role: str = "vn-switch"
    app: str | None = None

    def port_numbers(self) -> list[int]:
        return sorted(self.ports)

    def has_port(self, number: int) -> bool:
        return number in self.ports


def apply_flow_mod(switch: SwitchState, mod: FlowMod) -> int:
    """Apply one flow-mod to a switch table; returns rules affected.

    Installs referencing a port the switch does not own are rejected, which
    protects cloning from an incomplete port mapping.
    """
    if isinstance(mod, Install):
        rule = mod.rule
        if isinstance(rule.action, Output) and not switch.has_port(rule.action.port):
            raise FlowModError(
                f"switch {switch.datapath_id}: output port {rule.action.port} does not exist"
            )
        if rule.match.in_port is not None and not switch.has_port(rule.match.in_port):
            raise FlowModError(
                f"switch {switch.datapath_id}: match in_port {rule.match.in_port} does not exist"
            )
        return switch.table.install(rule)
    if isinstance(mod, Update):
        return switch.table.update(mod.predicate, mod.action)
    if isinstance(mod, Delete):
        return switch.table.delete(mod.predicate)
    raise TypeError(f"unknown flow-mod {mod!r}")


class HypervisorBuffer:
    """Per-interface packet queue held by the hypervisor while the virtual
    interface is administratively down.

    Arrivals beyond the capacity are discarded (and counted); the queue
    drains FIFO only when the interface comes back up.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("buffer capacity must be >= 0")
        self.capacity = capacity
        self.queue: deque = deque()
        self.discarded = 0

    def __len__(self) -> int:
        return len(self.queue)

    def offer(self, packet) -> bool:
        if len(self.queue) >= self.capacity:
            self.discarded += 1
            return False
        self.queue.append(packet)
        return True

    def drain(self) -> list:
        out = list(self.queue)
        self.queue.clear()
        return out


@dataclass(frozen=True)
class VlanDelivery:
    delivered: tuple
    buffered: tuple
    discarded: tuple


def vlan_deliver(vlan, packet, origin, admin_up, buffers) -> VlanDelivery:
    """Broadcast one packet on a shared VLAN.

    Delivers to every member interface except the origin; members that are
    administratively down enqueue into their hypervisor buffer instead (up
    to its capacity). ``admin_up`` maps (node, port) -> bool; ``buffers``
    maps (node, port) -> HypervisorBuffer and is filled lazily by the
    caller-supplied factory semantics of a defaultdict.
    """
    delivered, buffered, discarded = [], [], []
    for member in vlan.members:
        if member == origin:
            continue
        if admin_up(member):
            delivered.append(member)
        else:
            if buffers[member].offer(packet):
                buffered.append(member)
            else:
                discarded.append(member)
    return VlanDelivery(tuple(delivered), tuple(buffered), tuple(discarded))


@dataclass(frozen=True)
class AppDecision:
    """What the client app wants done after a packet-in: flow-mods on the
    same (virtual) switch, plus a forwarding decision for the triggering
    packet: an output port, FLOOD, or None (swallow)."""

    mods: tuple[FlowMod, ...]
    out: int | str | None
    note: str | None = None


class LearningSwitchApp:
    """Standard MAC-learning client application.

    Keeps one source->port table per (virtual) switch. A source that shows
    up on a different port than previously learned is treated as an error:
    the app installs a source-scoped drop rule for ``t_drop_s`` seconds and
    forwards nothing, after which forwarding recovers on its own. Learned
    forwarding rules optionally carry a hard TTL.
    """

    FWD_PRIORITY = 10
    DROP_PRIORITY = 20

    def __init__(self, t_drop_s: float = 5.0, rule_ttl_s: float | None = None):
        self.t_drop_us = round(t_drop_s * 1_000_000)
        self.rule_ttl_us = None if rule_ttl_s is None else round(rule_ttl_s * 1_000_000)
        self.mac_tables: dict[str, dict[str, int]] = {}
        self.conflicts: list[tuple[int, str, str, int, int]] = []

    def handle_packet_in(self, dpid: str, in_port: int, packet, now_us: int) -> AppDecision:
        table = self.mac_tables.setdefault(dpid, {})
        learned = table.get(packet.src)
        if learned is not None and learned != in_port:
            self.conflicts.append((now_us, dpid, packet.src, learned, in_port))
            drop = FlowRule(
                priority=self.DROP_PRIORITY,
                match=Match(src=packet.src),
                action=DROP,
                expiry_us=now_us + self.t_drop_us,
            )
            return AppDecision((Install(drop),), None, note="port conflict")
        table[packet.src] = in_port
        out_port = table.get(packet.dst)
        if out_port is None:
            return AppDecision((), FLOOD)
        expiry = None if self.rule_ttl_us is None else now_us + self.rule_ttl_us
        fwd = FlowRule(
            priority=self.FWD_PRIORITY,
            match=Match(in_port=in_port, src=packet.src, dst=packet.dst),
            action=Output(out_port),
            expiry_us=expiry,
        )
        return AppDecision((Install(fwd),), out_port)
