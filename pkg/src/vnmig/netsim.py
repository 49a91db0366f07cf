"""Packet-level network simulation.

Owns the runtime state of every modeled switch, link, VLAN and host sink,
drives constant-bit-rate sources, and raises packet-in/lifecycle events to
a controller hook. Strictly single-threaded per engine instance.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from . import dataplane as dp
from .simengine import Engine, HostFlow, LinkState, Packet, s_to_us, transmit
from .topology import ScenarioTopology

log = logging.getLogger(__name__)


@dataclass
class FlowStats:
    flow: HostFlow
    sent: int = 0
    received: int = 0
    duplicates: int = 0
    max_gap_us: int = 0
    last_arrival_us: int | None = None
    first_arrival_us: int | None = None
    _seen: set = field(default_factory=set, repr=False)
    arrival_seqs: list = field(default_factory=list, repr=False)

    def record_arrival(self, pkt: Packet, now_us: int) -> None:
        if pkt.seq in self._seen:
            self.duplicates += 1
            return
        self._seen.add(pkt.seq)
        self.received += 1
        self.arrival_seqs.append(pkt.seq)
        if self.last_arrival_us is None:
            self.first_arrival_us = now_us
            gap = now_us - s_to_us(self.flow.start_s)
        else:
            gap = now_us - self.last_arrival_us
        if gap > self.max_gap_us:
            self.max_gap_us = gap
        self.last_arrival_us = now_us

    def close(self, end_us: int) -> None:
        """Count the trailing silence up to the flow's nominal end as a gap."""
        tail_ref = self.last_arrival_us
        if tail_ref is None:
            tail_ref = s_to_us(self.flow.start_s)
        flow_end = s_to_us(self.flow.end_s)
        if flow_end > tail_ref:
            gap = min(end_us, flow_end) - tail_ref
            if gap > self.max_gap_us:
                self.max_gap_us = gap

    @property
    def lost(self) -> int:
        return self.sent - self.received


@dataclass(frozen=True)
class SwitchEvent:
    """Raw event a switch raises toward the controller."""

    kind: str  # packet-in | switch-join | switch-leave
    dpid: str
    port: int | None = None
    packet: Packet | None = None
    time_us: int = 0


class PacketNetwork:
    """Event-driven data plane for one scenario.

    ``controller`` is any object with on_packet_in(dpid, port, packet,
    now_us) and on_switch_event(event); both may mutate the network through
    the public methods below (zero-latency control channel — command-channel
    lag is modeled where commands are scheduled, not here).
    """

    def __init__(self, topology: ScenarioTopology, engine: Engine, *,
                 buffer_capacity: int = 10, gateway_app: str | None = None,
                 controller=None):
        self.topology = topology
        self.engine = engine
        self.controller = controller
        self.buffer_capacity = buffer_capacity

        self.switches: dict[str, dp.SwitchState] = {}
        for vn in topology.vns:
            for dpid in vn.switches:
                ports = {p: dp.PortState(p) for p in topology.switch_ports[dpid]}
                self.switches[dpid] = dp.SwitchState(dpid, ports, role="vn-switch",
                                                     app="learning")
        for gw in topology.gateways:
            ports = {p: dp.PortState(p) for p in topology.switch_ports[gw]}
            self.switches[gw] = dp.SwitchState(gw, ports, role="gateway",
                                               app=gateway_app)
        for br in topology.bridges:
            ports = {p: dp.PortState(p) for p in topology.switch_ports[br]}
            self.switches[br] = dp.SwitchState(br, ports, role="bridge", app="hub")

        self.links: list[LinkState] = []
        self.attachments: dict[tuple[str, int], tuple[str, int]] = {}
        self._link_peer: dict[tuple[int, tuple[str, int]], tuple[str, int]] = {}
        for idx, link in enumerate(topology.substrate_links):
            state = LinkState.from_spec(link.latency_ms, link.capacity_pps)
            self.links.append(state)
            if link.kind == "vlan-attach":
                continue  # VLAN legs are reached through the VLAN delivery path
            a = (link.a_node, link.a_port)
            b = (link.b_node, link.b_port)
            self.attachments[a] = ("link", idx)
            self.attachments[b] = ("link", idx)
            self._link_peer[(idx, a)] = b
            self._link_peer[(idx, b)] = a

        # per-VLAN: member -> (leg link index); delivery latency is
        # origin-leg + member-leg through the hub rack switch
        self._vlan_leg: dict[int, dict[tuple[str, int], int]] = {}
        for vlan in topology.shared_vlans:
            legs: dict[tuple[str, int], int] = {}
            for idx, link in enumerate(topology.substrate_links):
                if link.kind != "vlan-attach" or link.b_node != vlan.hub_node:
                    continue
                member = (link.a_node, link.a_port)
                if member in vlan.members:
                    legs[member] = idx
            self._vlan_leg[vlan.vlan_id] = legs
            for member in vlan.members:
                self.attachments[member] = ("vlan", vlan.vlan_id)

        self.buffers: dict[tuple[str, int], dp.HypervisorBuffer] = {}
        self.flows: dict[str, FlowStats] = {}
        self.drops: Counter = Counter()
        self.unreachable: set[str] = set()

        engine.on("tick", self._on_tick)
        engine.on("arrival", self._on_arrival)
        engine.on("rule-expiry", self._on_rule_expiry)

    # -- traffic sources ---------------------------------------------------

    def add_flow(self, flow: HostFlow) -> None:
        if flow.flow_id in self.flows:
            raise ValueError(f"duplicate flow id {flow.flow_id}")
        self.flows[flow.flow_id] = FlowStats(flow)
        self.engine.schedule(flow.tick_us(0), "tick", (flow.flow_id, 0))

    def _on_tick(self, now_us: int, data) -> None:
        flow_id, k = data
        stats = self.flows[flow_id]
        flow = stats.flow
        stats.sent += 1
        pkt = Packet(flow_id, k, flow.src, flow.dst)
        self._send_out(flow.src, 0, pkt, now_us)
        if k + 1 < flow.packet_count:
            self.engine.schedule(flow.tick_us(k + 1), "tick", (flow_id, k + 1))

    # -- media -------------------------------------------------------------

    def _send_out(self, node: str, port: int, pkt: Packet, now_us: int) -> None:
        attach = self.attachments.get((node, port))
        if attach is None:
            self.drops["no-medium"] += 1
            return
        kind, ref = attach
        if kind == "link":
            state = self.links[ref]
            dest = self._link_peer[(ref, (node, port))]
            if transmit(self.engine, state, (node, port), now_us,
                        "arrival", (dest[0], dest[1], pkt)) is None:
                self.drops["removed-link"] += 1
            return
        vlan = self.topology.vlan_by_id(ref)
        legs = self._vlan_leg[ref]
        origin = (node, port)
        origin_leg = self.links[legs[origin]]
        if origin_leg.removed:
            origin_leg.dropped_on_removed += 1
            self.drops["removed-link"] += 1
            return
        dep = origin_leg.next_departure(origin, now_us)
        for member in vlan.members:
            if member == origin:
                continue
            member_leg = self.links[legs[member]]
            arrival = dep + origin_leg.latency_us + member_leg.latency_us
            self.engine.schedule(arrival, "arrival", (member[0], member[1], pkt))

    # -- arrivals ----------------------------------------------------------

    def _on_arrival(self, now_us: int, data) -> None:
        node, port, pkt = data
        sw = self.switches.get(node)
        if sw is None:
            # host endpoint
            if pkt.dst == node:
                self.flows[pkt.flow].record_arrival(pkt, now_us)
            return
        pstate = sw.ports.get(port)
        if pstate is None:
            self.drops["no-such-port"] += 1
            return
        if not pstate.admin_up:
            buf = self.buffers.get((node, port))
            if buf is None:
                buf = dp.HypervisorBuffer(self.buffer_capacity)
                self.buffers[(node, port)] = buf
            if not buf.offer(pkt):
                self.drops["buffer-overflow"] += 1
            return
        self._forward(sw, port, pkt, now_us)

    def _forward(self, sw: dp.SwitchState, in_port: int, pkt: Packet,
                 now_us: int) -> None:
        action = sw.table.lookup(in_port, pkt.src, pkt.dst)
        if isinstance(action, dp.Output):
            self._output(sw, action.port, pkt, now_us)
            return
        if isinstance(action, dp.Drop):
            self.drops["rule-drop"] += 1
            return
        # table miss
        if sw.app == "hub":
            self.flood(sw, in_port, pkt, now_us)
        elif sw.app == "learning" and self.controller is not None:
            self.controller.on_packet_in(sw.datapath_id, in_port, pkt, now_us)
        else:
            self.drops["miss-drop"] += 1

    def _output(self, sw: dp.SwitchState, out_port: int, pkt: Packet,
                now_us: int) -> None:
        pstate = sw.ports.get(out_port)
        if pstate is None:
            self.drops["no-such-port"] += 1
            return
        if not pstate.admin_up:
            self.drops["egress-down"] += 1
            return
        self._send_out(sw.datapath_id, out_port, pkt, now_us)

    def flood(self, sw: dp.SwitchState, in_port: int, pkt: Packet,
              now_us: int) -> None:
        for p in sw.port_numbers():
            if p != in_port and sw.ports[p].admin_up:
                self._send_out(sw.datapath_id, p, pkt, now_us)

    # -- control-plane entry points -----------------------------------------

    def apply_mod(self, dpid: str, mod: dp.FlowMod, now_us: int) -> int:
        sw = self.switches[dpid]
        count = dp.apply_flow_mod(sw, mod)
        if isinstance(mod, dp.Install) and mod.rule.expiry_us is not None:
            self.engine.schedule(mod.rule.expiry_us, "rule-expiry", (dpid,))
        return count

    def _on_rule_expiry(self, now_us: int, data) -> None:
        (dpid,) = data
        self.switches[dpid].table.remove_expired_at(now_us)

    def packet_out(self, dpid: str, out, in_port: int, pkt: Packet,
                   now_us: int) -> None:
        sw = self.switches[dpid]
        if out == dp.FLOOD:
            self.flood(sw, in_port, pkt, now_us)
        elif out is not None:
            self._output(sw, out, pkt, now_us)

    def set_interface_admin(self, dpid: str, port: int, up: bool,
                            now_us: int) -> list[Packet]:
        """Toggle an interface. Coming up flushes the hypervisor buffer into
        the switch, FIFO, at the current instant, ahead of any traffic
        scheduled afterwards."""
        sw = self.switches[dpid]
        pstate = sw.ports[port]
        if pstate.admin_up == up:
            return []
        pstate.admin_up = up
        if not up:
            return []
        buf = self.buffers.pop((dpid, port), None)
        if buf is None:
            return []
        flushed = buf.drain()
        for pkt in flushed:
            self.engine.schedule(now_us, "arrival", (dpid, port, pkt))
        return flushed

    def remove_link(self, index: int) -> None:
        self.links[index].removed = True

    def emit_switch_event(self, kind: str, dpid: str, now_us: int) -> None:
        if self.controller is not None:
            self.controller.on_switch_event(
                SwitchEvent(kind, dpid, time_us=now_us))

    # -- accounting ----------------------------------------------------------

    def close_flows(self, end_us: int) -> None:
        for stats in self.flows.values():
            stats.close(end_us)

    def total_buffered(self) -> int:
        return sum(len(b) for b in self.buffers.values())
