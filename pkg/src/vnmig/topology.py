"""Substrate / virtual-network / mapping data model and scenario builders.

A scenario holds two isomorphic virtual networks (old and new), per-host
gateway switches that bridge layer 2 between each host and both VNs, the
shared VLANs used for attachment, and the switch/port mapping between the
VNs. Builders cover the same-aggregate gateway design and the
cross-aggregate variant that inserts transparent bridge nodes between
stitched links and the VN-side VLANs. Topologies are immutable after
construction and safe to share read-only.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .simengine import make_rng

DEFAULT_CAPACITY_PPS = 1_000_000

# port layout on every gateway switch
GW_HOST_PORT = 1
GW_OLD_VN_PORT = 2
GW_NEW_VN_PORT = 3

# reserved range that new-VN port numbers are drawn from; keeping it disjoint
# from the old VN's small numbers makes leak checks unambiguous
NEW_PORT_RANGE = range(101, 200)


@dataclass(frozen=True)
class VnShape:
    """Logical shape of one virtual network: switch names plus links."""

    switches: tuple[str, ...]
    links: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.switches:
            raise ValueError("a VN shape needs at least one switch")
        names = set(self.switches)
        if len(names) != len(self.switches):
            raise ValueError("duplicate switch names in VN shape")
        for a, b in self.links:
            if a not in names or b not in names:
                raise ValueError(f"link ({a},{b}) references unknown switch")
            if a == b:
                raise ValueError(f"self-link on {a}")

    def is_connected(self) -> bool:
        seen = {self.switches[0]}
        frontier = [self.switches[0]]
        adj: dict[str, list[str]] = {s: [] for s in self.switches}
        for a, b in self.links:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            cur = frontier.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == len(self.switches)

    @classmethod
    def single(cls) -> "VnShape":
        return cls(("s1",))

    @classmethod
    def line(cls, n: int) -> "VnShape":
        switches = tuple(f"s{i}" for i in range(1, n + 1))
        links = tuple((f"s{i}", f"s{i+1}") for i in range(1, n))
        return cls(switches, links)

    @classmethod
    def star(cls, n: int) -> "VnShape":
        """Hub s1 with n-1 leaves."""
        switches = tuple(f"s{i}" for i in range(1, n + 1))
        links = tuple(("s1", f"s{i}") for i in range(2, n + 1))
        return cls(switches, links)


@dataclass(frozen=True)
class LatencyTable:
    """Per-link-class latencies in milliseconds; all strictly positive."""

    host_gateway_ms: float = 1.0
    vlan_attach_ms: float = 1.0
    vn_link_ms: float = 5.0
    stitched_ms: float = 2.0
    vn_link_overrides: tuple = ()  # ((switch_a, switch_b), ms) pairs

    def __post_init__(self):
        for name in ("host_gateway_ms", "vlan_attach_ms", "vn_link_ms", "stitched_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for (_, _), ms in self.vn_link_overrides:
            if ms <= 0:
                raise ValueError("vn link override must be positive")

    @classmethod
    def uniform(cls, ms: float) -> "LatencyTable":
        return cls(host_gateway_ms=ms, vlan_attach_ms=ms, vn_link_ms=ms, stitched_ms=ms)

    def vn_link(self, a: str, b: str) -> float:
        for (x, y), ms in self.vn_link_overrides:
            if {x, y} == {a, b}:
                return ms
        return self.vn_link_ms


@dataclass(frozen=True)
class Link:
    """One substrate link: endpoint pair, latency, capacity."""

    a_node: str
    a_port: int
    b_node: str
    b_port: int
    latency_ms: float
    capacity_pps: float
    kind: str  # host | vn | stitched | vlan-attach

    def other_end(self, node: str, port: int) -> tuple[str, int]:
        if (node, port) == (self.a_node, self.a_port):
            return (self.b_node, self.b_port)
        if (node, port) == (self.b_node, self.b_port):
            return (self.a_node, self.a_port)
        raise KeyError(f"({node},{port}) is not an endpoint of this link")


@dataclass(frozen=True)
class SharedVlan:
    """Layer-2 broadcast domain attaching a gateway-side port to one VN
    switch port; the hub node models the rack switch that broadcasts."""

    vlan_id: int
    members: tuple[tuple[str, int], ...]
    hub_node: str


@dataclass(frozen=True)
class Aggregate:
    name: str
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class VirtualNetwork:
    name: str  # "old" | "new"
    switches: tuple[str, ...]
    links: tuple[tuple[tuple[str, int], tuple[str, int]], ...]


@dataclass(frozen=True)
class GatewayWiring:
    """How one gateway is cabled: its host, its three ports, the two VLANs,
    and the (switch, port) attachment point inside each VN."""

    gateway: str
    host: str
    old_vlan: int
    new_vlan: int
    old_attach: tuple[str, int]
    new_attach: tuple[str, int]
    host_port: int = GW_HOST_PORT
    old_vn_port: int = GW_OLD_VN_PORT
    new_vn_port: int = GW_NEW_VN_PORT


@dataclass
class VnMapping:
    """Bijection between old-VN and new-VN switches, with per-switch-pair
    port bijections."""

    switch_map: dict[str, str]
    port_map: dict[str, dict[int, int]]
    _inv_switch: dict[str, str] = field(init=False, repr=False)
    _inv_ports: dict[str, dict[int, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self._inv_switch = {v: k for k, v in self.switch_map.items()}
        self._inv_ports = {
            self.switch_map[dpid]: {np: op for op, np in pm.items()}
            for dpid, pm in self.port_map.items()
        }

    def to_new_switch(self, old_dpid: str) -> str:
        return self.switch_map[old_dpid]

    def to_new_port(self, old_dpid: str, old_port: int) -> int:
        return self.port_map[old_dpid][old_port]

    def to_old_switch(self, new_dpid: str) -> str:
        return self._inv_switch[new_dpid]

    def to_old_port(self, new_dpid: str, new_port: int) -> int:
        return self._inv_ports[new_dpid][new_port]

    def has_new_switch(self, dpid: str) -> bool:
        return dpid in self._inv_switch


@dataclass(frozen=True)
class ScenarioTopology:
    """Complete migration scenario: substrate, two VNs, gateways, hosts,
    shared VLANs and the old->new mapping. Immutable."""

    aggregates: tuple[Aggregate, ...]
    substrate_links: tuple[Link, ...]
    shared_vlans: tuple[SharedVlan, ...]
    vns: tuple[VirtualNetwork, VirtualNetwork]
    gateways: tuple[str, ...]
    hosts: tuple[str, ...]
    mapping: VnMapping
    gateway_wiring: tuple[GatewayWiring, ...]
    bridges: tuple[str, ...]
    hubs: tuple[str, ...]
    variant: str
    seed: int
    latencies: LatencyTable
    capacity_pps: float
    switch_ports: dict[str, tuple[int, ...]]
    vn_shape: VnShape

    @property
    def old_vn(self) -> VirtualNetwork:
        return self.vns[0]

    @property
    def new_vn(self) -> VirtualNetwork:
        return self.vns[1]

    def wiring_for(self, gateway: str) -> GatewayWiring:
        for w in self.gateway_wiring:
            if w.gateway == gateway:
                return w
        raise KeyError(gateway)

    def host_gateway(self, host: str) -> str:
        for w in self.gateway_wiring:
            if w.host == host:
                return w.gateway
        raise KeyError(host)

    def vlan_by_id(self, vlan_id: int) -> SharedVlan:
        for v in self.shared_vlans:
            if v.vlan_id == vlan_id:
                return v
        raise KeyError(vlan_id)

    def all_nodes(self) -> list[str]:
        nodes: list[str] = []
        for agg in self.aggregates:
            nodes.extend(agg.nodes)
        return nodes


def _adjacency(topo: ScenarioTopology) -> dict[str, list[tuple[str, float]]]:
    adj: dict[str, list[tuple[str, float]]] = {}
    for link in topo.substrate_links:
        adj.setdefault(link.a_node, []).append((link.b_node, link.latency_ms))
        adj.setdefault(link.b_node, []).append((link.a_node, link.latency_ms))
    return adj


def path_latency_ms(topo: ScenarioTopology, src: str, dst: str,
                    vn: str = "old") -> float:
    """One-way latency from src to dst along the given VN's side, i.e. the
    sum of per-hop latencies on the lowest-latency path that avoids the
    other VN's switches, hubs and bridges."""
    other = "new" if vn == "old" else "old"
    banned = set(topo.vns[1 if other == "new" else 0].switches)
    banned.update(n for n in topo.hubs if f".{other}." in n or n.endswith(f".{other}"))
    banned.update(n for n in topo.bridges if f".{other}." in n or n.endswith(f".{other}"))
    adj = _adjacency(topo)
    dist = {src: 0.0}
    heap = [(0.0, src)]
    while heap:
        d, cur = heapq.heappop(heap)
        if cur == dst:
            return d
        if d > dist.get(cur, float("inf")):
            continue
        for nxt, w in adj.get(cur, ()):
            if nxt in banned:
                continue
            nd = d + w
            if nd < dist.get(nxt, float("inf")):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    raise ValueError(f"no path from {src} to {dst} on the {vn} side")


def max_gateway_path_ms(topo: ScenarioTopology, vn: str = "old") -> float:
    """Largest gateway-to-gateway one-way latency through the given VN."""
    gws = topo.gateways
    if len(gws) < 2:
        # single redirect point: use the VN's deepest attachment round trip
        w = topo.gateway_wiring[0]
        return path_latency_ms(topo, w.gateway, w.old_attach[0] if vn == "old" else w.new_attach[0], vn)
    best = 0.0
    for i, a in enumerate(gws):
        for b in gws[i + 1:]:
            best = max(best, path_latency_ms(topo, a, b, vn))
    return best


def _build(host_count: int, vn_shape: VnShape, latencies: LatencyTable,
           seed: int, capacity_pps: float, cross_aggregate: bool) -> ScenarioTopology:
    if host_count < 2:
        raise ValueError(f"host_count must be >= 2, got {host_count}")
    if not vn_shape.is_connected():
        raise ValueError("vn_shape must be connected")

    n_sw = len(vn_shape.switches)
    hosts = tuple(f"h{i}" for i in range(1, host_count + 1))
    gateways = tuple(f"gw{i}" for i in range(1, host_count + 1))

    old_dpid = {s: f"old.{s}" for s in vn_shape.switches}
    new_dpid = {s: f"new.{s}" for s in vn_shape.switches}

    # port layout per VN switch: attachment ports first (one per gateway that
    # lands on the switch, in gateway order), then one port per incident link
    attach_switch = {i: vn_shape.switches[(i - 1) % n_sw] for i in range(1, host_count + 1)}
    old_ports: dict[str, list[int]] = {d: [] for d in old_dpid.values()}
    attach_port_old: dict[int, tuple[str, int]] = {}
    for i in range(1, host_count + 1):
        dpid = old_dpid[attach_switch[i]]
        port = len(old_ports[dpid]) + 1
        old_ports[dpid].append(port)
        attach_port_old[i] = (dpid, port)

    link_port_old: dict[tuple[str, str], int] = {}
    for a, b in vn_shape.links:
        for end, peer in ((a, b), (b, a)):
            dpid = old_dpid[end]
            port = len(old_ports[dpid]) + 1
            old_ports[dpid].append(port)
            link_port_old[(end, peer)] = port

    # new VN mirrors the structure; its port numbers model the substrate's
    # arbitrary interface assignment as a seeded draw from a reserved range
    rng = make_rng(seed, "new-vn-ports")
    new_ports: dict[str, list[int]] = {}
    port_map: dict[str, dict[int, int]] = {}
    for s in vn_shape.switches:
        od, nd = old_dpid[s], new_dpid[s]
        numbers = rng.sample(NEW_PORT_RANGE, len(old_ports[od]))
        new_ports[nd] = numbers
        port_map[od] = dict(zip(old_ports[od], numbers))

    mapping = VnMapping(
        switch_map={old_dpid[s]: new_dpid[s] for s in vn_shape.switches},
        port_map=port_map,
    )

    links: list[Link] = []
    vlans: list[SharedVlan] = []
    wiring: list[GatewayWiring] = []
    bridges: list[str] = []
    hubs: list[str] = []

    for i, (host, gw) in enumerate(zip(hosts, gateways), start=1):
        links.append(Link(host, 0, gw, GW_HOST_PORT,
                          latencies.host_gateway_ms, capacity_pps, "host"))

        old_att = attach_port_old[i]
        new_att = (mapping.to_new_switch(old_att[0]),
                   mapping.to_new_port(old_att[0], old_att[1]))

        for side, vlan_id, att, gw_port in (
            ("old", 1000 + i, old_att, GW_OLD_VN_PORT),
            ("new", 2000 + i, new_att, GW_NEW_VN_PORT),
        ):
            hub = f"hub.{side}.{i}"
            hubs.append(hub)
            if cross_aggregate:
                bridge = f"br.{side}.{i}"
                bridges.append(bridge)
                links.append(Link(gw, gw_port, bridge, 1,
                                  latencies.stitched_ms, capacity_pps, "stitched"))
                vlan_member = (bridge, 2)
            else:
                vlan_member = (gw, gw_port)
            members = (vlan_member, att)
            for leg_idx, member in enumerate(members, start=1):
                links.append(Link(member[0], member[1], hub, leg_idx,
                                  latencies.vlan_attach_ms, capacity_pps, "vlan-attach"))
            vlans.append(SharedVlan(vlan_id, members, hub))

        wiring.append(GatewayWiring(
            gateway=gw, host=host,
            old_vlan=1000 + i, new_vlan=2000 + i,
            old_attach=old_att, new_attach=new_att,
        ))

    vn_links_old = []
    vn_links_new = []
    for a, b in vn_shape.links:
        ms = latencies.vn_link(a, b)
        pa, pb = link_port_old[(a, b)], link_port_old[(b, a)]
        links.append(Link(old_dpid[a], pa, old_dpid[b], pb, ms, capacity_pps, "vn"))
        vn_links_old.append(((old_dpid[a], pa), (old_dpid[b], pb)))
        npa = mapping.to_new_port(old_dpid[a], pa)
        npb = mapping.to_new_port(old_dpid[b], pb)
        links.append(Link(new_dpid[a], npa, new_dpid[b], npb, ms, capacity_pps, "vn"))
        vn_links_new.append(((new_dpid[a], npa), (new_dpid[b], npb)))

    old_vn = VirtualNetwork("old", tuple(old_dpid[s] for s in vn_shape.switches),
                            tuple(vn_links_old))
    new_vn = VirtualNetwork("new", tuple(new_dpid[s] for s in vn_shape.switches),
                            tuple(vn_links_new))

    if cross_aggregate:
        host_side = list(hosts) + list(gateways)
        old_side = list(old_vn.switches) + [h for h in hubs if ".old." in h] \
            + [b for b in bridges if ".old." in b]
        new_side = list(new_vn.switches) + [h for h in hubs if ".new." in h] \
            + [b for b in bridges if ".new." in b]
        aggregates = (
            Aggregate("agg-hosts", tuple(host_side)),
            Aggregate("agg-old", tuple(old_side)),
            Aggregate("agg-new", tuple(new_side)),
        )
    else:
        everything = list(hosts) + list(gateways) + list(old_vn.switches) \
            + list(new_vn.switches) + hubs
        aggregates = (Aggregate("agg-main", tuple(everything)),)

    switch_ports: dict[str, tuple[int, ...]] = {}
    for d, ports in old_ports.items():
        switch_ports[d] = tuple(ports)
    for d, ports in new_ports.items():
        switch_ports[d] = tuple(ports)
    for gw in gateways:
        switch_ports[gw] = (GW_HOST_PORT, GW_OLD_VN_PORT, GW_NEW_VN_PORT)
    for br in bridges:
        switch_ports[br] = (1, 2)

    return ScenarioTopology(
        aggregates=aggregates,
        substrate_links=tuple(links),
        shared_vlans=tuple(vlans),
        vns=(old_vn, new_vn),
        gateways=gateways,
        hosts=hosts,
        mapping=mapping,
        gateway_wiring=tuple(wiring),
        bridges=tuple(bridges),
        hubs=tuple(hubs),
        variant="cross-aggregate" if cross_aggregate else "same-aggregate",
        seed=seed,
        latencies=latencies,
        capacity_pps=capacity_pps,
        switch_ports=switch_ports,
        vn_shape=vn_shape,
    )


def build_gateway_scenario(host_count: int, vn_shape: VnShape,
                           latencies: LatencyTable, seed: int,
                           capacity_pps: float = DEFAULT_CAPACITY_PPS) -> ScenarioTopology:
    """Same-aggregate design: each host sits behind its own gateway switch,
    which joins one shared VLAN into each VN."""
    return _build(host_count, vn_shape, latencies, seed, capacity_pps,
                  cross_aggregate=False)


def build_cross_aggregate_scenario(host_count: int, vn_shape: VnShape,
                                   latencies: LatencyTable, seed: int,
                                   capacity_pps: float = DEFAULT_CAPACITY_PPS) -> ScenarioTopology:
    """Three-aggregate variant: hosts, old VN and new VN live in distinct
    aggregates; a transparent two-port bridge node connects each gateway's
    stitched link to the VN-side shared VLAN."""
    return _build(host_count, vn_shape, latencies, seed, capacity_pps,
                  cross_aggregate=True)


def scale_vn_latencies(topo: ScenarioTopology, target_gw_path_ms: float) -> ScenarioTopology:
    """Rebuild the scenario so the largest gateway-to-gateway one-way
    latency equals the target (host links untouched). Used by RTT sweeps."""
    current = max_gateway_path_ms(topo, "old")
    factor = target_gw_path_ms / current
    lat = topo.latencies
    scaled = LatencyTable(
        host_gateway_ms=lat.host_gateway_ms,
        vlan_attach_ms=lat.vlan_attach_ms * factor,
        vn_link_ms=lat.vn_link_ms * factor,
        stitched_ms=lat.stitched_ms * factor,
        vn_link_overrides=tuple(((a, b), ms * factor) for (a, b), ms in lat.vn_link_overrides),
    )
    build = build_cross_aggregate_scenario if topo.variant == "cross-aggregate" \
        else build_gateway_scenario
    return build(len(topo.hosts), topo.vn_shape, scaled, topo.seed, topo.capacity_pps)


def validate(topo: ScenarioTopology) -> list[str]:
    """Structural invariant check; returns one diagnostic per violation."""
    diags: list[str] = []

    placement: dict[str, int] = {}
    for agg in topo.aggregates:
        for node in agg.nodes:
            placement[node] = placement.get(node, 0) + 1
    for vn in topo.vns:
        for sw in vn.switches:
            count = placement.get(sw, 0)
            if count != 1:
                diags.append(f"switch {sw} appears in {count} aggregates, expected exactly 1")

    for w in topo.gateway_wiring:
        ports = topo.switch_ports.get(w.gateway, ())
        if sorted(ports) != [GW_HOST_PORT, GW_OLD_VN_PORT, GW_NEW_VN_PORT]:
            diags.append(f"gateway {w.gateway} must expose exactly ports "
                         f"{GW_HOST_PORT},{GW_OLD_VN_PORT},{GW_NEW_VN_PORT}, has {ports}")

    old, new = topo.vns
    if len(old.switches) != len(new.switches):
        diags.append(f"VN switch counts differ: {len(old.switches)} vs {len(new.switches)}")
    if len(old.links) != len(new.links):
        diags.append(f"VN link counts differ: {len(old.links)} vs {len(new.links)}")

    smap = topo.mapping.switch_map
    for sw in old.switches:
        if sw not in smap:
            diags.append(f"old switch {sw} is not mapped to a new switch")
    mapped = set(smap.values())
    if len(mapped) != len(smap):
        diags.append("switch_map is not injective")
    for sw in new.switches:
        if sw not in mapped:
            diags.append(f"new switch {sw} has no old counterpart in the mapping")

    for od, pm in topo.mapping.port_map.items():
        ports = set(topo.switch_ports.get(od, ()))
        if set(pm) != ports:
            diags.append(f"port_map for {od} covers {sorted(pm)} but switch has {sorted(ports)}")
        if len(set(pm.values())) != len(pm):
            diags.append(f"port_map for {od} is not injective")

    old_edges = {frozenset((a[0], b[0])) for a, b in old.links}
    new_edges = set()
    for a, b in new.links:
        try:
            new_edges.add(frozenset((topo.mapping.to_old_switch(a[0]),
                                     topo.mapping.to_old_switch(b[0]))))
        except KeyError:
            diags.append(f"new link {a}-{b} touches an unmapped switch")
    if old_edges != new_edges and not any("unmapped" in d for d in diags):
        diags.append("VN graphs are not isomorphic under the switch mapping")

    for link in topo.substrate_links:
        if link.latency_ms <= 0:
            diags.append(f"link {link.a_node}:{link.a_port}-{link.b_node}:{link.b_port} "
                         f"has non-positive latency {link.latency_ms} ms")

    seen_members: dict[tuple[str, int], int] = {}
    for vlan in topo.shared_vlans:
        for member in vlan.members:
            if member in seen_members:
                diags.append(f"interface {member} belongs to VLANs "
                             f"{seen_members[member]} and {vlan.vlan_id}")
            else:
                seen_members[member] = vlan.vlan_id

    return diags
