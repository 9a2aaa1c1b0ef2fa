"""Flow-level packet simulation of the router fabric.

Every router owns exactly ``n_interfaces`` outgoing interfaces, each leading to
another router or to an outstation (real RTU or honeypot RTU). The master and
the attacker hang off the ingress router through access links that carry no
forwarding decision.

Two kinds of forwarding coexist:

* Suspicious traffic (``recon_probe``, ``dnp3_poll``, ``dnp3_command``) follows
  the per-router deception entry ``RoutingState.forwarding[r]``. That entry is
  what the defender's agents rewrite.
* Benign master traffic follows static shortest paths to its destination and
  is only affected by congestion drops.

All operations are pure functions of their arguments and an integer seed.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


class NodeKind(str, enum.Enum):
    ROUTER = "router"
    MASTER = "master"
    RTU_REAL = "rtu_real"
    RTU_POT = "rtu_pot"
    ATTACKER = "attacker"


class PacketKind(str, enum.Enum):
    RECON_PROBE = "recon_probe"
    DNP3_POLL = "dnp3_poll"
    DNP3_COMMAND = "dnp3_command"
    BENIGN = "benign"

    @property
    def suspicious(self) -> bool:
        return self is not PacketKind.BENIGN


class Fate(str, enum.Enum):
    DELIVERED_REAL = "delivered_real"
    DELIVERED_POT = "delivered_pot"
    DROPPED = "dropped"
    IN_TRANSIT = "in_transit"


class Scenario(str, enum.Enum):
    NONE = "none"
    CONGESTION = "congestion"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    name: str


@dataclass(frozen=True)
class TopologyConfig:
    n_routers: int = 4
    n_interfaces: int = 3
    n_real: int = 2
    n_pot: int = 2
    ingress_router: int = 0
    # Optional explicit wiring: (router_id, interface_index, node_id) triples.
    links: tuple[tuple[int, int, int], ...] | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "TopologyConfig":
        data = dict(data)
        if data.get("links") is not None:
            data["links"] = tuple(tuple(int(v) for v in link) for link in data["links"])
        return cls(**data)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[tuple[int, int, int], ...]
    n_routers: int
    n_interfaces: int
    ingress: dict[int, int]
    # out_port[r][i] -> neighbouring node id
    out_port: tuple[tuple[int, ...], ...]
    # static_next[r][dst] -> interface index along a shortest path (benign routing)
    static_next: tuple[dict[int, int], ...] = field(repr=False)

    def ids(self, kind: NodeKind) -> list[int]:
        return [n.id for n in self.nodes if n.kind is kind]

    @property
    def master(self) -> int:
        return self.ids(NodeKind.MASTER)[0]

    @property
    def attacker(self) -> int:
        return self.ids(NodeKind.ATTACKER)[0]

    @property
    def real_rtus(self) -> list[int]:
        return self.ids(NodeKind.RTU_REAL)

    @property
    def pots(self) -> list[int]:
        return self.ids(NodeKind.RTU_POT)

    def kind(self, node_id: int) -> NodeKind:
        return self.nodes[node_id].kind

    def to_dict(self) -> dict:
        return {
            "n_routers": self.n_routers,
            "n_interfaces": self.n_interfaces,
            "nodes": [{"id": n.id, "kind": n.kind.value, "name": n.name} for n in self.nodes],
            "links": [list(link) for link in self.links],
            "ingress": {str(k): v for k, v in sorted(self.ingress.items())},
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class RoutingState:
    forwarding: tuple[int, ...]
    drop_prob: tuple[float, ...]
    utilization: tuple[tuple[float, ...], ...]

    def with_forwarding(self, router: int, interface: int) -> "RoutingState":
        fwd = list(self.forwarding)
        fwd[router] = interface
        return replace(self, forwarding=tuple(fwd))


@dataclass(frozen=True)
class PacketRecord:
    src: int
    dst: int
    kind: PacketKind
    fate: Fate = Fate.IN_TRANSIT
    hop_count: int = 0
    looped: bool = False
    # (router, interface) pairs actually traversed
    hops: tuple[tuple[int, int], ...] = ()
    final_node: int | None = None
    # application payload (a DNP3 request for attacker traffic)
    payload: object = field(default=None, compare=False)


def _default_links(cfg: TopologyConfig, real: list[int], pots: list[int]) -> list[tuple[int, int, int]]:
    n_r, n_f = cfg.n_routers, cfg.n_interfaces
    edge_routers = [r for r in range(n_r) if r != cfg.ingress_router] or [cfg.ingress_router]
    attached: dict[int, list[int]] = {r: [] for r in range(n_r)}
    for i, rtu in enumerate(real):
        attached[edge_routers[i % len(edge_routers)]].append(rtu)
    for i, rtu in enumerate(pots):
        attached[edge_routers[i % len(edge_routers)]].append(rtu)
    links = []
    for r in range(n_r):
        ports = list(attached[r])
        if len(ports) > n_f:
            raise ConfigError(f"router {r} needs {len(ports)} RTU ports but has only {n_f} interfaces")
        offset = 1
        while len(ports) < n_f:
            ports.append((r + offset) % n_r)
            offset += 1
            if offset % n_r == 0:
                offset += 1
        links.extend((r, i, node) for i, node in enumerate(ports))
    return links


def build_topology(config: TopologyConfig | None = None) -> Topology:
    """Build and validate a topology; deterministic for a given config."""
    cfg = config or TopologyConfig()
    if cfg.n_routers < 2:
        raise ConfigError(f"n_routers must be >= 2, got {cfg.n_routers}")
    if cfg.n_interfaces < 2:
        raise ConfigError(f"n_interfaces must be >= 2 for rerouting, got {cfg.n_interfaces}")
    if cfg.n_real < 1 or cfg.n_pot < 1:
        raise ConfigError("need at least one real RTU and one honeypot RTU")
    if not 0 <= cfg.ingress_router < cfg.n_routers:
        raise ConfigError(f"ingress_router {cfg.ingress_router} out of range")

    nodes = [Node(r, NodeKind.ROUTER, f"R{r}") for r in range(cfg.n_routers)]
    nid = cfg.n_routers
    nodes.append(Node(nid, NodeKind.MASTER, "master"))
    nodes.append(Node(nid + 1, NodeKind.ATTACKER, "attacker"))
    nid += 2
    real = list(range(nid, nid + cfg.n_real))
    nodes.extend(Node(i, NodeKind.RTU_REAL, f"RTU{k + 1}") for k, i in enumerate(real))
    nid += cfg.n_real
    pots = list(range(nid, nid + cfg.n_pot))
    nodes.extend(Node(i, NodeKind.RTU_POT, f"POT{k + 1}") for k, i in enumerate(pots))
    n_nodes = len(nodes)

    links = list(cfg.links) if cfg.links is not None else _default_links(cfg, real, pots)

    out_port: list[list[int | None]] = [[None] * cfg.n_interfaces for _ in range(cfg.n_routers)]
    for r, i, dst in links:
        if not (0 <= r < cfg.n_routers) or not (0 <= i < cfg.n_interfaces) or not (0 <= dst < n_nodes):
            raise ConfigError(f"link {(r, i, dst)} references an invalid router, interface or node")
        kind = nodes[dst].kind
        if kind in (NodeKind.MASTER, NodeKind.ATTACKER):
            raise ConfigError(f"link {(r, i, dst)} points at an access-only node")
        if dst == r:
            raise ConfigError(f"link {(r, i, dst)} is a self loop")
        if out_port[r][i] is not None:
            raise ConfigError(f"router {r} interface {i} wired twice")
        out_port[r][i] = dst
    for r, ports in enumerate(out_port):
        if any(p is None for p in ports):
            raise ConfigError(f"router {r} does not have exactly {cfg.n_interfaces} outgoing interfaces")

    # master and attacker reach the fabric through the ingress router
    ingress = {cfg.n_routers: cfg.ingress_router, cfg.n_routers + 1: cfg.ingress_router}

    # Undirected connectivity over links and access links.
    adj: dict[int, set[int]] = {n.id: set() for n in nodes}
    for r, _, dst in links:
        adj[r].add(dst)
        adj[dst].add(r)
    for host, r in ingress.items():
        adj[host].add(r)
        adj[r].add(host)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != n_nodes:
        missing = sorted(set(range(n_nodes)) - seen)
        raise ConfigError(f"topology is disconnected; unreachable nodes {missing}")

    ports = tuple(tuple(p) for p in out_port)  # type: ignore[arg-type]
    static_next = tuple(_shortest_next(ports, r, real + pots, cfg.n_routers) for r in range(cfg.n_routers))
    for dst in real + pots:
        if dst not in static_next[cfg.ingress_router]:
            raise ConfigError(f"RTU {dst} is not reachable from the ingress router")

    return Topology(
        nodes=tuple(nodes),
        links=tuple(sorted(links)),
        n_routers=cfg.n_routers,
        n_interfaces=cfg.n_interfaces,
        ingress=ingress,
        out_port=ports,
        static_next=static_next,
    )


def _shortest_next(ports: Sequence[Sequence[int]], src: int, targets: Iterable[int], n_routers: int) -> dict[int, int]:
    """BFS over directed router links; first interface on a shortest path to each target."""
    first: dict[int, int] = {}
    seen = {src}
    queue: deque[tuple[int, int]] = deque()
    for i, nxt in enumerate(ports[src]):
        if nxt < n_routers:
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, i))
        elif nxt not in first:
            first[nxt] = i
    while queue:
        u, port0 = queue.popleft()
        for nxt in ports[u]:
            if nxt < n_routers:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, port0))
            elif nxt not in first:
                first[nxt] = port0
    return {t: first[t] for t in targets if t in first}


def shortest_path_routing(topology: Topology, target: int) -> RoutingState:
    """Forwarding that sends suspicious traffic along shortest paths to ``target``."""
    fwd = []
    for r in range(topology.n_routers):
        nxt = topology.static_next[r].get(target)
        fwd.append(0 if nxt is None else nxt)
    n_f = topology.n_interfaces
    return RoutingState(
        forwarding=tuple(fwd),
        drop_prob=(0.0,) * topology.n_routers,
        utilization=((0.0,) * n_f,) * topology.n_routers,
    )


def _fate_for(kind: NodeKind) -> Fate:
    return Fate.DELIVERED_POT if kind is NodeKind.RTU_POT else Fate.DELIVERED_REAL


def route_step(
    topology: Topology,
    routing: RoutingState,
    injected: Sequence[PacketRecord],
    rng_seed: int,
) -> list[PacketRecord]:
    """Resolve the fate of every injected packet hop by hop."""
    rng = np.random.default_rng(rng_seed)
    n_nodes = len(topology.nodes)
    n_r = topology.n_routers
    out: list[PacketRecord] = []
    for pkt in injected:
        if not (0 <= pkt.src < n_nodes and 0 <= pkt.dst < n_nodes):
            raise ValueError(f"packet references unknown node: {pkt}")
        node = topology.ingress.get(pkt.src, pkt.src)
        hops: list[tuple[int, int]] = []
        fate = Fate.IN_TRANSIT
        looped = False
        while fate is Fate.IN_TRANSIT:
            if rng.random() < routing.drop_prob[node]:
                fate = Fate.DROPPED
                break
            if pkt.kind.suspicious:
                iface = routing.forwarding[node]
            else:
                iface = topology.static_next[node][pkt.dst]
            hops.append((node, iface))
            node = topology.out_port[node][iface]
            if node >= n_r:
                fate = _fate_for(topology.nodes[node].kind)
            elif len(hops) > n_nodes:
                fate = Fate.DROPPED
                looped = True
        out.append(
            replace(
                pkt,
                fate=fate,
                hop_count=len(hops),
                looped=looped,
                hops=tuple(hops),
                final_node=node if fate is not Fate.DROPPED else None,
            )
        )
    return out


def congestion_update(
    routing: RoutingState,
    scenario: Scenario | str,
    rng_seed: int,
    packets: Sequence[PacketRecord] = (),
    drop_range: tuple[float, float] = (0.05, 0.3),
    capacity: float = 4.0,
) -> RoutingState:
    """Redraw per-router drop probabilities and recompute interface utilization."""
    scenario = Scenario(scenario)
    n_r = len(routing.forwarding)
    n_f = len(routing.utilization[0]) if routing.utilization else 0
    if scenario is Scenario.NONE:
        drop = (0.0,) * n_r
    else:
        lo, hi = drop_range
        rng = np.random.default_rng(rng_seed)
        drop = tuple(float(v) for v in rng.uniform(lo, hi, size=n_r))
    counts = np.zeros((n_r, n_f))
    for pkt in packets:
        for r, i in pkt.hops:
            counts[r, i] += 1
    util = np.minimum(counts / capacity, 1.0)
    return RoutingState(
        forwarding=routing.forwarding,
        drop_prob=drop,
        utilization=tuple(tuple(float(u) for u in row) for row in util),
    )


def load_topology_config(path: str | Path) -> TopologyConfig:
    data = json.loads(Path(path).read_text())
    return TopologyConfig.from_dict(data.get("topology", data))
