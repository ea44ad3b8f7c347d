"""Per-snapshot network graphs and their stability analytics.

Two builders are provided. The minimum-distance builder reselects every
link from scratch at each snapshot time: slot neighbors in the same
plane, the nearest satellite in each adjacent plane (never across the
seam), and the nearest visible satellite for every ground station. The
line-of-sight builder instead keeps every link of the previous snapshot
while it remains unobstructed and only rehomes the ones that drop.

Links are stored undirected; the simulation engine attaches one
transmission queue per direction. Satellite ports: 0=fore, 1=aft,
2=left plane, 3=right plane, 4=ground. The ground port may carry one
GSL per ground station; ISL ports are exclusive.
"""
import heapq
import logging
import math
from dataclasses import dataclass, field

from .astro import (
    EciPosition,
    ground_position,
    has_line_of_sight,
    propagate,
    separation,
)
from .constellation import Scenario

logger = logging.getLogger(__name__)

PORT_FORE = 0
PORT_AFT = 1
PORT_LEFT = 2
PORT_RIGHT = 3
PORT_GROUND = 4

MIN_DISTANCE = "min_distance"
LINE_OF_SIGHT = "line_of_sight"


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    u: str
    v: str
    kind: str        # intra_plane | inter_plane | gsl
    length: float    # km
    port_u: int
    port_v: int

    @property
    def key(self) -> tuple[str, str]:
        return (self.u, self.v) if self.u <= self.v else (self.v, self.u)


@dataclass
class TopologySnapshot:
    t: float
    nodes: frozenset[str]
    links: dict[tuple[str, str], Link]
    builder: str
    # Derived lookup tables, filled in __post_init__.
    sat_ports: dict[str, dict[int, str]] = field(default_factory=dict, repr=False)
    gs_anchor: dict[str, str] = field(default_factory=dict, repr=False)
    sat_ground: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ports: dict[str, dict[int, str]] = {}
        anchors: dict[str, str] = {}
        ground: dict[str, list[str]] = {}
        for key in sorted(self.links):
            link = self.links[key]
            if link.kind == "gsl":
                anchors[link.u] = link.v
                ground.setdefault(link.v, []).append(link.u)
            else:
                ports.setdefault(link.u, {})[link.port_u] = link.v
                ports.setdefault(link.v, {})[link.port_v] = link.u
        for sats in ground.values():
            sats.sort()
        self.sat_ports = ports
        self.gs_anchor = anchors
        self.sat_ground = ground

    def edge_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.links)

    def satellite_links(self):
        for key in sorted(self.links):
            link = self.links[key]
            if link.kind != "gsl":
                yield link


@dataclass
class StabilityReport:
    average_link_length: list[float]     # km, one entry per snapshot
    link_change_count: list[int]         # vs. previous snapshot; first is 0
    stability_intervals: list[int]       # lengths of equal-edge-set runs

    def summary(self) -> dict[str, float]:
        out = {}
        for name, series in (("avg_link_length", self.average_link_length),
                             ("link_changes", self.link_change_count),
                             ("stability_interval", self.stability_intervals)):
            n = len(series)
            mean = sum(series) / n
            out[f"{name}_mean"] = mean
            out[f"{name}_min"] = min(series)
            out[f"{name}_max"] = max(series)
            out[f"{name}_var"] = sum((x - mean) ** 2 for x in series) / n
        return out


def satellite_positions(scenario: Scenario, t: float) -> dict[str, EciPosition]:
    return {el.satellite_id: propagate(el, t) for el in scenario.satellites}


def _seam_crossing(scenario: Scenario, plane_a: int, plane_b: int) -> bool:
    if not scenario.seam_enabled or scenario.num_planes < 2:
        return False
    lo, hi = min(plane_a, plane_b), max(plane_a, plane_b)
    return lo == 0 and hi == scenario.num_planes - 1


def _intra_port(scenario: Scenario, u: str, v: str) -> int | None:
    """Port u should use toward same-plane neighbor v (fore=next slot)."""
    plane = scenario.plane_of[u]
    m = sum(1 for p in scenario.plane_of.values() if p == plane)
    su, sv = scenario.slot_of[u], scenario.slot_of[v]
    if sv == (su + 1) % m:
        return PORT_FORE
    if sv == (su - 1) % m:
        return PORT_AFT
    return None


def _inter_ports(scenario: Scenario, u: str, v: str) -> tuple[int, int]:
    """(port_u, port_v) for an inter-plane link; right faces plane+1."""
    n = scenario.num_planes
    if scenario.plane_of[v] == (scenario.plane_of[u] + 1) % n:
        return PORT_RIGHT, PORT_LEFT
    return PORT_LEFT, PORT_RIGHT


def _make_link(u: str, v: str, kind: str, length: float,
               port_u: int, port_v: int) -> Link:
    if u <= v:
        return Link(u, v, kind, length, port_u, port_v)
    return Link(v, u, kind, length, port_v, port_u)


class _PortLedger:
    """Tracks ISL port occupancy while a snapshot is assembled."""

    def __init__(self):
        self.used: set[tuple[str, int]] = set()

    def free(self, node: str, port: int) -> bool:
        return (node, port) not in self.used

    def take(self, node: str, port: int):
        if (node, port) in self.used:
            raise TopologyError(f"port {port} on {node} double-booked")
        self.used.add((node, port))


def _free_intra_port(ledger: _PortLedger, scenario: Scenario,
                     u: str, v: str) -> int | None:
    preferred = _intra_port(scenario, u, v)
    order = [preferred, PORT_FORE, PORT_AFT] if preferred is not None \
        else [PORT_FORE, PORT_AFT]
    for p in order:
        if ledger.free(u, p):
            return p
    return None


def build_min_distance(scenario: Scenario, t: float,
                       positions: dict[str, EciPosition] | None = None
                       ) -> TopologySnapshot:
    """Fresh snapshot: nearest-neighbor selection for every link class."""
    pos = positions if positions is not None else satellite_positions(scenario, t)
    by_plane: dict[int, list[str]] = {}
    for el in scenario.satellites:
        by_plane.setdefault(scenario.plane_of[el.satellite_id], []).append(el.satellite_id)
    for plane in by_plane.values():
        plane.sort(key=lambda s: scenario.slot_of[s])

    ledger = _PortLedger()
    links: dict[tuple[str, str], Link] = {}

    def add(link: Link):
        if link.key in links:
            return
        links[link.key] = link
        if link.kind != "gsl":
            ledger.take(link.u, link.port_u)
            ledger.take(link.v, link.port_v)

    # Intra-plane: each satellite's two nearest plane-mates. For uniform
    # circular planes these must be the slot neighbors; verified, since a
    # non-ring selection would signal corrupt element sets.
    intra_candidates: list[tuple[float, str, str]] = []
    uniform = scenario.params is not None
    for plane, sats in sorted(by_plane.items()):
        m = len(sats)
        if m < 2:
            continue
        for u in sats:
            ranked = sorted((separation(pos[u], pos[w]), w) for w in sats if w != u)
            for d, w in ranked[:2]:
                intra_candidates.append((d, *sorted((u, w))))
            if uniform and m > 3:
                slot_u = scenario.slot_of[u]
                chosen = {scenario.slot_of[w] for _, w in ranked[:2]}
                expected = {(slot_u + 1) % m, (slot_u - 1) % m}
                assert chosen == expected, (
                    f"plane {plane}: nearest in-plane of {u} are slots {chosen}, "
                    f"expected slot neighbors {expected}")
    for d, u, v in sorted(set(intra_candidates)):
        pu = _free_intra_port(ledger, scenario, u, v)
        pv = _free_intra_port(ledger, scenario, v, u)
        if pu is None or pv is None:
            continue
        add(_make_link(u, v, "intra_plane", d, pu, pv))

    # Inter-plane: nearest satellite in each adjacent plane, seam excluded.
    # Mutual selections collapse to one candidate; conflicting ones are
    # resolved shortest-first against the port budget.
    n = scenario.num_planes
    inter_candidates: set[tuple[float, str, str]] = set()
    if n >= 2:
        for plane, sats in sorted(by_plane.items()):
            for side in (-1, +1):
                other = (plane + side) % n
                if other == plane or _seam_crossing(scenario, plane, other):
                    continue
                pool = by_plane.get(other, [])
                if not pool:
                    continue
                for u in sats:
                    d, w = min((separation(pos[u], pos[w]), w) for w in pool)
                    inter_candidates.add((d, *sorted((u, w))))
    for d, u, v in sorted(inter_candidates):
        pu, pv = _inter_ports(scenario, u, v)
        if ledger.free(u, pu) and ledger.free(v, pv):
            add(_make_link(u, v, "inter_plane", d, pu, pv))

    # GSL: one per ground station, to its nearest visible satellite.
    sat_list = sorted(pos)
    for gs_id, loc in sorted(scenario.ground_stations):
        gpos = ground_position(loc, t)
        best = None
        for sid in sat_list:
            if not has_line_of_sight(gpos, pos[sid]):
                continue
            d = separation(gpos, pos[sid])
            if best is None or d < best[0]:
                best = (d, sid)
        if best is None:
            logger.warning("t=%s: no visible satellite for ground station %s", t, gs_id)
            continue
        add(Link(gs_id, best[1], "gsl", best[0], 0, PORT_GROUND))

    nodes = frozenset(sat_list) | {gid for gid, _ in scenario.ground_stations}
    snap = TopologySnapshot(t=t, nodes=nodes, links=links, builder=MIN_DISTANCE)
    _audit_connectivity(snap)
    return snap


def _node_position(scenario: Scenario, pos: dict[str, EciPosition],
                   node: str, t: float) -> EciPosition:
    if node in pos:
        return pos[node]
    return ground_position(scenario.gs_location[node], t)


def build_los(prev: TopologySnapshot | None, scenario: Scenario, t: float,
              positions: dict[str, EciPosition] | None = None
              ) -> TopologySnapshot:
    """Retain previous links that still have line of sight; rehome the rest.

    The first snapshot of a run (prev is None) falls back to the
    minimum-distance builder. Replacement links are required to be
    visible at creation.
    """
    if prev is None:
        snap = build_min_distance(scenario, t, positions)
        return TopologySnapshot(t=snap.t, nodes=snap.nodes, links=snap.links,
                                builder=LINE_OF_SIGHT)
    pos = positions if positions is not None else satellite_positions(scenario, t)

    ledger = _PortLedger()
    links: dict[tuple[str, str], Link] = {}
    orphans: list[tuple[str, int, str]] = []  # (node, port, kind) needing a new link

    for key in sorted(prev.links):
        old = prev.links[key]
        pa = _node_position(scenario, pos, old.u, t)
        pb = _node_position(scenario, pos, old.v, t)
        if has_line_of_sight(pa, pb):
            link = Link(old.u, old.v, old.kind, separation(pa, pb),
                        old.port_u, old.port_v)
            links[link.key] = link
            if link.kind != "gsl":
                ledger.take(link.u, link.port_u)
                ledger.take(link.v, link.port_v)
        else:
            if old.kind == "gsl":
                orphans.append((old.u, 0, "gsl"))
            else:
                orphans.append((old.u, old.port_u, old.kind))
                orphans.append((old.v, old.port_v, old.kind))

    by_plane: dict[int, list[str]] = {}
    for el in scenario.satellites:
        by_plane.setdefault(scenario.plane_of[el.satellite_id], []).append(el.satellite_id)
    for plane in by_plane.values():
        plane.sort()

    for node, port, kind in sorted(orphans):
        if kind == "gsl":
            gpos = ground_position(scenario.gs_location[node], t)
            best = None
            for sid in sorted(pos):
                if not has_line_of_sight(gpos, pos[sid]):
                    continue
                d = separation(gpos, pos[sid])
                if best is None or d < best[0]:
                    best = (d, sid)
            if best is None:
                logger.warning("t=%s: no visible satellite for ground station %s",
                               t, node)
                continue
            link = Link(node, best[1], "gsl", best[0], 0, PORT_GROUND)
            links[link.key] = link
            continue

        plane = scenario.plane_of[node]
        if kind == "intra_plane":
            pool = [w for w in by_plane[plane] if w != node]
        else:
            n = scenario.num_planes
            side = -1 if port == PORT_LEFT else +1
            other = (plane + side) % n
            if other == plane or _seam_crossing(scenario, plane, other):
                continue
            pool = by_plane.get(other, [])
        best = None
        for w in pool:
            if not has_line_of_sight(pos[node], pos[w]):
                continue
            if kind == "intra_plane":
                pw = _free_intra_port(ledger, scenario, w, node)
            else:
                _, pw = _inter_ports(scenario, node, w)
            if pw is None or not ledger.free(w, pw):
                continue
            d = separation(pos[node], pos[w])
            if best is None or d < best[0]:
                best = (d, w, pw)
        if best is None or not ledger.free(node, port):
            continue
        d, w, pw = best
        link = _make_link(node, w, kind, d, port, pw)
        if link.key in links:
            continue
        links[link.key] = link
        ledger.take(node, port)
        ledger.take(w, pw)

    snap = TopologySnapshot(t=t, nodes=prev.nodes, links=links, builder=LINE_OF_SIGHT)
    _audit_connectivity(snap)
    return snap


def diff_snapshots(a: TopologySnapshot, b: TopologySnapshot) -> int:
    """Number of link changes between snapshots (symmetric difference of
    endpoint pairs; length drift does not count)."""
    if a.nodes != b.nodes:
        raise TopologyError("snapshots cover different node sets")
    return len(a.edge_set() ^ b.edge_set())


def stability_series(snapshots: list[TopologySnapshot]) -> StabilityReport:
    """Fold a snapshot sequence into the stability analytics."""
    if not snapshots:
        raise TopologyError("need at least one snapshot")
    avg_len = []
    changes = [0]
    for snap in snapshots:
        if not snap.links:
            avg_len.append(0.0)
        else:
            avg_len.append(sum(l.length for l in snap.links.values()) / len(snap.links))
    intervals = []
    run = 1
    for prev, cur in zip(snapshots, snapshots[1:]):
        delta = diff_snapshots(prev, cur)
        changes.append(delta)
        if delta == 0:
            run += 1
        else:
            intervals.append(run)
            run = 1
    intervals.append(run)
    return StabilityReport(average_link_length=avg_len,
                           link_change_count=changes,
                           stability_intervals=intervals)


def shortest_path_lengths(snap: TopologySnapshot, source: str) -> dict[str, float]:
    """Dijkstra distances in km from one node over the whole graph (GSLs
    included); used by the ground-station distance analytics."""
    adj: dict[str, list[tuple[str, float]]] = {}
    for link in snap.links.values():
        adj.setdefault(link.u, []).append((link.v, link.length))
        adj.setdefault(link.v, []).append((link.u, link.length))
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, n = heapq.heappop(heap)
        if d > dist.get(n, math.inf):
            continue
        for w, length in adj.get(n, ()):
            nd = d + length
            if nd < dist.get(w, math.inf):
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def _audit_connectivity(snap: TopologySnapshot):
    """Diagnostic only: the seam can legitimately thin connectivity."""
    if not snap.links:
        return
    adj: dict[str, list[str]] = {}
    for link in snap.links.values():
        adj.setdefault(link.u, []).append(link.v)
        adj.setdefault(link.v, []).append(link.u)
    linked = set(adj)
    start = next(iter(sorted(linked)))
    seen = {start}
    stack = [start]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if seen != linked:
        logger.info("t=%s: snapshot graph not connected (%d of %d linked nodes reached)",
                    snap.t, len(seen), len(linked))


def write_snapshot_csv(snapshots: list[TopologySnapshot], fh):
    """One row per link: t, u, v, kind, length_km, port_u, port_v."""
    fh.write("t,u,v,kind,length_km,port_u,port_v\n")
    for snap in snapshots:
        for key in sorted(snap.links):
            link = snap.links[key]
            fh.write(f"{snap.t},{link.u},{link.v},{link.kind},"
                     f"{link.length:.6f},{link.port_u},{link.port_v}\n")
