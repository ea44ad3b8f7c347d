"""Control-plane path computation and source-route header construction.

Three routing strategies share this machinery:

* baseline: single Dijkstra shortest path, link weight = length.
* lsnd: up to k node-disjoint paths, link weight = length.
* ksnd: up to k node-disjoint paths, link weight = (utilization EMA /
  link rate) * length, the utilization read through the telemetry relay
  delay.

Disjoint paths come from a node-splitting transformation solved with
successive shortest augmenting paths (Dijkstra on reduced costs), so the
returned set has maximum size up to k and minimum total weight for that
size. One path of the set is then sampled per packet with probability
proportional to 1 - weight/sum(weights), renormalized.
"""
import heapq
import math
from dataclasses import dataclass, replace

from .topology import PORT_GROUND, Link, TopologySnapshot

BASELINE = "baseline"
LSND = "lsnd"
KSND = "ksnd"
ROUTING_STRATEGIES = (BASELINE, LSND, KSND)

PORT_FORWARDING = "port_forwarding"
EARLY_DISCARDING = "early_discarding"
FORWARDING_STRATEGIES = (PORT_FORWARDING, EARLY_DISCARDING)

WEIGHT_EPSILON = 1e-6  # floor on the utilization ratio; keeps weights positive

DEFAULT_EMA_PERIODS = 9


class NoRouteError(Exception):
    """Source and destination anchors are not connected this snapshot."""


def ema_alpha(periods: int = DEFAULT_EMA_PERIODS) -> float:
    return 2.0 / (periods + 1)


@dataclass(frozen=True)
class LinkTelemetry:
    """Smoothed utilization of one directed link."""
    ema_utilization: float = 0.0
    last_sample_sim_time: float = math.nan
    alpha: float = ema_alpha()
    initialized: bool = False


def update_ema(tel: LinkTelemetry, sample: float, t: float) -> LinkTelemetry:
    """Fold one utilization sample into the EMA. The first sample seeds
    the average directly (no zero-bias warmup)."""
    if sample < 0:
        raise ValueError(f"negative utilization sample {sample}")
    if tel.initialized and t < tel.last_sample_sim_time:
        raise ValueError(
            f"sample time {t} precedes last sample {tel.last_sample_sim_time}")
    if not tel.initialized:
        value = sample
    else:
        value = tel.alpha * sample + (1.0 - tel.alpha) * tel.ema_utilization
    return replace(tel, ema_utilization=value, last_sample_sim_time=t,
                   initialized=True)


def link_weight(link: Link, ema_utilization: float | None, mode: str,
                link_rate: float | None = None) -> float:
    """Weight of one directed link under the given routing mode."""
    if link.length <= 0:
        raise ValueError(f"link {link.u}-{link.v} has non-positive length")
    if mode in (BASELINE, LSND):
        return link.length
    if mode == KSND:
        if ema_utilization is None or not link_rate or link_rate <= 0:
            raise ValueError("congestion-aware weight needs telemetry and link rate")
        ratio = ema_utilization / link_rate
        ratio = min(1.0, max(WEIGHT_EPSILON, ratio))
        return ratio * link.length
    raise ValueError(f"unknown routing mode {mode!r}")


def compute_weights(snapshot: TopologySnapshot, mode: str,
                    telemetry: dict[tuple[str, str], float] | None = None,
                    link_rate: float | None = None
                    ) -> dict[tuple[str, str], float]:
    """Directed weight for every satellite link in the snapshot.

    `telemetry` maps directed (u, v) pairs to EMA utilization in bit/s;
    missing entries read as idle.
    """
    weights = {}
    for link in snapshot.satellite_links():
        for u, v in ((link.u, link.v), (link.v, link.u)):
            ema = None
            if mode == KSND:
                ema = telemetry.get((u, v), 0.0) if telemetry else 0.0
            weights[(u, v)] = link_weight(link, ema, mode, link_rate)
    return weights


def _adjacency(snapshot: TopologySnapshot,
               weights: dict[tuple[str, str], float]
               ) -> dict[str, list[tuple[str, float]]]:
    adj: dict[str, list[tuple[str, float]]] = {}
    for link in snapshot.satellite_links():
        adj.setdefault(link.u, []).append((link.v, weights[(link.u, link.v)]))
        adj.setdefault(link.v, []).append((link.u, weights[(link.v, link.u)]))
    for nbrs in adj.values():
        nbrs.sort()
    return adj


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    weight: float

    @property
    def hop_count(self) -> int:
        return len(self.nodes) - 1


def dijkstra(adj: dict[str, list[tuple[str, float]]], src: str, dst: str
             ) -> Path | None:
    """Minimum-weight path; ties resolved toward the lexicographically
    smallest node sequence (the heap orders by (weight, node tuple))."""
    if src == dst:
        return Path((src,), 0.0)
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
    settled: set[str] = set()
    while heap:
        dist, nodes = heapq.heappop(heap)
        tail = nodes[-1]
        if tail == dst:
            return Path(nodes, dist)
        if tail in settled:
            continue
        settled.add(tail)
        for nbr, w in adj.get(tail, ()):
            if nbr not in settled:
                heapq.heappush(heap, (dist + w, nodes + (nbr,)))
    return None


def shortest_path(snapshot: TopologySnapshot, src_gs: str, dst_gs: str,
                  weights: dict[tuple[str, str], float]) -> Path:
    """Baseline route between the anchor satellites of two ground stations."""
    ingress, egress = _anchors(snapshot, src_gs, dst_gs)
    path = dijkstra(_adjacency(snapshot, weights), ingress, egress)
    if path is None:
        raise NoRouteError(f"{src_gs} -> {dst_gs}: anchors disconnected")
    return path


def _anchors(snapshot: TopologySnapshot, src_gs: str, dst_gs: str) -> tuple[str, str]:
    try:
        return snapshot.gs_anchor[src_gs], snapshot.gs_anchor[dst_gs]
    except KeyError as exc:
        raise NoRouteError(f"ground station {exc.args[0]} has no GSL") from None


def _min_cost_disjoint(adj: dict[str, list[tuple[str, float]]],
                       src: str, dst: str, k: int) -> list[tuple[str, ...]]:
    """Successive shortest augmenting paths on the node-split graph.

    Interior nodes get a capacity-1 internal arc, so augmenting paths
    are interior-node-disjoint; cost per unit is minimal at every flow
    value, which makes the final set minimum-weight among maximum-size
    sets of at most k paths.
    """
    # Node encoding: ('o', v) leaves v, ('i', v) enters v. Source uses
    # only its out side, the sink only its in side.
    source, sink = ("o", src), ("i", dst)
    arcs: dict[tuple, list] = {source: [], sink: []}

    def add_arc(a, b, cost):
        arcs.setdefault(a, [])
        arcs.setdefault(b, [])
        # [to, residual capacity, cost, reverse index, is_forward]
        arcs[a].append([b, 1, cost, len(arcs[b]), True])
        arcs[b].append([a, 0, -cost, len(arcs[a]) - 1, False])

    for v in sorted(adj):
        if v not in (src, dst):
            add_arc(("i", v), ("o", v), 0.0)
    for u in sorted(adj):
        tail = ("o", u)
        if u == dst:
            continue
        for v, w in adj[u]:
            if v == src:
                continue
            add_arc(tail, ("i", v) if v != dst else sink, w)

    potential: dict[tuple, float] = {n: 0.0 for n in arcs}
    flows = 0
    for _ in range(k):
        # Dijkstra on reduced costs. Rounding can leave residual arcs with
        # costs a hair below zero (weights are km-scale sums); clamping at
        # zero keeps the labels monotone and the loop finite.
        dist: dict[tuple, float] = {source: 0.0}
        prev: dict[tuple, tuple] = {}
        visited: set[tuple] = set()
        heap = [(0.0, source)]
        while heap:
            d, n = heapq.heappop(heap)
            if n in visited:
                continue
            visited.add(n)
            for idx, arc in enumerate(arcs[n]):
                to, cap, cost, _, _ = arc
                if cap <= 0 or to in visited:
                    continue
                rc = cost + potential[n] - potential[to]
                if rc < 0.0:
                    rc = 0.0
                nd = d + rc
                if nd < dist.get(to, math.inf):
                    dist[to] = nd
                    prev[to] = (n, idx)
                    heapq.heappush(heap, (nd, to))
        if sink not in visited:
            break
        d_sink = dist[sink]
        for n, d in dist.items():
            potential[n] += d if d < d_sink else d_sink
        n = sink
        while n != source:
            pn, idx = prev[n]
            arc = arcs[pn][idx]
            arc[1] -= 1
            arcs[n][arc[3]][1] += 1
            n = pn
        flows += 1

    # Decompose the flow into node sequences. Forward arcs carry flow
    # exactly when their residual capacity is exhausted; each walk
    # consumes its arcs so paths never overlap.
    paths: list[tuple[str, ...]] = []
    for _ in range(flows):
        seq = [src]
        n = source
        while n != sink:
            for arc in arcs[n]:
                if arc[4] and arc[1] == 0:
                    arc[1] = 1
                    n = arc[0]
                    break
            else:
                raise AssertionError("flow decomposition lost conservation")
            if n[0] == "o" and n[1] != seq[-1]:
                seq.append(n[1])
        seq.append(dst)
        paths.append(tuple(seq))
    return paths


def node_disjoint_paths(snapshot: TopologySnapshot, src_gs: str, dst_gs: str,
                        k: int, weights: dict[tuple[str, str], float]
                        ) -> list[Path]:
    """Up to k interior-node-disjoint paths between the two anchors,
    ordered by ascending weight."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ingress, egress = _anchors(snapshot, src_gs, dst_gs)
    if ingress == egress:
        return [Path((ingress,), 0.0)]
    adj = _adjacency(snapshot, weights)
    sequences = _min_cost_disjoint(adj, ingress, egress, k)
    if not sequences:
        raise NoRouteError(f"{src_gs} -> {dst_gs}: anchors disconnected")
    paths = []
    for seq in sequences:
        total = sum(weights[(a, b)] for a, b in zip(seq, seq[1:]))
        paths.append(Path(seq, total))
    paths.sort(key=lambda p: (p.weight, p.nodes))
    return paths


def selection_probabilities(paths: list[Path]) -> list[float]:
    """Per-path pick probability: raw score 1 - w_i/sum(w), renormalized
    (the raw scores sum to k-1; for k=2 they are already probabilities)."""
    if not paths:
        raise ValueError("no paths to select from")
    if len(paths) == 1:
        return [1.0]
    total = sum(p.weight for p in paths)
    scores = [1.0 - p.weight / total for p in paths]
    norm = sum(scores)
    return [s / norm for s in scores]


def select_path(paths: list[Path], rng) -> Path:
    """Sample one path with the load-balancing distribution."""
    probs = selection_probabilities(paths)
    if len(paths) == 1:
        return paths[0]
    r = rng.random()
    acc = 0.0
    for path, p in zip(paths, probs):
        acc += p
        if r < acc:
            return path
    return paths[-1]


@dataclass
class RouteHeader:
    """Source route carried by a packet, consumed by tail-pop.

    Port-forwarding entries are bare port indices; early-discarding
    entries are (port, expected next node) pairs. The final entry is the
    egress satellite's ground port (paired with the destination ground
    station id under early discarding).
    """
    strategy: str
    entries: list

    def __len__(self):
        return len(self.entries)


class HeaderError(Exception):
    pass


def _port_toward(snapshot: TopologySnapshot, u: str, v: str) -> int:
    for port, nbr in snapshot.sat_ports.get(u, {}).items():
        if nbr == v:
            return port
    raise HeaderError(f"no port on {u} toward {v} in this snapshot")


def build_header(path: Path, gsl_in: Link, gsl_out: Link, strategy: str,
                 snapshot: TopologySnapshot) -> RouteHeader:
    """Encode the path for the wire: one entry per satellite hop plus the
    final ground hop, stored so the next hop sits at the tail."""
    if strategy not in FORWARDING_STRATEGIES:
        raise HeaderError(f"unknown forwarding strategy {strategy!r}")
    if path.nodes[0] != gsl_in.v:
        raise HeaderError(
            f"path starts at {path.nodes[0]}, ingress GSL anchors {gsl_in.v}")
    if path.nodes[-1] != gsl_out.v:
        raise HeaderError(
            f"path ends at {path.nodes[-1]}, egress GSL anchors {gsl_out.v}")

    consume = []
    for u, v in zip(path.nodes, path.nodes[1:]):
        port = _port_toward(snapshot, u, v)
        consume.append(port if strategy == PORT_FORWARDING else (port, v))
    if strategy == PORT_FORWARDING:
        consume.append(PORT_GROUND)
    else:
        consume.append((PORT_GROUND, gsl_out.u))
    consume.reverse()
    return RouteHeader(strategy=strategy, entries=consume)


def decode_header(header: RouteHeader, ingress: str,
                  snapshot: TopologySnapshot) -> tuple[str, ...]:
    """Replay a header against a snapshot; returns the node sequence it
    would traverse (ending at a ground station). Test/diagnostic use."""
    nodes = [ingress]
    for entry in reversed(header.entries):
        here = nodes[-1]
        if header.strategy == PORT_FORWARDING:
            port = entry
            expected = None
        else:
            port, expected = entry
        if port == PORT_GROUND:
            stations = snapshot.sat_ground.get(here, [])
            if not stations:
                raise HeaderError(f"{here} has no ground link")
            nxt = expected if expected is not None else stations[0]
            if nxt not in stations:
                raise HeaderError(f"{here} has no GSL toward {nxt}")
        else:
            nxt = snapshot.sat_ports.get(here, {}).get(port)
            if nxt is None:
                raise HeaderError(f"{here} port {port} is empty")
            if expected is not None and nxt != expected:
                raise HeaderError(f"{here} port {port} leads to {nxt}, not {expected}")
        nodes.append(nxt)
    return tuple(nodes)
