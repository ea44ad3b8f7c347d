"""Deterministic discrete-event engine for the satellite network.

Model summary:

* Every link carries one FIFO transmission queue per direction, with the
  configured rate and a buffer sized for the maximum queuing delay.
  Transmission completions are computed at enqueue time (work-conserving
  FIFO), so the event heap only carries packet arrivals plus the
  periodic boundary events; queue drain is lazy.
* The real topology is rebuilt every snapshot interval. Links removed by
  a snapshot flush their queued packets (counted as link_down); new
  links stay inoperative for the link-switch delay.
* The controller (route computation) always sees the current topology,
  which it derives from the element sets, but reads link-utilization
  telemetry through the relay trip delay and refreshes that view only at
  the weight-refresh interval. Headers are built at packet launch from
  the controller's view; staleness reaches packets that are in flight
  when the topology changes.
* Packet arrivals at any ground station count as delivered (source
  routing is purely local; a wandering port-forwarded packet that
  reaches a ground port exits the network there). Misdeliveries are
  tracked separately as a diagnostic.

Identical (config, seed) produce bit-identical event logs and reports:
the event heap orders by (time, sequence) with sequence assigned in
deterministic insertion order, and the only randomness is the seeded
path-selection draw.
"""
import heapq
import math
import random
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from itertools import accumulate

from . import routing
from .astro import SPEED_OF_LIGHT_KM_S
from .constellation import Scenario
from .metrics import MetricsReport
from .routing import (
    BASELINE,
    DEFAULT_EMA_PERIODS,
    EARLY_DISCARDING,
    FORWARDING_STRATEGIES,
    KSND,
    PORT_FORWARDING,
    ROUTING_STRATEGIES,
    ema_alpha,
)
from .topology import (
    LINE_OF_SIGHT,
    MIN_DISTANCE,
    PORT_GROUND,
    TopologySnapshot,
    build_los,
    build_min_distance,
    satellite_positions,
)
from .traffic import LINEAR, STRATEGIES, gravity_vector, launch_phase, traffic_matrix

# Drop reasons (each dropped packet carries exactly one).
BUFFER_OVERFLOW = "buffer_overflow"
NO_SUCH_PORT = "no_such_port"
STALE_ROUTE = "stale_route"
HEADER_EXHAUSTED = "header_exhausted"
LINK_DOWN = "link_down"
NO_ROUTE = "no_route"

# Packet states.
IN_FLIGHT, DELIVERED, DROPPED = 0, 1, 2

# Event kinds, in processing-priority order at equal timestamps.
_EV_ARRIVAL, _EV_LAUNCH, _EV_TELEMETRY, _EV_SNAPSHOT, _EV_REFRESH = range(5)

_LOG_ORDER = {"launch": 0, "enqueue": 1, "transmit_done": 2, "arrival": 3,
              "deliver": 4, "drop": 5, "telemetry_sample": 6,
              "snapshot_apply": 7, "weight_refresh": 8}


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    scenario: Scenario
    duration: float
    snapshot_interval: float = 1.0
    weight_refresh_interval: float = 1.0
    total_volume: float = 3e8            # bit/s offered across all pairs
    link_rate_fraction: float = 0.14
    link_rate_bps: float | None = None   # overrides the fraction when set
    trip_delay: float = 0.350            # telemetry relay latency, s
    link_switch_delay: float = 0.250     # new-link outage, s
    forwarding: str = PORT_FORWARDING
    routing: str = BASELINE
    traffic_strategy: str = LINEAR
    topology_builder: str = MIN_DISTANCE
    seed: int = 0
    packet_size: float = 12000.0         # bits (1500 bytes)
    k_disjoint: int = 4
    ema_periods: int = DEFAULT_EMA_PERIODS
    max_queuing_delay: float = 0.050     # sizes the buffers
    log_events: bool = False

    def __post_init__(self):
        problems = []
        if self.duration < 0:
            problems.append("duration must be >= 0")
        if self.snapshot_interval <= 0:
            problems.append("snapshot_interval must be > 0")
        if self.weight_refresh_interval <= 0:
            problems.append("weight_refresh_interval must be > 0")
        if self.total_volume <= 0:
            problems.append("total_volume must be > 0")
        if not 0 < self.link_rate_fraction <= 1:
            problems.append("link_rate_fraction must be in (0, 1]")
        if self.trip_delay < 0 or self.link_switch_delay < 0:
            problems.append("delays must be >= 0")
        if self.forwarding not in FORWARDING_STRATEGIES:
            problems.append(
                f"forwarding {self.forwarding!r} not in {FORWARDING_STRATEGIES}")
        if self.routing not in ROUTING_STRATEGIES:
            problems.append(f"routing {self.routing!r} not in {ROUTING_STRATEGIES}")
        if self.traffic_strategy not in STRATEGIES:
            problems.append(
                f"traffic_strategy {self.traffic_strategy!r} not in {STRATEGIES}")
        if self.topology_builder not in (MIN_DISTANCE, LINE_OF_SIGHT):
            problems.append(f"unknown topology builder {self.topology_builder!r}")
        if self.packet_size <= 0:
            problems.append("packet_size must be > 0")
        if self.k_disjoint < 1:
            problems.append("k_disjoint must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def link_rate(self) -> float:
        if self.link_rate_bps is not None:
            return self.link_rate_bps
        return self.link_rate_fraction * self.total_volume


class Packet:
    __slots__ = ("id", "src_city", "dst_city", "dst_gs", "size", "entries",
                 "created_at", "hops", "state")

    def __init__(self, pid, src_city, dst_city, dst_gs, size, entries, created_at):
        self.id = pid
        self.src_city = src_city
        self.dst_city = dst_city
        self.dst_gs = dst_gs
        self.size = size
        self.entries = entries
        self.created_at = created_at
        self.hops = 0
        self.state = IN_FLIGHT


class PortQueue:
    """One directed transmission queue (the spec's port buffer)."""
    __slots__ = ("src", "dst", "port", "rate", "inv_rate", "capacity",
                 "prop_delay", "queued_bits", "busy_until", "pending",
                 "live_at", "win_bits", "ema", "ema_init", "ema_hist",
                 "sat_owner")

    def __init__(self, src, dst, port, rate, capacity, prop_delay, live_at,
                 sat_owner, hist_len):
        self.src = src
        self.dst = dst
        self.port = port
        self.rate = rate
        self.inv_rate = 1.0 / rate
        self.capacity = capacity
        self.prop_delay = prop_delay
        self.queued_bits = 0.0
        self.busy_until = 0.0
        self.pending = deque()
        self.live_at = live_at
        self.win_bits = {}
        self.ema = 0.0
        self.ema_init = False
        self.ema_hist = deque(maxlen=hist_len)
        self.sat_owner = sat_owner


class _Controller:
    """SDN control plane: current topology, delayed telemetry, route cache."""

    def __init__(self, config: SimConfig):
        self.routing = config.routing
        self.forwarding = config.forwarding
        self.k = config.k_disjoint
        self.link_rate = config.link_rate
        self.snapshot: TopologySnapshot | None = None
        self.telemetry_view: dict[tuple[str, str], float] = {}
        self.weights: dict[tuple[str, str], float] = {}
        self.cache: dict[tuple[str, str], tuple | None] = {}

    def on_snapshot(self, snap: TopologySnapshot):
        self.snapshot = snap
        self._rebuild()

    def on_refresh(self, view: dict[tuple[str, str], float]):
        self.telemetry_view = view
        self._rebuild()

    def _rebuild(self):
        self.cache = {}
        if self.snapshot is None:
            return
        self.weights = routing.compute_weights(
            self.snapshot, self.routing,
            telemetry=self.telemetry_view, link_rate=self.link_rate)

    def routes_for(self, src_gs: str, dst_gs: str):
        """Cached (header templates, cumulative pick probabilities) or None
        when the pair has no route under the current view."""
        key = (src_gs, dst_gs)
        hit = self.cache.get(key, _MISS)
        if hit is not _MISS:
            return hit
        snap = self.snapshot
        ingress = snap.gs_anchor.get(src_gs)
        egress = snap.gs_anchor.get(dst_gs)
        if ingress is None or egress is None:
            self.cache[key] = None
            return None
        try:
            if self.routing == BASELINE:
                paths = [routing.shortest_path(snap, src_gs, dst_gs, self.weights)]
            else:
                paths = routing.node_disjoint_paths(snap, src_gs, dst_gs,
                                                    self.k, self.weights)
        except routing.NoRouteError:
            self.cache[key] = None
            return None
        gsl_in = snap.links[_pair(src_gs, ingress)]
        gsl_out = snap.links[_pair(dst_gs, egress)]
        templates = [
            routing.build_header(p, gsl_in, gsl_out, self.forwarding, snap).entries
            for p in paths
        ]
        cum = list(accumulate(routing.selection_probabilities(paths)))
        entry = (templates, cum)
        self.cache[key] = entry
        return entry


_MISS = object()


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def default_topology_provider(scenario: Scenario, builder: str):
    def provider(t: float, prev: TopologySnapshot | None) -> TopologySnapshot:
        pos = satellite_positions(scenario, t)
        if builder == LINE_OF_SIGHT:
            return build_los(prev, scenario, t, pos)
        return build_min_distance(scenario, t, pos)
    return provider


class Simulation:
    """One deterministic run. Construct, then call run() once."""

    def __init__(self, config: SimConfig, topology_provider=None):
        self.config = config
        scenario = config.scenario
        self.provider = topology_provider or default_topology_provider(
            scenario, config.topology_builder)
        self.rng = random.Random(config.seed)
        self.controller = _Controller(config)

        self._interval = config.snapshot_interval
        self._inv_interval = 1.0 / config.snapshot_interval
        self._n_windows = math.ceil(config.duration * self._inv_interval - 1e-9)
        self._alpha = ema_alpha(config.ema_periods)
        self._capacity = config.link_rate * config.max_queuing_delay
        self._hist_len = int(config.trip_delay * self._inv_interval) + 3
        self._early = config.forwarding == EARLY_DISCARDING

        self._gs_set = set(scenario.city_to_gs.values())
        cities = scenario.cities
        vec = gravity_vector([c.population for c in cities], config.traffic_strategy)
        self.matrix = traffic_matrix(vec, vec, config.total_volume,
                                     [c.id for c in cities])
        self._pairs = []
        k = len(cities)
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                rate = self.matrix.rate(i, j)
                if rate <= 0:
                    continue
                period = config.packet_size / rate
                self._pairs.append((
                    cities[i].id, cities[j].id,
                    scenario.city_to_gs[cities[i].id],
                    scenario.city_to_gs[cities[j].id],
                    period,
                    launch_phase(i, j, k, period),
                ))

        self.snapshot: TopologySnapshot | None = None
        self.queues: dict[tuple[str, str], PortQueue] = {}
        self._heap: list = []
        self._seq = 0

        # Counters and series.
        self.launched = 0
        self.delivered = 0
        self.drop_counts: dict[str, int] = {}
        self.misdelivered = 0
        self._latency_sum = 0.0
        self._next_packet_id = 0
        n = self._n_windows
        self._thr_bits = [0.0] * n
        self._drops_win = [0] * n
        self._util_series = [0.0] * n
        self._buffer_samples: list[float] = []
        self._active_count = [0] * n
        self._sat_mark: dict[str, int] = {}
        self.records: list[tuple] = [] if config.log_events else None
        self._ran = False

    # -- event helpers -----------------------------------------------------

    def _push(self, time, kind, a=None, b=None):
        heapq.heappush(self._heap, (time, self._seq, kind, a, b))
        self._seq += 1

    def _log(self, time, kind, pkt_id, node, port, reason=""):
        if self.records is not None:
            self.records.append((time, kind, pkt_id, node, port, reason))

    # -- spec operations ----------------------------------------------------

    def enqueue(self, q: PortQueue, pkt: Packet, t: float) -> bool:
        """Admit a packet to a port buffer; schedules its far-end arrival.

        Returns False when the packet was dropped (overflow or link in
        its switch-over outage)."""
        records = self.records
        if t < q.live_at:
            self._drop(pkt, LINK_DOWN, t, q.src, q.port)
            return False
        pend = q.pending
        while pend and pend[0][0] <= t:
            comp, size2, p2 = pend.popleft()
            q.queued_bits -= size2
            if records is not None:
                records.append((comp, "transmit_done", p2.id, q.src, q.port, ""))
        size = pkt.size
        if q.queued_bits + size > q.capacity:
            self._drop(pkt, BUFFER_OVERFLOW, t, q.src, q.port)
            return False
        start = q.busy_until
        if start < t:
            start = t
        comp = start + size * q.inv_rate
        q.busy_until = comp
        q.queued_bits += size
        pend.append((comp, size, pkt))
        w = int(comp * self._inv_interval)
        q.win_bits[w] = q.win_bits.get(w, 0.0) + size
        if q.sat_owner:
            wn = int(t * self._inv_interval)
            if wn < self._n_windows and self._sat_mark.get(q.src) != wn:
                self._sat_mark[q.src] = wn
                self._active_count[wn] += 1
        pkt.hops += 1
        heapq.heappush(self._heap, (comp + q.prop_delay, self._seq,
                                    _EV_ARRIVAL, q.dst, pkt))
        self._seq += 1
        if records is not None:
            records.append((t, "enqueue", pkt.id, q.src, q.port, ""))
        return True

    def forward(self, node: str, pkt: Packet, t: float):
        """Consume the next header entry at a satellite and relay or drop."""
        entries = pkt.entries
        if not entries:
            self._drop(pkt, HEADER_EXHAUSTED, t, node, None)
            return
        entry = entries.pop()
        if self._early:
            port, expected = entry
        else:
            port, expected = entry, None
        if port == PORT_GROUND:
            ground = self.snapshot.sat_ground.get(node)
            if not ground:
                self._drop(pkt, NO_SUCH_PORT, t, node, port)
                return
            if expected is not None:
                if expected not in ground:
                    self._drop(pkt, STALE_ROUTE, t, node, port)
                    return
                target = expected
            else:
                target = pkt.dst_gs if pkt.dst_gs in ground else ground[0]
        else:
            nbr = self.snapshot.sat_ports.get(node, _EMPTY).get(port)
            if nbr is None:
                self._drop(pkt, NO_SUCH_PORT, t, node, port)
                return
            if expected is not None and nbr != expected:
                self._drop(pkt, STALE_ROUTE, t, node, port)
                return
            target = nbr
        self.enqueue(self.queues[(node, target)], pkt, t)

    # -- internals ----------------------------------------------------------

    def _drop(self, pkt: Packet, reason: str, t: float, node, port):
        pkt.state = DROPPED
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1
        if self._n_windows:
            w = int(t * self._inv_interval)
            if w >= self._n_windows:
                w = self._n_windows - 1
            self._drops_win[w] += 1
        if self.records is not None:
            self.records.append((t, "drop", pkt.id, node, port, reason))

    def _deliver(self, node: str, pkt: Packet, t: float):
        pkt.state = DELIVERED
        self.delivered += 1
        self._latency_sum += t - pkt.created_at
        if self._n_windows:
            w = int(t * self._inv_interval)
            if w >= self._n_windows:
                w = self._n_windows - 1
            self._thr_bits[w] += pkt.size
        if node != pkt.dst_gs:
            self.misdelivered += 1
        if self.records is not None:
            self.records.append((t, "deliver", pkt.id, node, None, ""))

    def _launch(self, pair_idx: int, t: float):
        src_city, dst_city, src_gs, dst_gs, period, _ = self._pairs[pair_idx]
        routes = self.controller.routes_for(src_gs, dst_gs)
        if routes is not None:
            templates, cum = routes
            if len(cum) > 1:
                idx = bisect_right(cum, self.rng.random())
                if idx >= len(cum):
                    idx = len(cum) - 1
            else:
                idx = 0
            pkt = Packet(self._next_packet_id, src_city, dst_city, dst_gs,
                         self.config.packet_size, list(templates[idx]), t)
            self._next_packet_id += 1
            self.launched += 1
            if self.records is not None:
                self.records.append((t, "launch", pkt.id, src_gs, None, ""))
            anchor = self.snapshot.gs_anchor.get(src_gs)
            if anchor is None:
                self._drop(pkt, NO_ROUTE, t, src_gs, None)
            else:
                self.enqueue(self.queues[(src_gs, anchor)], pkt, t)
        nxt = t + period
        if nxt < self.config.duration - 1e-12:
            self._push(nxt, _EV_LAUNCH, pair_idx)

    def apply_snapshot(self, t: float):
        """Swap in the topology for time t; flush removed links, create new
        ones (inoperative for the switch delay), update lengths."""
        new = self.provider(t, self.snapshot)
        old = self.snapshot
        cfg = self.config
        if old is not None:
            removed = sorted(old.links.keys() - new.links.keys())
            added = sorted(new.links.keys() - old.links.keys())
            persisted = old.links.keys() & new.links.keys()
            for key in removed:
                for u, v in (key, key[::-1]):
                    q = self.queues.pop((u, v))
                    pend = q.pending
                    while pend and pend[0][0] <= t:
                        comp, size2, p2 = pend.popleft()
                        self._log(comp, "transmit_done", p2.id, q.src, q.port)
                    for comp, size2, p2 in pend:
                        self._drop(p2, LINK_DOWN, t, q.src, q.port)
            live_at = t + cfg.link_switch_delay
            for key in added:
                self._create_queues(new.links[key], live_at)
            for key in sorted(persisted):
                link = new.links[key]
                delay = link.length / SPEED_OF_LIGHT_KM_S
                self.queues[(link.u, link.v)].prop_delay = delay
                self.queues[(link.v, link.u)].prop_delay = delay
        else:
            for key in sorted(new.links):
                self._create_queues(new.links[key], t)
        self.snapshot = new
        self.controller.on_snapshot(new)
        self._log(t, "snapshot_apply", None, "", None)

    def _create_queues(self, link, live_at):
        cfg = self.config
        delay = link.length / SPEED_OF_LIGHT_KM_S
        for src, dst, port in ((link.u, link.v, link.port_u),
                               (link.v, link.u, link.port_v)):
            self.queues[(src, dst)] = PortQueue(
                src, dst, port, cfg.link_rate, self._capacity, delay,
                live_at, src not in self._gs_set, self._hist_len)

    def sample_telemetry(self, t: float, w: int):
        """Close window w: per-queue utilization sample folded into the EMA,
        plus the buffer-occupancy and utilization series points."""
        alpha = self._alpha
        util_groups: dict[tuple[str, int], float] = {}
        buf_groups: dict[tuple[str, int], int] = {}
        for q in self.queues.values():
            bits = q.win_bits.pop(w, 0.0)
            sample = bits * self._inv_interval
            if q.ema_init:
                q.ema = alpha * sample + (1.0 - alpha) * q.ema
            else:
                q.ema = sample
                q.ema_init = True
            q.ema_hist.append((t, q.ema))
            key = (q.src, q.port)
            if bits:
                util_groups[key] = util_groups.get(key, 0.0) + bits
            pend = q.pending
            while pend and pend[0][0] <= t:
                comp, size2, p2 = pend.popleft()
                q.queued_bits -= size2
                self._log(comp, "transmit_done", p2.id, q.src, q.port)
            if pend:
                buf_groups[key] = buf_groups.get(key, 0) + len(pend)
        if w < self._n_windows:
            if util_groups:
                self._util_series[w] = (sum(util_groups.values())
                                        * self._inv_interval / len(util_groups))
            self._buffer_samples.append(
                sum(buf_groups.values()) / len(buf_groups) if buf_groups else 0.0)
        self._log(t, "telemetry_sample", None, "", None)

    def _refresh_weights(self, t: float):
        horizon = t - self.config.trip_delay + 1e-12
        view: dict[tuple[str, str], float] = {}
        for key, q in self.queues.items():
            for ts, ema in reversed(q.ema_hist):
                if ts <= horizon:
                    view[key] = ema
                    break
        self.controller.on_refresh(view)
        self._log(t, "weight_refresh", None, "", None)

    # -- main loop ----------------------------------------------------------

    def run(self) -> MetricsReport:
        if self._ran:
            raise RuntimeError("a Simulation instance runs once")
        self._ran = True
        cfg = self.config
        duration = cfg.duration

        self.apply_snapshot(0.0)
        self._refresh_weights(0.0)

        si = cfg.snapshot_interval
        k = 1
        while k * si <= duration + 1e-9:
            bt = k * si
            self._push(bt, _EV_TELEMETRY, k - 1)
            if bt < duration - 1e-9:
                self._push(bt, _EV_SNAPSHOT)
            k += 1
        ri = cfg.weight_refresh_interval
        r = 1
        while r * ri < duration - 1e-9:
            self._push(r * ri, _EV_REFRESH)
            r += 1
        for idx, pair in enumerate(self._pairs):
            if pair[5] < duration - 1e-12:
                self._push(pair[5], _EV_LAUNCH, idx)

        heap = self._heap
        gs_set = self._gs_set
        residual = []
        while heap:
            t, _, kind, a, b = heapq.heappop(heap)
            if t > duration:
                residual.append((t, 0, kind, a, b))
                break
            if kind == _EV_ARRIVAL:
                pkt = b
                if pkt.state != IN_FLIGHT:
                    continue
                if self.records is not None:
                    self.records.append((t, "arrival", pkt.id, a, None, ""))
                if a in gs_set:
                    self._deliver(a, pkt, t)
                else:
                    self.forward(a, pkt, t)
            elif kind == _EV_LAUNCH:
                self._launch(a, t)
            elif kind == _EV_TELEMETRY:
                self.sample_telemetry(t, a)
            elif kind == _EV_SNAPSHOT:
                self.apply_snapshot(t)
            else:
                self._refresh_weights(t)

        # Horizon: flush remaining completions for the log, then audit.
        for key in sorted(self.queues):
            q = self.queues[key]
            pend = q.pending
            while pend and pend[0][0] <= duration:
                comp, size2, p2 = pend.popleft()
                q.queued_bits -= size2
                self._log(comp, "transmit_done", p2.id, q.src, q.port)
        in_flight_ids = {ev[4].id for ev in heap + residual
                         if ev[2] == _EV_ARRIVAL and ev[4].state == IN_FLIGHT}
        dropped = sum(self.drop_counts.values())
        in_flight = self.launched - self.delivered - dropped
        if in_flight != len(in_flight_ids):
            raise AssertionError(
                f"conservation violated: launched={self.launched} "
                f"delivered={self.delivered} dropped={dropped} "
                f"residual={len(in_flight_ids)}")
        if self.records is not None:
            self.records.sort(key=lambda r: (r[0], _LOG_ORDER[r[1]],
                                             -1 if r[2] is None else r[2],
                                             r[3], -1 if r[4] is None else r[4]))
        return self._report(dropped, in_flight)

    def _report(self, dropped: int, in_flight: int) -> MetricsReport:
        n = self._n_windows
        cum = 0
        series = []
        for w in range(n):
            cum += self._drops_win[w]
            series.append((w * self._interval,
                           self._thr_bits[w] * self._inv_interval,
                           cum, self._util_series[w]))
        return MetricsReport(
            launched=self.launched,
            delivered=self.delivered,
            dropped=dropped,
            in_flight=in_flight,
            drop_counts=dict(sorted(self.drop_counts.items())),
            average_buffer_occupation=(
                sum(self._buffer_samples) / len(self._buffer_samples)
                if self._buffer_samples else 0.0),
            average_active_satellites=(sum(self._active_count) / n if n else 0.0),
            average_latency=(self._latency_sum / self.delivered
                             if self.delivered else 0.0),
            average_link_utilization=(sum(self._util_series) / n if n else 0.0),
            series=series,
        )


_EMPTY: dict = {}


def run(config: SimConfig, topology_provider=None) -> MetricsReport:
    """Execute one simulation run to completion."""
    return Simulation(config, topology_provider).run()
