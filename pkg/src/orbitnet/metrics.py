"""Fold per-packet events into the run-level metric suite.

The engine produces a MetricsReport online; `summarize` rebuilds the
same report from a persisted event log, acting as the independent replay
check. Buffer occupancy, activity and utilization are accounted per
directed port (a satellite's ground port aggregates its GSLs, since it
is one transmitter).

Drop reasons: buffer_overflow, no_such_port, stale_route,
header_exhausted, link_down, no_route. A packet carries exactly one.
"""
import csv
import math
from dataclasses import dataclass, field

DROP_REASONS = ("buffer_overflow", "no_such_port", "stale_route",
                "header_exhausted", "link_down", "no_route")

# Event-log record kinds (the CSV schema is documented in the README).
LOG_COLUMNS = ("time_s", "event_kind", "packet_id", "node", "port", "reason")


class LogIntegrityError(ValueError):
    pass


@dataclass
class MetricsReport:
    launched: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    drop_counts: dict[str, int] = field(default_factory=dict)
    average_buffer_occupation: float = 0.0   # packets per occupied port
    average_active_satellites: float = 0.0   # forwarded >= 1 packet, per snapshot
    average_latency: float = 0.0             # s, delivered packets only
    average_link_utilization: float = 0.0    # bit/s, mean over transmitting ports
    # One row per snapshot window: (t, throughput_bps, drops_cum, mean_utilization_bps)
    series: list[tuple[float, float, int, float]] = field(default_factory=list)

    @property
    def delivered_fraction(self) -> float:
        return self.delivered / self.launched if self.launched else 0.0

    @property
    def dropped_fraction(self) -> float:
        return self.dropped / self.launched if self.launched else 0.0

    @property
    def in_flight_fraction(self) -> float:
        return self.in_flight / self.launched if self.launched else 0.0

    @property
    def drop_breakdown(self) -> dict[str, float]:
        if not self.dropped:
            return {}
        return {r: n / self.dropped for r, n in sorted(self.drop_counts.items())}


SUMMARY_COLUMNS = (
    "forwarding_strategy", "routing_strategy", "weight_refresh_s",
    "packets_launched", "delivered_fraction", "dropped_fraction",
    "in_flight_fraction",
    *(f"drop_frac_{r}" for r in DROP_REASONS),
    "average_buffer_occupation_packets", "average_active_satellites",
    "average_latency_s", "average_link_utilization_bps",
)


def summary_row(report: MetricsReport, config) -> dict[str, object]:
    breakdown = report.drop_breakdown
    row: dict[str, object] = {
        "forwarding_strategy": config.forwarding,
        "routing_strategy": config.routing,
        "weight_refresh_s": fmt(config.weight_refresh_interval),
        "packets_launched": report.launched,
        "delivered_fraction": fmt(report.delivered_fraction),
        "dropped_fraction": fmt(report.dropped_fraction),
        "in_flight_fraction": fmt(report.in_flight_fraction),
        "average_buffer_occupation_packets": fmt(report.average_buffer_occupation),
        "average_active_satellites": fmt(report.average_active_satellites),
        "average_latency_s": fmt(report.average_latency),
        "average_link_utilization_bps": fmt(report.average_link_utilization),
    }
    for reason in DROP_REASONS:
        row[f"drop_frac_{reason}"] = fmt(breakdown.get(reason, 0.0))
    return row


def fmt(x: float) -> str:
    """Deterministic numeric rendering for CSV output."""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def emit(report: MetricsReport, fmt_name: str, fh, config=None) -> None:
    """Write the report in one of the supported renderings."""
    if fmt_name == "summary_csv":
        if config is None:
            raise ValueError("summary_csv needs the run config for strategy columns")
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(summary_row(report, config))
    elif fmt_name == "series_csv":
        fh.write("t,throughput_bps,drops_cum,mean_utilization_bps\n")
        for t, thr, dcum, util in report.series:
            fh.write(f"{fmt(t)},{fmt(thr)},{dcum},{fmt(util)}\n")
    elif fmt_name == "console_table":
        rows = [
            ("packets launched", str(report.launched)),
            ("delivered fraction", f"{report.delivered_fraction:.4f}"),
            ("dropped fraction", f"{report.dropped_fraction:.4f}"),
            ("in-flight fraction", f"{report.in_flight_fraction:.4f}"),
            *((f"  drops: {r}", f"{f:.4f}") for r, f in report.drop_breakdown.items()),
            ("avg buffer occupation (pkts)", f"{report.average_buffer_occupation:.3f}"),
            ("avg active satellites", f"{report.average_active_satellites:.3f}"),
            ("avg latency (s)", f"{report.average_latency:.6f}"),
            ("avg link utilization (bit/s)", f"{report.average_link_utilization:.4e}"),
        ]
        width = max(len(k) for k, _ in rows)
        for k, v in rows:
            fh.write(f"{k:<{width}}  {v}\n")
    else:
        raise ValueError(f"unknown format {fmt_name!r}")


def parse_summary(fh) -> dict[str, str]:
    rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise LogIntegrityError(f"expected one summary row, found {len(rows)}")
    return rows[0]


def write_event_log(records: list[tuple], fh) -> None:
    fh.write(",".join(LOG_COLUMNS) + "\n")
    for time, kind, pkt, node, port, reason in records:
        fh.write(f"{fmt(time)},{kind},{'' if pkt is None else pkt},"
                 f"{node},{'' if port is None else port},{reason}\n")


def read_event_log(fh) -> list[tuple]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if tuple(header or ()) != LOG_COLUMNS:
        raise LogIntegrityError(f"unexpected log header {header}")
    records = []
    for i, row in enumerate(reader, start=2):
        if len(row) != len(LOG_COLUMNS):
            raise LogIntegrityError(f"log line {i}: expected {len(LOG_COLUMNS)} fields")
        t, kind, pkt, node, port, reason = row
        records.append((float(t), kind, int(pkt) if pkt else None, node,
                        int(port) if port != "" else None, reason))
    return records


def summarize(records: list[tuple], config) -> MetricsReport:
    """Rebuild a MetricsReport from an event log (replay oracle).

    The fold mirrors the engine's online accounting: launches, drops and
    deliveries keep the conservation identity; buffer occupancy is
    sampled at telemetry records; utilization and activity fold
    transmit/enqueue records per directed port and window.
    """
    interval = config.snapshot_interval
    n_windows = math.ceil(config.duration / interval - 1e-9)
    gs_ids = set(config.scenario.city_to_gs.values())

    launched = delivered = 0
    drop_counts: dict[str, int] = {}
    latency_sum = 0.0
    created_at: dict[int, float] = {}
    open_queue: dict[int, tuple] = {}   # packet -> (node, port) while buffered

    thr_bits = [0.0] * n_windows
    drops_per_win = [0] * n_windows
    util_bits: dict[int, dict[tuple, float]] = {}   # window -> port -> bits
    active: dict[int, set] = {}                      # window -> satellites
    buffer_counts: dict[tuple, int] = {}
    buffer_samples: list[float] = []

    def win(t: float) -> int:
        w = int(t / interval)
        return min(w, n_windows - 1) if n_windows else 0

    for rec in records:
        t, kind, pkt, node, port, reason = rec
        if kind == "launch":
            launched += 1
            created_at[pkt] = t
        elif kind == "enqueue":
            key = (node, port)
            buffer_counts[key] = buffer_counts.get(key, 0) + 1
            open_queue[pkt] = key
            w = int(t / interval)
            if node not in gs_ids and w < n_windows:
                active.setdefault(w, set()).add(node)
        elif kind == "transmit_done":
            key = open_queue.pop(pkt, None)
            if key is None:
                raise LogIntegrityError(f"transmit_done without enqueue: {rec}")
            buffer_counts[key] -= 1
            w = int(t / interval)
            if w < n_windows:
                util_bits.setdefault(w, {})
                util_bits[w][key] = util_bits[w].get(key, 0.0) + config.packet_size
        elif kind == "deliver":
            if pkt not in created_at:
                raise LogIntegrityError(f"deliver of unknown packet: {rec}")
            delivered += 1
            latency_sum += t - created_at[pkt]
            if n_windows:
                thr_bits[win(t)] += config.packet_size
        elif kind == "drop":
            drop_counts[reason] = drop_counts.get(reason, 0) + 1
            if n_windows:
                drops_per_win[win(t)] += 1
            key = open_queue.pop(pkt, None)
            if key is not None:     # flushed from a removed link's queue
                buffer_counts[key] -= 1
        elif kind == "telemetry_sample":
            # Mean packets per occupied buffer at the sampling instant.
            occupied = [c for c in buffer_counts.values() if c > 0]
            buffer_samples.append(
                sum(occupied) / len(occupied) if occupied else 0.0)
        # snapshot_apply / weight_refresh / arrival records carry no state.

    dropped = sum(drop_counts.values())
    util_series = []
    for w in range(n_windows):
        ports = util_bits.get(w, {})
        if ports:
            util_series.append(sum(ports.values()) / interval / len(ports))
        else:
            util_series.append(0.0)
    series = [(w * interval, thr_bits[w] / interval,
               sum(drops_per_win[: w + 1]), util_series[w])
              for w in range(n_windows)]
    act_avg = (sum(len(active.get(w, ())) for w in range(n_windows)) / n_windows
               if n_windows else 0.0)
    return MetricsReport(
        launched=launched,
        delivered=delivered,
        dropped=dropped,
        in_flight=launched - delivered - dropped,
        drop_counts=dict(sorted(drop_counts.items())),
        average_buffer_occupation=(sum(buffer_samples) / len(buffer_samples)
                                   if buffer_samples else 0.0),
        average_active_satellites=act_avg,
        average_latency=latency_sum / delivered if delivered else 0.0,
        average_link_utilization=(sum(util_series) / n_windows if n_windows else 0.0),
        series=series,
    )
