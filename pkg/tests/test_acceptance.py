"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers. The heavy network runs share
module-scoped fixtures so the suite stays within its time budget.

Run: pytest tests/test_acceptance.py -v -s
"""
import math
import random
import time
from importlib import resources

import networkx as nx
import pytest
import yaml

from orbitnet import metrics, routing, simcore, topology
from orbitnet.astro import propagate, separation
from orbitnet.constellation import (
    IRIDIUM_PARAMS,
    generate_walker_star,
    scenario_from_dict,
)
from orbitnet.routing import EARLY_DISCARDING, PORT_FORWARDING
from orbitnet.simcore import SimConfig, Simulation
from orbitnet.topology import build_los, build_min_distance, satellite_positions

BASE_VOLUME = 3e8
BASE_RATE = 0.14 * BASE_VOLUME
STRESS_VOLUME = 1.5 * BASE_VOLUME


def _default_scenario():
    text = (resources.files("orbitnet") / "data" / "default_scenario.yaml").read_text()
    return scenario_from_dict(yaml.safe_load(text))


@pytest.fixture(scope="module")
def scenario():
    return _default_scenario()


def table1_config(scenario, routing_strategy, *, duration=60.0, refresh=1.0,
                  forwarding=PORT_FORWARDING, volume=BASE_VOLUME,
                  stress=False, seed=7):
    return SimConfig(
        scenario=scenario,
        duration=duration,
        total_volume=STRESS_VOLUME if stress else volume,
        link_rate_bps=BASE_RATE,
        weight_refresh_interval=refresh,
        routing=routing_strategy,
        forwarding=forwarding,
        seed=seed,
    )


@pytest.fixture(scope="module")
def table2_runs(scenario):
    """Shared Table-I-parameter runs: {(routing, refresh, forwarding): report}."""
    runs = {}
    for strategy in ("baseline", "lsnd", "ksnd"):
        cfg = table1_config(scenario, strategy)
        runs[(strategy, 1.0, PORT_FORWARDING)] = simcore.run(cfg)
    for refresh in (30.0, 60.0):
        cfg = table1_config(scenario, "ksnd", refresh=refresh)
        runs[("ksnd", refresh, PORT_FORWARDING)] = simcore.run(cfg)
    return runs


def test_criterion_1_orbital_period():
    """Generated Iridium satellites orbit in 100.5 +/- 1.0 min and return
    to the epoch position within 1e-6 km."""
    t0 = time.time()
    els = generate_walker_star(IRIDIUM_PARAMS)
    worst = 0.0
    for el in els:
        assert abs(el.period / 60.0 - 100.5) <= 1.0
        p0 = propagate(el, 0.0)
        p1 = propagate(el, el.period)
        worst = max(worst, math.dist((p0.x, p0.y, p0.z), (p1.x, p1.y, p1.z)))
    assert worst < 1e-6
    print(f"\nPASS criterion 1: period {els[0].period/60:.3f} min, "
          f"max return error {worst:.2e} km ({time.time()-t0:.2f}s)")


def test_criterion_2_topology_structure(scenario):
    """Every satellite: exactly 2 intra-plane ISLs; seam satellites 1
    inter-plane ISL, others 2; no seam crossings."""
    t0 = time.time()
    for t in (0.0, 917.0, 2504.5):
        snap = build_min_distance(scenario, t)
        intra: dict[str, int] = {}
        inter: dict[str, int] = {}
        for link in snap.links.values():
            if link.kind == "gsl":
                continue
            pu = scenario.plane_of[link.u]
            pv = scenario.plane_of[link.v]
            if link.kind == "inter_plane":
                assert {pu, pv} != {0, scenario.num_planes - 1}, "seam crossed"
            for node in (link.u, link.v):
                bucket = intra if link.kind == "intra_plane" else inter
                bucket[node] = bucket.get(node, 0) + 1
        for el in scenario.satellites:
            sid = el.satellite_id
            assert intra.get(sid, 0) == 2
            plane = scenario.plane_of[sid]
            want = 1 if plane in (0, scenario.num_planes - 1) else 2
            assert inter.get(sid, 0) == want
    print(f"\nPASS criterion 2: structure verified at 3 epochs "
          f"({time.time()-t0:.2f}s)")


def test_criterion_3_stability_analytics(scenario):
    """3600 s, 1 s snapshots, both builders: LOS mean link length >=
    min-distance; >= 50% of snapshots without link changes; per-pair
    shortest distances differ < 5% between builders."""
    t0 = time.time()
    gs_ids = sorted(scenario.city_to_gs.values())
    md_prev = los_prev = None
    md_len, los_len = [], []
    md_changes = los_changes = 0
    steps = 3600
    pair_sums = {b: {} for b in ("md", "los")}
    for step in range(steps):
        t = float(step)
        pos = satellite_positions(scenario, t)
        md = build_min_distance(scenario, t, pos)
        los = build_los(los_prev, scenario, t, pos)
        md_len.append(sum(l.length for l in md.links.values()) / len(md.links))
        los_len.append(sum(l.length for l in los.links.values()) / len(los.links))
        if md_prev is not None:
            md_changes += 1 if topology.diff_snapshots(md_prev, md) == 0 else 0
            los_changes += 1 if topology.diff_snapshots(los_prev, los) == 0 else 0
        for snap, tag in ((md, "md"), (los, "los")):
            for src in gs_ids:
                dist = topology.shortest_path_lengths(snap, src)
                for dst in gs_ids:
                    if dst == src or dst not in dist:
                        continue
                    acc = pair_sums[tag].setdefault((src, dst), [0.0, 0])
                    acc[0] += dist[dst]
                    acc[1] += 1
        md_prev, los_prev = md, los

    mean_md = sum(md_len) / steps
    mean_los = sum(los_len) / steps
    assert mean_md <= mean_los, (mean_md, mean_los)
    zero_md = md_changes / (steps - 1)
    zero_los = los_changes / (steps - 1)
    assert zero_md >= 0.5 and zero_los >= 0.5, (zero_md, zero_los)
    worst_gap = 0.0
    for pair, (total, count) in pair_sums["md"].items():
        mean_a = total / count
        total_b, count_b = pair_sums["los"][pair]
        mean_b = total_b / count_b
        gap = abs(mean_a - mean_b) / mean_a
        worst_gap = max(worst_gap, gap)
    assert worst_gap < 0.05, worst_gap
    print(f"\nPASS criterion 3: mean length md={mean_md:.1f} <= los={mean_los:.1f} km; "
          f"zero-change fraction md={zero_md:.3f}, los={zero_los:.3f}; "
          f"max pair-distance gap {worst_gap*100:.2f}% ({time.time()-t0:.0f}s)")


def test_criterion_4_routing_oracles(scenario):
    """Dijkstra == Bellman-Ford on 200 random graphs; disjoint count ==
    node-split max-flow on 100 graphs; Iridium path sets disjoint, <= 4."""
    t0 = time.time()

    def bellman_ford(adj, src, dst):
        dist = {src: 0.0}
        for _ in range(len(adj)):
            changed = False
            for u in adj:
                if u in dist:
                    for v, w in adj[u]:
                        nd = dist[u] + w
                        if nd < dist.get(v, math.inf) - 1e-15:
                            dist[v] = nd
                            changed = True
            if not changed:
                break
        return dist.get(dst)

    rng = random.Random(4242)

    def rand_graph(n, p):
        adj = {f"n{i}": [] for i in range(n)}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < p:
                    w = rng.uniform(0.5, 9.0)
                    adj[f"n{i}"].append((f"n{j}", w))
                    adj[f"n{j}"].append((f"n{i}", w))
        return adj

    matched = 0
    for _ in range(200):
        n = rng.randint(4, 30)
        adj = rand_graph(n, 0.3)
        want = bellman_ford(adj, "n0", f"n{n-1}")
        got = routing.dijkstra(adj, "n0", f"n{n-1}")
        if want is None:
            assert got is None
        else:
            assert abs(got.weight - want) <= 1e-9
            matched += 1
    assert matched > 100

    flow_checked = 0
    for _ in range(100):
        n = rng.randint(4, 16)
        adj = rand_graph(n, 0.4)
        src, dst = "n0", f"n{n-1}"
        g = nx.DiGraph()
        for u in adj:
            if u not in (src, dst):
                g.add_edge(("i", u), ("o", u), capacity=1)
        for u in adj:
            if u == dst:
                continue
            for v, _ in adj[u]:
                if v == src:
                    continue
                g.add_edge(("o", u), ("i", v) if v != dst else ("i", dst),
                           capacity=1)
        if ("o", src) in g and ("i", dst) in g:
            expected = nx.maximum_flow_value(g, ("o", src), ("i", dst))
        else:
            expected = 0
        got = routing._min_cost_disjoint(adj, src, dst, k=n)
        assert len(got) == expected
        flow_checked += 1
    assert flow_checked == 100

    snap = build_min_distance(scenario, 0.0)
    weights = routing.compute_weights(snap, "lsnd")
    gs_ids = sorted(snap.gs_anchor)
    pair_count = 0
    for a in gs_ids:
        for b in gs_ids:
            if a == b:
                continue
            paths = routing.node_disjoint_paths(snap, a, b, 4, weights)
            assert 1 <= len(paths) <= 4
            interiors = [set(p.nodes[1:-1]) for p in paths]
            for i in range(len(interiors)):
                for j in range(i + 1, len(interiors)):
                    assert not (interiors[i] & interiors[j])
            pair_count += 1
    print(f"\nPASS criterion 4: 200 Dijkstra + 100 max-flow oracle matches; "
          f"{pair_count} Iridium pairs disjoint ({time.time()-t0:.1f}s)")


def test_criterion_5_selection_distribution():
    """1e5 seeded draws over weights [1,3] within 3 sigma of [0.75, 0.25]."""
    t0 = time.time()
    paths = [routing.Path(("a", "b"), 1.0), routing.Path(("a", "c"), 3.0)]
    rng = random.Random(777)
    n = 100_000
    hits = sum(1 for _ in range(n)
               if routing.select_path(paths, rng) is paths[0])
    freq = hits / n
    sigma = math.sqrt(0.75 * 0.25 / n)
    assert abs(freq - 0.75) <= 3 * sigma, (freq, 3 * sigma)
    print(f"\nPASS criterion 5: frequency {freq:.4f} within "
          f"{3*sigma:.4f} of 0.75 ({time.time()-t0:.2f}s)")


def test_criterion_6_table2_ordering(table2_runs):
    """delivered%(ksnd) > delivered%(lsnd) > delivered%(baseline);
    baseline >= 15 points below ksnd; active sats ksnd >= 1.5x baseline;
    link utilization ksnd < baseline."""
    base = table2_runs[("baseline", 1.0, PORT_FORWARDING)]
    lsnd = table2_runs[("lsnd", 1.0, PORT_FORWARDING)]
    ksnd = table2_runs[("ksnd", 1.0, PORT_FORWARDING)]
    assert ksnd.delivered_fraction > lsnd.delivered_fraction, \
        (ksnd.delivered_fraction, lsnd.delivered_fraction)
    assert lsnd.delivered_fraction > base.delivered_fraction
    assert ksnd.delivered_fraction - base.delivered_fraction >= 0.15
    assert ksnd.average_active_satellites >= 1.5 * base.average_active_satellites
    assert ksnd.average_link_utilization < base.average_link_utilization
    print(f"\nPASS criterion 6: delivered ksnd={ksnd.delivered_fraction:.4f} > "
          f"lsnd={lsnd.delivered_fraction:.4f} > base={base.delivered_fraction:.4f}; "
          f"active {ksnd.average_active_satellites:.1f} vs "
          f"{base.average_active_satellites:.1f}; "
          f"util {ksnd.average_link_utilization:.3e} < "
          f"{base.average_link_utilization:.3e}")


def test_criterion_7_refresh_insensitivity(table2_runs):
    """ksnd delivered%% varies < 2 points across refresh in {1, 30, 60} s."""
    fractions = [table2_runs[("ksnd", r, PORT_FORWARDING)].delivered_fraction
                 for r in (1.0, 30.0, 60.0)]
    spread = max(fractions) - min(fractions)
    assert spread < 0.02, fractions
    print(f"\nPASS criterion 7: ksnd delivered across refresh {fractions} "
          f"spread {spread*100:.3f} points")


@pytest.fixture(scope="module")
def stress_runs(scenario):
    runs = {}
    for fwd in (PORT_FORWARDING, EARLY_DISCARDING):
        cfg = table1_config(scenario, "ksnd", duration=60.0, refresh=30.0,
                            forwarding=fwd, stress=True)
        cfg.log_events = True
        sim = Simulation(cfg)
        runs[fwd] = (sim.run(), sim)
    return runs


def test_criterion_8_forwarding_contrast(stress_runs):
    """Stress + refresh 30: early-discarding stale packets die in fewer
    hops than port-forwarding's, and port forwarding delivers at least as
    large a fraction."""
    pf_rep, pf_sim = stress_runs[PORT_FORWARDING]
    ed_rep, ed_sim = stress_runs[EARLY_DISCARDING]

    def stale_hops(sim, reasons):
        hops = []
        hops_of = {}
        for rec in sim.records:
            if rec[1] == "enqueue":
                hops_of[rec[2]] = hops_of.get(rec[2], 0) + 1
            elif rec[1] == "drop" and rec[5] in reasons:
                hops.append(hops_of.get(rec[2], 0))
        return hops

    ed_hops = stale_hops(ed_sim, {"stale_route", "no_such_port",
                                  "header_exhausted"})
    pf_hops = stale_hops(pf_sim, {"stale_route", "no_such_port",
                                  "header_exhausted"})
    assert ed_hops, "stress run produced no stale drops under early discarding"
    ed_mean = sum(ed_hops) / len(ed_hops)
    pf_mean = sum(pf_hops) / len(pf_hops) if pf_hops else float("inf")
    assert ed_mean <= pf_mean, (ed_mean, pf_mean)
    assert pf_rep.delivered_fraction >= ed_rep.delivered_fraction, \
        (pf_rep.delivered_fraction, ed_rep.delivered_fraction)
    print(f"\nPASS criterion 8: stale-hop mean ed={ed_mean:.2f} <= "
          f"pf={pf_mean:.2f}; delivered pf={pf_rep.delivered_fraction:.4f} >= "
          f"ed={ed_rep.delivered_fraction:.4f}")


def test_criterion_9_conservation_and_determinism(scenario, table2_runs):
    """launched == delivered + dropped + in-flight on every run; identical
    (config, seed) give byte-identical outputs."""
    import io
    for rep in table2_runs.values():
        assert rep.launched == rep.delivered + rep.dropped + rep.in_flight
    cfg_a = table1_config(scenario, "ksnd", duration=5.0, volume=5e7)
    cfg_b = table1_config(scenario, "ksnd", duration=5.0, volume=5e7)
    sim_a, sim_b = Simulation(cfg_a), Simulation(cfg_b)
    rep_a, rep_b = sim_a.run(), sim_b.run()
    assert rep_a == rep_b
    bufs = []
    for rep, cfg in ((rep_a, cfg_a), (rep_b, cfg_b)):
        buf = io.StringIO()
        metrics.emit(rep, "summary_csv", buf, config=cfg)
        metrics.emit(rep, "series_csv", buf)
        bufs.append(buf.getvalue())
    assert bufs[0] == bufs[1]
    print("\nPASS criterion 9: conservation on all runs; byte-identical reruns")


def test_criterion_10_no_congestion_latency():
    """Hand-built 4-node line: end-to-end latency equals the analytic
    propagation + service sum within 1e-9 s."""
    from orbitnet.topology import Link, TopologySnapshot

    lengths = {("gs-a", "s1"): 1000.0, ("s1", "s2"): 2000.0,
               ("s2", "s3"): 3000.0, ("gs-b", "s3"): 1500.0}
    links = {}
    for (u, v), length in lengths.items():
        kind = "gsl" if u.startswith("gs") else "intra_plane"
        ports = (0, 4) if kind == "gsl" else (0, 1)
        link = Link(u, v, kind, length, *ports)
        links[link.key] = link
    snap = TopologySnapshot(0.0, frozenset({"gs-a", "gs-b", "s1", "s2", "s3"}),
                            links, "min_distance")
    scen = scenario_from_dict({
        "constellation": {"planes": 1, "sats_per_plane": 3,
                          "inclination_deg": 86.4, "altitude_km": 781.0},
        "cities": [
            {"id": "a", "name": "A", "latitude_deg": 0.0,
             "longitude_deg": 0.0, "population": 1e6},
            {"id": "b", "name": "B", "latitude_deg": 5.0,
             "longitude_deg": 5.0, "population": 1e6},
        ],
    })
    cfg = SimConfig(scenario=scen, duration=2.0, total_volume=2e6,
                    link_rate_bps=1e7, seed=1, log_events=True)
    sim = Simulation(cfg, topology_provider=lambda t, prev: snap)
    rep = sim.run()
    assert rep.delivered > 0 and rep.dropped == 0
    service = cfg.packet_size / cfg.link_rate
    c = 299792.458
    expected = {
        "gs-a": 4 * service + (1000.0 + 2000.0 + 3000.0 + 1500.0) / c,
        "gs-b": 4 * service + (1500.0 + 3000.0 + 2000.0 + 1000.0) / c,
    }
    launched_at, src_of = {}, {}
    worst = 0.0
    for rec in sim.records:
        if rec[1] == "launch":
            launched_at[rec[2]] = rec[0]
            src_of[rec[2]] = rec[3]
        elif rec[1] == "deliver":
            lat = rec[0] - launched_at[rec[2]]
            worst = max(worst, abs(lat - expected[src_of[rec[2]]]))
    assert worst <= 1e-9, worst
    print(f"\nPASS criterion 10: max latency error {worst:.2e} s")
