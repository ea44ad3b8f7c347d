import os
from pathlib import Path

import pytest
import yaml

from orbitnet import cli
from orbitnet.astro import parse_tle


def write_config(tmp_path, duration=2.0, volume=2e7, **sim):
    scenario = {
        "constellation": {"planes": 6, "sats_per_plane": 6,
                          "inclination_deg": 86.4, "altitude_km": 781.0},
        "cities": [
            {"id": "a", "name": "A", "latitude_deg": 10.0,
             "longitude_deg": 15.0, "population": 1.5e6},
            {"id": "b", "name": "B", "latitude_deg": -20.0,
             "longitude_deg": 40.0, "population": 2.5e6},
            {"id": "c", "name": "C", "latitude_deg": 45.0,
             "longitude_deg": -80.0, "population": 2.0e6},
        ],
    }
    config = {"scenario": scenario,
              "sim": {"duration": duration, "total_volume": volume, **sim}}
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


class TestRun:
    def test_outputs_written(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", str(cfg), "--seed", "5",
                       "--out", str(out)])
        assert rc == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "config.yaml", "series.csv", "summary.csv"]
        persisted = yaml.safe_load((out / "config.yaml").read_text())
        assert persisted["sim"]["seed"] == 5
        assert persisted["scenario"]["cities"][0]["id"] == "a"

    def test_seed_reproducibility_byte_for_byte(self, tmp_path):
        cfg = write_config(tmp_path)
        outs = []
        for name in ("o1", "o2"):
            out = tmp_path / name
            assert cli.main(["run", "--config", str(cfg), "--seed", "42",
                             "--routing", "ksnd", "--out", str(out)]) == 0
            outs.append(out)
        for fname in ("summary.csv", "series.csv", "config.yaml"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_rerun_from_persisted_config(self, tmp_path):
        cfg = write_config(tmp_path)
        first = tmp_path / "first"
        assert cli.main(["run", "--config", str(cfg), "--seed", "9",
                         "--out", str(first)]) == 0
        second = tmp_path / "second"
        assert cli.main(["run", "--config", str(first / "config.yaml"),
                         "--out", str(second)]) == 0
        assert (first / "summary.csv").read_bytes() == \
            (second / "summary.csv").read_bytes()
        assert (first / "series.csv").read_bytes() == \
            (second / "series.csv").read_bytes()

    def test_invalid_strategy_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, routing="sorcery")
        rc = cli.main(["run", "--config", str(cfg),
                       "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "routing" in capsys.readouterr().err

    def test_existing_out_dir_rejected(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "exists"
        out.mkdir()
        rc = cli.main(["run", "--config", str(cfg), "--out", str(out)])
        assert rc == 2

    def test_seed_env_fallback(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        monkeypatch.setenv(cli.SEED_ENV_VAR, "77")
        out = tmp_path / "env"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        persisted = yaml.safe_load((out / "config.yaml").read_text())
        assert persisted["sim"]["seed"] == 77

    def test_unknown_sim_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"sim": {"durationn": 3}}))
        rc = cli.main(["run", "--config", str(path),
                       "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_stress_preset_scales_volume(self, tmp_path):
        cfg = write_config(tmp_path, volume=1e7)
        out = tmp_path / "stress"
        assert cli.main(["run", "--config", str(cfg), "--stress",
                         "--out", str(out)]) == 0
        persisted = yaml.safe_load((out / "config.yaml").read_text())
        assert persisted["sim"]["total_volume"] == pytest.approx(1.5e7)
        assert persisted["sim"]["link_rate_bps"] == pytest.approx(0.14 * 1e7)


class TestSweep:
    def test_strategy_sweep_rows(self, tmp_path):
        cfg = write_config(tmp_path, duration=1.0)
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", "--config", str(cfg), "--axis", "strategy",
                       "--out", str(out)])
        assert rc == 0
        lines = (out / "sweep_summary.csv").read_text().splitlines()
        assert len(lines) == 4  # header + baseline + lsnd + ksnd
        assert (out / "run_000" / "summary.csv").exists()

    def test_refresh_axis_crosses_forwarding(self, tmp_path):
        cfg = write_config(tmp_path, duration=1.0)
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", "--config", str(cfg), "--axis", "refresh",
                       "--values", "1,30,60", "--out", str(out)])
        assert rc == 0
        lines = (out / "sweep_summary.csv").read_text().splitlines()
        assert len(lines) == 7  # 3 refresh values x 2 forwarding strategies

    def test_volume_default_is_ten_steps(self, tmp_path):
        cfg = write_config(tmp_path, duration=0.5)
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", "--config", str(cfg), "--axis", "volume",
                       "--out", str(out)])
        assert rc == 0
        lines = (out / "sweep_summary.csv").read_text().splitlines()
        assert len(lines) == 11

    def test_empty_values_rejected(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = cli.main(["sweep", "--config", str(cfg), "--axis", "volume",
                       "--values", ",", "--out", str(tmp_path / "s")])
        assert rc == 2

    def test_seeds_derived_from_master(self, tmp_path):
        cfg = write_config(tmp_path, duration=0.5)
        out = tmp_path / "sweep"
        assert cli.main(["sweep", "--config", str(cfg), "--axis", "strategy",
                         "--seed", "100", "--out", str(out)]) == 0
        rows = (out / "sweep_summary.csv").read_text().splitlines()[1:]
        seeds = [int(r.split(",")[2]) for r in rows]
        assert seeds == [100, 101, 102]


class TestTopoAnalyze:
    def test_small_run_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "topo"
        rc = cli.main(["topo-analyze", "--config", str(cfg),
                       "--duration", "5", "--out", str(out)])
        assert rc == 0
        link_lines = (out / "link_series.csv").read_text().splitlines()
        assert link_lines[0] == "t,builder,average_link_length_km,link_change_count"
        assert len(link_lines) == 1 + 5 * 2   # both builders
        pair_lines = (out / "pair_distances.csv").read_text().splitlines()
        assert len(pair_lines) == 1 + 6 * 2   # 3 cities -> 6 ordered pairs
        intervals = (out / "stability_intervals.csv").read_text().splitlines()
        assert intervals[0] == "builder,interval_index,length_snapshots"

    def test_single_builder(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "topo"
        rc = cli.main(["topo-analyze", "--config", str(cfg), "--duration", "3",
                       "--builder", "mindist", "--out", str(out)])
        assert rc == 0
        rows = (out / "link_series.csv").read_text().splitlines()[1:]
        assert all(r.split(",")[1] == "min_distance" for r in rows)

    def test_pair_distances_symmetric(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "topo"
        assert cli.main(["topo-analyze", "--config", str(cfg),
                         "--duration", "2", "--out", str(out)]) == 0
        dist = {}
        for row in (out / "pair_distances.csv").read_text().splitlines()[1:]:
            b, s, d, km = row.split(",")
            dist[(b, s, d)] = float(km)
        for (b, s, d), km in dist.items():
            assert km == pytest.approx(dist[(b, d, s)], rel=1e-9)


class TestGenConstellation:
    def test_iridium_defaults(self, tmp_path):
        out = tmp_path / "iridium.tle"
        rc = cli.main(["gen-constellation", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 66 * 3
        el = parse_tle("\n".join(lines[:3]))
        assert el.semi_major_axis == pytest.approx(7159.137, abs=0.01)

    def test_invalid_params_exit_2(self, tmp_path, capsys):
        rc = cli.main(["gen-constellation", "--planes", "0",
                       "--out", str(tmp_path / "x.tle")])
        assert rc == 2

    def test_round_trips_through_parser(self, tmp_path):
        out = tmp_path / "c.tle"
        assert cli.main(["gen-constellation", "--planes", "3",
                         "--sats-per-plane", "4", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        els = [parse_tle("\n".join(lines[i:i + 3]))
               for i in range(0, len(lines), 3)]
        assert len(els) == 12
        raans = sorted({round(e.raan, 6) for e in els})
        assert len(raans) == 3
