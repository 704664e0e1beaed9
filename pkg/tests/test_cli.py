"""End-to-end CLI tests: exit codes, file outputs, determinism, config merge."""

import json
import os

import pytest

from geopriv.cli import main
from conftest import city_geojson

import io

from geopriv.ingest import parse_population, write_traces_csv
from conftest import sample_city_records


@pytest.fixture()
def city_file(tmp_path):
    path = tmp_path / "city.geojson"
    path.write_text(json.dumps(city_geojson()))
    return str(path)


@pytest.fixture()
def traces_file(tmp_path, city_pop):
    records = sample_city_records(city_pop, 120, seed=13)
    buf = io.StringIO()
    write_traces_csv(records, buf)
    path = tmp_path / "traces.csv"
    path.write_text(buf.getvalue())
    return str(path)


def zones_file(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"id": "pz", "label": "private", "radius_m": 300.0},
                "geometry": {"type": "Point", "coordinates": [0.0, 0.0]},
            },
            {
                "type": "Feature",
                "properties": {"id": "dz", "label": "danger", "radius_m": 500.0},
                "geometry": {"type": "Point", "coordinates": [0.01, 0.01]},
            },
        ],
    }
    path = tmp_path / "zones.geojson"
    path.write_text(json.dumps(doc))
    return str(path)


class TestMaskCommand:
    def test_gaussian_end_to_end(self, tmp_path, city_file, traces_file):
        out = tmp_path / "masked.csv"
        code = main(
            [
                "mask",
                "--traces", traces_file,
                "--population", city_file,
                "--mechanism", "gaussian-skew",
                "--c", "250",
                "--am", "0.5",
                "--age-sidecar", self._sidecar(tmp_path),
                "--seed", "42",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "user_id,timestamp,lat,lon,mechanism,sigma_eff,displacement_m,k,risk"
        assert len(lines) == 121

    def _sidecar(self, tmp_path):
        path = tmp_path / "ages.csv"
        path.write_text("user_id,bracket\nu0000,young\nu0001,senior\n")
        return str(path)

    def test_missing_traces_flag_exit_1(self, capsys):
        assert main(["mask", "--mechanism", "redact-only", "--out", "x.csv"]) == 1
        assert "--traces" in capsys.readouterr().err

    def test_unreadable_input_exit_2(self, tmp_path, city_file):
        code = main(
            [
                "mask",
                "--traces", str(tmp_path / "missing.csv"),
                "--population", city_file,
                "--mechanism", "gaussian-skew",
                "--c", "100",
                "--out", str(tmp_path / "m.csv"),
            ]
        )
        assert code == 2

    def test_gaussian_requires_population(self, tmp_path, traces_file):
        code = main(
            [
                "mask",
                "--traces", traces_file,
                "--mechanism", "gaussian-skew",
                "--c", "100",
                "--out", str(tmp_path / "m.csv"),
            ]
        )
        assert code == 1

    def test_byte_identical_reruns(self, tmp_path, city_file, traces_file):
        out1 = tmp_path / "m1.csv"
        out2 = tmp_path / "m2.csv"
        flags = [
            "mask",
            "--traces", traces_file,
            "--population", city_file,
            "--mechanism", "gaussian-skew",
            "--c", "150",
            "--seed", "7",
        ]
        assert main(flags + ["--out", str(out1)]) == 0
        assert main(flags + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_laplace_needs_epsilon(self, tmp_path, traces_file):
        code = main(
            [
                "mask",
                "--traces", traces_file,
                "--mechanism", "planar-laplace",
                "--out", str(tmp_path / "m.csv"),
            ]
        )
        assert code == 1

    def test_redact_only_with_zones(self, tmp_path, traces_file):
        out = tmp_path / "m.csv"
        code = main(
            [
                "mask",
                "--traces", traces_file,
                "--mechanism", "redact-only",
                "--zones", zones_file(tmp_path),
                "--out", str(out),
            ]
        )
        assert code == 0
        assert out.exists()


class TestEvaluateCommand:
    def _mask(self, tmp_path, city_file, traces_file, mechanism="gaussian-skew"):
        masked = tmp_path / "masked.csv"
        flags = [
            "mask",
            "--traces", traces_file,
            "--population", city_file,
            "--mechanism", mechanism,
            "--seed", "3",
            "--out", str(masked),
        ]
        if mechanism == "gaussian-skew":
            flags += ["--c", "200"]
        else:
            flags += ["--epsilon", "0.02"]
        assert main(flags) == 0
        return str(masked)

    def test_report_schema_and_recomputability(self, tmp_path, city_file, traces_file):
        masked = self._mask(tmp_path, city_file, traces_file)
        report_path = tmp_path / "report.json"
        code = main(
            [
                "evaluate",
                "--masked", masked,
                "--synthesize-homes", "30",
                "--population", city_file,
                "--k-target", "5",
                "--seed", "3",
                "--out", str(report_path),
            ]
        )
        assert code == 0
        doc = json.loads(report_path.read_text())
        summary = doc["summary"]
        per_point = doc["per_point"]
        assert summary["n"] == len(per_point)
        ks = [p["k"] for p in per_point]
        assert summary["min_k"] == min(ks)
        assert summary["frac_k_ge_target"] == sum(1 for k in ks if k >= 5) / len(ks)
        assert summary["seed"] == 3
        for p in per_point:
            assert p["risk"] == 1.0 / p["k"]

    def test_k_target_changes_only_fraction(self, tmp_path, city_file, traces_file):
        masked = self._mask(tmp_path, city_file, traces_file)
        reports = {}
        for target in (5, 10):
            out = tmp_path / f"report{target}.json"
            assert main(
                [
                    "evaluate",
                    "--masked", masked,
                    "--synthesize-homes", "30",
                    "--population", city_file,
                    "--k-target", str(target),
                    "--seed", "3",
                    "--out", str(out),
                ]
            ) == 0
            reports[target] = json.loads(out.read_text())
        a, b = reports[5], reports[10]
        assert a["per_point"] == b["per_point"]
        keys = set(a["summary"]) - {"frac_k_ge_target", "k_target"}
        for key in keys:
            assert a["summary"][key] == b["summary"][key]
        assert a["summary"]["frac_k_ge_target"] >= b["summary"]["frac_k_ge_target"]

    def test_empty_masked_file_exit_1(self, tmp_path, city_file):
        masked = tmp_path / "empty.csv"
        masked.write_text("user_id,timestamp,lat,lon,mechanism,sigma_eff,displacement_m,k,risk\n")
        code = main(
            [
                "evaluate",
                "--masked", str(masked),
                "--synthesize-homes", "30",
                "--population", city_file,
                "--out", str(tmp_path / "r.json"),
            ]
        )
        assert code == 1

    def test_no_home_source_exit_1(self, tmp_path, city_file, traces_file):
        masked = self._mask(tmp_path, city_file, traces_file)
        code = main(["evaluate", "--masked", masked, "--out", str(tmp_path / "r.json")])
        assert code == 1

    def test_laplace_requires_epsilon_flag(self, tmp_path, city_file, traces_file):
        masked = self._mask(tmp_path, city_file, traces_file, mechanism="planar-laplace")
        base = [
            "evaluate",
            "--masked", masked,
            "--synthesize-homes", "30",
            "--population", city_file,
            "--out", str(tmp_path / "r.json"),
        ]
        assert main(base) == 1
        assert main(base + ["--epsilon", "0.02"]) == 0

    def test_plot_and_filled_csv(self, tmp_path, city_file, traces_file):
        masked = self._mask(tmp_path, city_file, traces_file)
        plot = tmp_path / "k.png"
        filled = tmp_path / "filled.csv"
        code = main(
            [
                "evaluate",
                "--masked", masked,
                "--synthesize-homes", "30",
                "--population", city_file,
                "--seed", "3",
                "--out", str(tmp_path / "r.json"),
                "--out-csv", str(filled),
                "--plot", str(plot),
            ]
        )
        assert code == 0
        assert plot.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        rows = filled.read_text().splitlines()[1:]
        assert all(row.split(",")[7] != "" for row in rows)  # k column filled


class TestHeatmapCommand:
    def test_single_mode(self, tmp_path, traces_file):
        out = tmp_path / "map.geojson"
        code = main(
            [
                "heatmap",
                "--traces", traces_file,
                "--mode", "single",
                "--user", "u0000",
                "--cell-size", "200",
                "--out", str(out),
            ]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["type"] == "FeatureCollection"

    def test_unknown_user_exit_1(self, tmp_path, traces_file):
        code = main(
            [
                "heatmap",
                "--traces", traces_file,
                "--mode", "single",
                "--user", "nobody",
                "--out", str(tmp_path / "m.geojson"),
            ]
        )
        assert code == 1

    def test_multi_mode_cells_meet_k_min(self, tmp_path, traces_file):
        out = tmp_path / "map.geojson"
        code = main(
            [
                "heatmap",
                "--traces", traces_file,
                "--mode", "multi",
                "--k-min", "2",
                "--cell-size", "400",
                "--out", str(out),
            ]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        for feature in doc["features"]:
            assert feature["properties"]["distinct_users"] >= 2

    def test_danger_zone_alerts_written(self, tmp_path, traces_file):
        out = tmp_path / "map.geojson"
        alerts = tmp_path / "alerts.csv"
        code = main(
            [
                "heatmap",
                "--traces", traces_file,
                "--mode", "multi",
                "--k-min", "1",
                "--zones", zones_file(tmp_path),
                "--out", str(out),
                "--alerts", str(alerts),
            ]
        )
        assert code == 0
        assert alerts.read_text().splitlines()[0] == "zone_id,user_id,timestamp"


class TestSimulateAndSweep:
    def test_simulate_writes_traces(self, tmp_path, city_file):
        out = tmp_path / "sim.csv"
        code = main(
            [
                "simulate",
                "--population", city_file,
                "--users", "5",
                "--infected", "2",
                "--duration-hours", "2",
                "--step-minutes", "20",
                "--seed", "1",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "user_id,timestamp,lat,lon"
        assert len(lines) == 1 + 5 * 6

    def test_simulate_deterministic(self, tmp_path, city_file):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(
                [
                    "simulate",
                    "--population", city_file,
                    "--users", "4",
                    "--duration-hours", "2",
                    "--seed", "5",
                    "--out", str(out),
                ]
            ) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def _simulate(self, tmp_path, city_file):
        out = tmp_path / "sim.csv"
        assert main(
            [
                "simulate",
                "--population", city_file,
                "--users", "30",
                "--infected", "3",
                "--duration-hours", "6",
                "--step-minutes", "15",
                "--seed", "2",
                "--out", str(out),
            ]
        ) == 0
        return str(out)

    def test_sweep_row_count_and_plot(self, tmp_path, city_file):
        traces = self._simulate(tmp_path, city_file)
        out = tmp_path / "sweep.csv"
        plot = tmp_path / "sweep.png"
        code = main(
            [
                "sweep",
                "--traces", traces,
                "--population", city_file,
                "--grid", "c=50,100,200,400",
                "--synthesize-homes", "30",
                "--n-infected", "3",
                "--d-max", "80",
                "--k-target", "5",
                "--seed", "2",
                "--out", str(out),
                "--plot", str(plot),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "parameter,median_k,frac_k_ge_target,precision,recall,f1,mean_displacement_m"
        assert len(lines) == 5
        assert plot.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_bad_grid_exit_1(self, tmp_path, city_file):
        traces = self._simulate(tmp_path, city_file)
        code = main(
            [
                "sweep",
                "--traces", traces,
                "--population", city_file,
                "--grid", "c=abc",
                "--synthesize-homes", "30",
                "--out", str(tmp_path / "s.csv"),
            ]
        )
        assert code == 1

    def test_grid_key_must_match_mechanism(self, tmp_path, city_file):
        traces = self._simulate(tmp_path, city_file)
        code = main(
            [
                "sweep",
                "--traces", traces,
                "--population", city_file,
                "--mechanism", "planar-laplace",
                "--grid", "c=50,100",
                "--synthesize-homes", "30",
                "--out", str(tmp_path / "s.csv"),
            ]
        )
        assert code == 1


class TestSynthesizeHomes:
    def test_writes_homes(self, tmp_path, city_file):
        out = tmp_path / "homes.csv"
        code = main(
            [
                "synthesize-homes",
                "--population", city_file,
                "--persons-per-point", "50",
                "--seed", "4",
                "--out", str(out),
            ]
        )
        assert code == 0
        assert out.read_text().splitlines()[0] == "id,lat,lon"


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path, city_file, traces_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("c=100\nseed=9\n")
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        base = [
            "mask",
            "--config", str(cfg),
            "--traces", traces_file,
            "--population", city_file,
            "--mechanism", "gaussian-skew",
        ]
        assert main(base + ["--out", str(out_a)]) == 0
        # same run but --c explicit: flag wins over config
        assert main(base + ["--c", "100", "--seed", "9", "--out", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_bad_config_line_exit_1(self, tmp_path, traces_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("not a pair\n")
        code = main(
            [
                "mask",
                "--config", str(cfg),
                "--traces", traces_file,
                "--mechanism", "redact-only",
                "--out", str(tmp_path / "m.csv"),
            ]
        )
        assert code == 1
