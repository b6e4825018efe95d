import csv
import json

import numpy as np
import pytest

from risk_terrain.config import load_scenario
from risk_terrain.impact import GaussianImpactParams, ImpactKernel, build_kernel
from risk_terrain.main import main
from risk_terrain.terrain import NoFlyTerrain, RiskVolume, cumulative_risk_volume, load_acoustic_terrain

from conftest import FIXTURES


def _rows(path):
    lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture
def toy_run(tmp_path, write_scenario):
    out = tmp_path / "run"
    assert main(["terrain", "--scenario", str(write_scenario()), "--out", str(out), "--mesh"]) == 0
    return out


def test_kernel_command_prints_a_stable_hash(tmp_path, write_scenario, capsys):
    path = write_scenario()
    assert main(["kernel", "--scenario", str(path), "--out", str(tmp_path / "k1.vrtg")]) == 0
    first = capsys.readouterr().out.strip()
    assert main(["kernel", "--scenario", str(path), "--out", str(tmp_path / "k2.vrtg"), "--threads", "3"]) == 0
    assert capsys.readouterr().out.strip() == first
    assert len(first) == 64


def test_config_errors_exit_2_with_the_field_name(write_scenario, capsys):
    path = write_scenario(impact={"model": "gaussian"})
    assert main(["terrain", "--scenario", str(path)]) == 2
    assert "FATAL: impact.alpha: required" in capsys.readouterr().err


def test_malformed_oracle_settings_exit_2(tmp_path, write_scenario, capsys):
    path = write_scenario(oracle={"samples": "lots"})
    assert main(["oracle", "--scenario", str(path), "--out", str(tmp_path / "r.json")]) == 2
    assert "FATAL: oracle.samples: expected an integer" in capsys.readouterr().err


def test_terrain_writes_every_artifact(toy_run):
    names = {p.name for p in toy_run.iterdir()}
    assert "volume_toy.vrtg" in names
    assert "summary.json" in names
    assert "risk_terrain.log" in names
    for tag in ("1e-06", "1e-07", "1e-08"):
        assert f"terrain_toy_{tag}.vrtg" in names
        assert f"clearance_toy_{tag}.csv" in names
        assert f"terrain_toy_{tag}.obj" in names

    summary = json.loads((toy_run / "summary.json").read_text())
    assert [run["threshold"] for run in summary["runs"]] == [1e-6, 1e-7, 1e-8]
    counts = [run["excluded_voxels"] for run in summary["runs"]]
    assert counts == sorted(counts)


def test_clearance_csv_layout(toy_run):
    text = (toy_run / "clearance_toy_1e-08.csv").read_text()
    header = text.splitlines()[:5]
    summary = json.loads((toy_run / "summary.json").read_text())
    assert header[0] == f"# scenario_sha256 {summary['scenario_sha256']}"
    assert header[2] == "# airspace_ceiling_m 20"
    assert header[3] == "# regulatory_ceiling_m 122"
    assert header[4] == "x_m,y_m,ground_class,clearance_m,status"

    rows = _rows(toy_run / "clearance_toy_1e-08.csv")
    assert len(rows) == 400
    assert {r["status"] for r in rows} <= {"open", "restricted", "closed"}
    assert all(r["clearance_m"] == "" for r in rows if r["status"] == "closed")
    assert any(r["ground_class"] == "pedestrian" and r["status"] != "open" for r in rows)


def test_thread_count_does_not_change_any_output(tmp_path, write_scenario):
    path = write_scenario()
    one, three = tmp_path / "one", tmp_path / "three"
    assert main(["terrain", "--scenario", str(path), "--out", str(one), "--mesh", "--threads", "1"]) == 0
    assert main(["terrain", "--scenario", str(path), "--out", str(three), "--mesh", "--threads", "3"]) == 0
    for name in ("volume_toy.vrtg", "terrain_toy_1e-08.vrtg", "clearance_toy_1e-08.csv", "terrain_toy_1e-08.obj"):
        assert (one / name).read_bytes() == (three / name).read_bytes(), name


def test_threads_from_the_environment(monkeypatch, write_scenario, tmp_path, capsys):
    monkeypatch.setenv("RISK_TERRAIN_THREADS", "many")
    assert main(["kernel", "--scenario", str(write_scenario()), "--out", str(tmp_path / "k.vrtg")]) == 2
    assert "RISK_TERRAIN_THREADS" in capsys.readouterr().err


def test_two_scenarios_are_compared(tmp_path, write_scenario):
    a = write_scenario("busy")
    b = write_scenario("safer", failure={"lambda_per_hour": 1e-6})
    out = tmp_path / "both"
    assert main(["terrain", "--scenario", str(a), "--scenario", str(b), "--out", str(out)]) == 0
    assert (out / "busy" / "summary.json").exists()
    assert (out / "safer" / "summary.json").exists()

    report = json.loads((out / "comparison.json").read_text())
    assert report["reference"] == "busy"
    assert [s["label"] for s in report["scenarios"]] == ["busy", "safer"]
    # different failure rates never pair up, so only the reference carries differences
    assert all("difference_m" in run for run in report["scenarios"][0]["runs"])


def test_duplicate_labels_are_rejected(tmp_path, write_scenario, capsys):
    path = write_scenario()
    assert main(["terrain", "--scenario", str(path), "--scenario", str(path), "--out", str(tmp_path / "x")]) == 2
    assert "distinct labels" in capsys.readouterr().err


def test_kernel_cache_is_written_and_reused(tmp_path, write_scenario, caplog):
    path = write_scenario(output={"dir": "out/cached", "kernel_cache": "cache/kernel.vrtg"})
    assert main(["terrain", "--scenario", str(path)]) == 0
    assert (tmp_path / "cache" / "kernel.vrtg").exists()
    assert (tmp_path / "out" / "cached" / "summary.json").exists()

    caplog.set_level("INFO", logger="risk_terrain")
    assert main(["terrain", "--scenario", str(path)]) == 0
    assert "Using cached kernel" in caplog.text


def test_kernel_cache_is_rebuilt_when_kernel_settings_change(tmp_path, write_scenario, caplog):
    first = write_scenario("first", output={"dir": "out/first", "kernel_cache": "cache/kernel.vrtg"})
    assert main(["terrain", "--scenario", str(first)]) == 0

    second = write_scenario(
        "second",
        output={"dir": "out/second", "kernel_cache": "cache/kernel.vrtg"},
        kernel={"delta_m": 0.5, "half_extent_m": 10},
    )
    caplog.set_level("INFO", logger="risk_terrain")
    assert main(["terrain", "--scenario", str(second)]) == 0
    assert "does not match the scenario" in caplog.text
    assert "Using cached kernel" not in caplog.text

    cached = ImpactKernel.load(tmp_path / "cache" / "kernel.vrtg")
    assert (cached.delta_m, cached.half_extent_m, cached.probs.shape[-1]) == (0.5, 10.0, 11)
    cfg = load_scenario(second).variants()[0]
    volume = RiskVolume.load(tmp_path / "out" / "second" / "volume_second.vrtg")
    np.testing.assert_array_equal(volume.values, cumulative_risk_volume(cfg).values)


def test_clearance_command_groups_by_class(toy_run, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "reports"
    code = main([
        "clearance", "--volume", str(toy_run / "volume_toy.vrtg"),
        "--threshold", "1e-8", "--threshold", "1e-6", "--group-by-class", "--out", str(out),
    ])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["thresholds"]) == {"1e-06", "1e-08"}
    loose = report["thresholds"]["1e-06"]["pedestrian"]
    assert loose["cells"] > 0 and loose["min_m"] > 0
    strict = report["thresholds"]["1e-08"]["pedestrian"]
    # the toy airspace tops out at 20 m, below what a sidewalk needs at 1e-8
    assert strict["closed"] == strict["cells"]
    assert (out / "clearance_volume_toy_1e-08.csv").exists()
    assert (out / "clearance_volume_toy_summary.json").exists()


def test_no_exposure_leaves_only_buildings(tmp_path, write_scenario):
    (tmp_path / "bare.json").write_text(json.dumps({
        "extent": [0, 0, 40, 40],
        "buildings": [{"footprint": [[4, 30], [10, 30], [10, 36], [4, 36]], "height_m": 8}],
    }))
    out = tmp_path / "bare_out"
    assert main(["terrain", "--scenario", str(write_scenario(urban_model="bare.json")), "--out", str(out)]) == 0

    rows = _rows(out / "clearance_toy_1e-08.csv")
    restricted = [r for r in rows if r["status"] != "open"]
    assert len(restricted) == 9
    assert all(r["clearance_m"] == "10.0" for r in restricted)


def test_fuse_is_order_independent(toy_run, tmp_path, capsys):
    loose, strict = toy_run / "terrain_toy_1e-06.vrtg", toy_run / "terrain_toy_1e-08.vrtg"
    capsys.readouterr()
    assert main(["fuse", "--terrain", str(loose), "--terrain", str(strict), "--out", str(tmp_path / "ab.vrtg")]) == 0
    first = capsys.readouterr().out.strip()
    assert main(["fuse", "--terrain", str(strict), "--terrain", str(loose), "--out", str(tmp_path / "ba.vrtg")]) == 0
    assert capsys.readouterr().out.strip() == first

    fused = NoFlyTerrain.load(tmp_path / "ab.vrtg")
    np.testing.assert_array_equal(fused.excluded, NoFlyTerrain.load(strict).excluded)
    assert fused.kind == "fused"


def test_fuse_rejects_different_grids(toy_run, tmp_path, write_scenario, capsys):
    other = write_scenario(
        "coarse", grid={"origin": [0, 0, 1], "spacing": [2, 2, 2], "dims": [10, 10, 10], "ceiling_m": 20}
    )
    assert main(["terrain", "--scenario", str(other), "--out", str(tmp_path / "coarse")]) == 0
    code = main([
        "fuse", "--terrain", str(toy_run / "terrain_toy_1e-08.vrtg"),
        "--terrain", str(tmp_path / "coarse" / "terrain_coarse_1e-08.vrtg"), "--out", str(tmp_path / "f.vrtg"),
    ])
    assert code == 2
    assert "different grids" in capsys.readouterr().err


def test_fuse_imports_acoustic_zones(toy_run, tmp_path, capsys):
    risk = NoFlyTerrain.load(toy_run / "terrain_toy_1e-06.vrtg")
    acoustic = load_acoustic_terrain(FIXTURES / "acoustic_toy.json")
    code = main([
        "fuse", "--terrain", str(toy_run / "terrain_toy_1e-06.vrtg"),
        "--acoustic", str(FIXTURES / "acoustic_toy.json"), "--out", str(tmp_path / "fused.vrtg"),
    ])
    assert code == 0
    fused = NoFlyTerrain.load(tmp_path / "fused.vrtg")
    assert fused.kind == "fused"
    assert fused.count == int(np.count_nonzero(risk.excluded | acoustic.excluded))
    assert fused.count > max(risk.count, acoustic.count)
    assert sum(i.startswith("acoustic:") for i in fused.inputs) == 1

    assert main(["fuse", "--out", str(tmp_path / "empty.vrtg")]) == 2
    assert "at least one terrain" in capsys.readouterr().err


def test_export_writes_a_mesh(toy_run, tmp_path):
    out = tmp_path / "mesh" / "terrain.obj"
    assert main(["export", "--terrain", str(toy_run / "terrain_toy_1e-08.vrtg"), "--out", str(out)]) == 0
    assert out.read_text() == (toy_run / "terrain_toy_1e-08.obj").read_text()


def test_missing_and_corrupt_inputs_exit_3(toy_run, tmp_path, capsys):
    assert main(["export", "--terrain", str(tmp_path / "absent.vrtg"), "--out", str(tmp_path / "x.obj")]) == 3
    broken = tmp_path / "broken.vrtg"
    raw = bytearray((toy_run / "volume_toy.vrtg").read_bytes())
    raw[-1] ^= 0xFF
    broken.write_bytes(bytes(raw))
    assert main(["clearance", "--volume", str(broken), "--threshold", "1e-8"]) == 3
    assert "hash mismatch" in capsys.readouterr().err


def test_oracle_passes_for_a_fresh_kernel(tmp_path, write_scenario, capsys):
    path = write_scenario(oracle={"samples": 100000, "seed": 7, "altitudes": [10, 20]})
    report_path = tmp_path / "oracle.json"
    assert main(["oracle", "--scenario", str(path), "--out", str(report_path), "--threads", "2"]) == 0
    assert capsys.readouterr().out.strip() == "PASS"
    report = json.loads(report_path.read_text())
    assert report["result"] == "PASS"
    assert report["scenario_sha256"] == load_scenario(path).scenario_hash
    assert [s["altitude_m"] for s in report["slices"]] == [10.0, 20.0]


def test_oracle_fails_for_a_corrupted_kernel(tmp_path, write_scenario, capsys):
    kernel = build_kernel(GaussianImpactParams(0.0244), altitudes=[10.0, 20.0])
    kernel.probs[1, 10, 10] *= 1.5
    kernel.save(tmp_path / "bad.vrtg")
    path = write_scenario(oracle={"samples": 100000, "seed": 7, "altitudes": [20]})
    code = main(["oracle", "--scenario", str(path), "--kernel", str(tmp_path / "bad.vrtg"), "--out", str(tmp_path / "r.json")])
    assert code == 1
    assert capsys.readouterr().out.strip() == "FAIL"
    failures = json.loads((tmp_path / "r.json").read_text())["slices"][0]["failures"]
    assert {"dx_m": 0.0, "dy_m": 0.0}.items() <= failures[0].items()
