import json
import subprocess
import sys
import time
from pathlib import Path

import pytest
from filelock import FileLock

from lmmpose import cli, fileio

FIX = Path(__file__).parent / "fixtures"
SMALL = str(FIX / "small.yaml")
NOISY = str(FIX / "noisy.yaml")


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if not p.name.startswith(".")}


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "scenes"
    assert run("synth", "--config", SMALL, "--out-dir", out) == 0
    return out


def test_synth_is_byte_deterministic(tmp_path, synth_dir):
    other = tmp_path / "again"
    assert run("synth", "--config", SMALL, "--out-dir", other) == 0
    a, b = tree_bytes(synth_dir), tree_bytes(other)
    assert set(a) == {"scene_0000.json", "scene_0001.json", "codebook.json"}
    assert a == b
    assert run("synth", "--config", SMALL, "--out-dir", tmp_path / "s9", "--seed", 9) == 0
    assert tree_bytes(tmp_path / "s9") != a


def test_seed_env_feeds_synth(tmp_path, monkeypatch):
    monkeypatch.setenv("LMMPOSE_SEED", "9")
    assert run("synth", "--out-dir", tmp_path / "env") == 0
    monkeypatch.delenv("LMMPOSE_SEED")
    assert run("synth", "--out-dir", tmp_path / "flag", "--seed", 9) == 0
    assert tree_bytes(tmp_path / "env") == tree_bytes(tmp_path / "flag")


def test_invalid_config_names_field_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: 1\ngenerator:\n  n_points: -5\n")
    assert run("synth", "--config", bad, "--out-dir", tmp_path / "o") == 64
    err = capsys.readouterr().err
    assert "generator" in err and "line 3" in err


def test_empty_variants_is_a_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("bench:\n  variants: []\n")
    assert run("bench", "--config", bad, "--out-dir", tmp_path / "o") == 64
    assert "bench.variants" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "x.json", "--solver", "magic", "--out", "r.json"],
        ["frobnicate"],
        [],
        ["synth"],
    ],
)
def test_usage_errors_exit_64(argv):
    assert run(*argv) == 64


def test_missing_file_exit_64(tmp_path):
    assert run("solve", tmp_path / "nope.json", "--solver", "lmm-pnp", "--out", tmp_path / "r.json") == 64


def test_malformed_scene_exit_1(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"version": 1}')
    assert run("solve", p, "--solver", "lmm-pnp", "--out", tmp_path / "r.json") == 1


@pytest.mark.parametrize("solver", cli.SOLVERS)
def test_every_solver_runs(synth_dir, tmp_path, solver):
    out = tmp_path / f"{solver}.json"
    assert run("solve", synth_dir / "scene_0000.json", "--solver", solver, "--config", SMALL, "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["solver"] == solver and all(e["status"] == "ok" for e in res["objects"])


def test_degenerate_object_gives_partial_exit(synth_dir, tmp_path):
    d = json.loads((synth_dir / "scene_0000.json").read_text())
    mask = d["objects"][1]["mask"]
    keep = [i for i, m in enumerate(mask) if m][:3]
    d["objects"][1]["mask"] = [i in keep for i in range(len(mask))]
    scene = tmp_path / "degenerate.json"
    scene.write_text(json.dumps(d))
    out = tmp_path / "r.json"
    assert run("solve", scene, "--solver", "lmm-pnp", "--config", SMALL, "--out", out) == 2
    status = [e["status"] for e in json.loads(out.read_text())["objects"]]
    assert status == ["ok", "failed", "ok"]
    assert run("eval", scene, out) == 0


def test_eval_of_ground_truth_is_perfect(synth_dir, tmp_path, capsys):
    scene_path = synth_dir / "scene_0001.json"
    scene = fileio.load_scene(scene_path)
    entries = []
    for o in scene.objects:
        e = fileio.result_entry(o.id, _gt_estimate(o), s_norm=o.gt.size / o.gt.diameter, d=o.gt.diameter)
        entries.append(e)
    res = tmp_path / "gt.json"
    fileio.save_results(fileio.results_to_json("s", "oracle", entries), res)
    capsys.readouterr()
    assert run("eval", scene_path, res, "--absolute") == 0
    rows = [line.split(",") for line in capsys.readouterr().out.strip().splitlines()]
    assert rows[0][0] == "category"
    assert all(float(v) == 100.0 for r in rows[1:] for v in r[1:])


def _gt_estimate(obj):
    from lmmpose.solvers import PoseEstimate

    return PoseEstimate(obj.gt.rotation, obj.gt.translation / obj.gt.diameter)


def test_absolute_without_diameter_is_usage_error(synth_dir, tmp_path):
    out = tmp_path / "r.json"
    run("solve", synth_dir / "scene_0000.json", "--solver", "lmm-pnp", "--out", out)
    assert run("eval", synth_dir / "scene_0000.json", out, "--absolute") == 64
    assert run("eval", synth_dir / "scene_0000.json", out, "--absolute", "--d-source", "gt") == 0


def test_golden_eval_csv(tmp_path, capsys):
    scenes = tmp_path / "g"
    assert run("synth", "--config", NOISY, "--out-dir", scenes) == 0
    res = tmp_path / "r.json"
    assert run("solve", scenes / "scene_0000.json", "--solver", "lmm-pnp", "--config", NOISY, "--out", res) == 0
    csv = tmp_path / "m.csv"
    assert run("eval", scenes / "scene_0000.json", res, "--out", csv) == 0
    assert "mean" in capsys.readouterr().out
    assert csv.read_text() == (FIX / "golden_noisy_lmm.csv").read_text()


def test_bench_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("bench", "--config", SMALL, "--out-dir", a) == 0
    assert run("bench", "--config", SMALL, "--out-dir", b) == 0
    files = tree_bytes(a)
    assert {"metrics_weighted.csv", "errors_unweighted.csv", "paired.csv", "summary.txt"} <= set(files)
    assert files == tree_bytes(b)
    hashes = [[line.split(",")[-1] for line in (a / f"errors_{v}.csv").read_text().splitlines()[1:]] for v in ("weighted", "unweighted")]
    assert hashes[0] == hashes[1] and len(hashes[0]) == 6


def test_locked_out_dir_is_refused(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    with FileLock(str(out / ".lmmpose.lock")):
        assert run("synth", "--config", SMALL, "--out-dir", out) == 64


def test_selftest_passes_quickly(capsys):
    t0 = time.perf_counter()
    assert run("selftest") == 0
    assert time.perf_counter() - t0 < 60
    out = capsys.readouterr().out
    assert out.count("PASS") == len(cli.SELFTESTS) and "selftest passed" in out


def test_selftest_forced_failure_names_invariant(monkeypatch, capsys):
    monkeypatch.setenv(cli.FORCE_FAIL_ENV, "pnp_closure")
    assert run("selftest") == 1
    out = capsys.readouterr().out
    assert "FAIL  pnp_closure" in out and "selftest failed: pnp_closure" in out
    monkeypatch.setenv(cli.FORCE_FAIL_ENV, "nonsense")
    assert run("selftest") == 64


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "lmmpose.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "selftest" in r.stdout
