import json

import numpy as np
import pytest

from lmmpose import config, fileio, synth
from lmmpose.errors import ConfigError, ValidationError
from lmmpose.pose_repr import SizeCodebook
from lmmpose.solvers import PoseEstimate

from cli_helpers import make_scene


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(config.SEED_ENV, raising=False)
    cfg = config.load_config(None)
    assert cfg.seed == 0 and cfg.noise is None and cfg.solver.max_iterations == 100


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(config.SEED_ENV, "17")
    assert config.parse_config("version: 1\n").seed == 17
    assert config.parse_config("seed: 3\n").seed == 3
    monkeypatch.setenv(config.SEED_ENV, "abc")
    with pytest.raises(ConfigError, match=config.SEED_ENV):
        config.parse_config("version: 1\n")


def test_full_document_parses():
    cfg = config.parse_config(
        """
version: 1
seed: 5
generator:
  n_scenes: 2
  shapes:
    - {primitive: box, category: crate, extents: [1, 2, 3]}
noise:
  b_range: [0.001, 0.05]
  outlier_fraction: 0.1
solver:
  loss: l2
thresholds:
  rotation_deg: 5
bench:
  n_trials: 3
  variants:
    - {name: a}
    - {name: b, solver: {use_uncertainty_weights: false}}
"""
    )
    assert cfg.generator.n_scenes == 2 and cfg.generator.shapes[0]["category"] == "crate"
    assert cfg.noise.b_range == (0.001, 0.05) and cfg.solver.loss == "l2"
    assert cfg.thresholds.rotation_deg == 5 and len(cfg.bench.variants) == 2


@pytest.mark.parametrize(
    "text,where",
    [
        ("version: 1\nsolver:\n  max_iterations: 10\n  bogus: 1\n", "solver.bogus (line 4)"),
        ("version: 1\nnoise:\n  outlier_fraction: 'x'\n", "noise.outlier_fraction (line 3)"),
        ("version: 1\n\nnoise:\n  outlier_fraction: 1.5\n", "noise.outlier_fraction (line 4)"),
        ("version: 2\n", "version (line 1)"),
        ("seed: 1\nmystery: {}\n", "mystery (line 2)"),
        ("bench:\n  variants: []\n", "bench.variants (line 2)"),
        ("bench:\n  variants:\n    - {solver: {}}\n", "bench.variants[0]"),
        ("generator:\n  shapes:\n    - {primitive: box}\n", "generator.shapes[0]"),
        ("bench:\n  variants:\n    - {name: a, solver: {loss: l3}}\n", "bench.variants[0].solver"),
    ],
)
def test_errors_name_field_and_line(text, where):
    with pytest.raises(ConfigError) as exc:
        config.parse_config(text)
    assert where in str(exc.value)


def test_invalid_yaml():
    with pytest.raises(ConfigError, match="invalid YAML"):
        config.parse_config("a: [1,\n")


def test_shipped_configs_parse():
    from pathlib import Path

    files = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert files
    for f in files:
        config.load_config(f)


# -- files -------------------------------------------------------------------------


def test_scene_round_trip_is_lossless(tmp_path, K):
    scene = make_scene(K, noise=synth.NoiseSpec(outlier_fraction=0.2), seed=3)
    p = tmp_path / "s.json"
    fileio.save_scene(scene, p)
    back = fileio.load_scene(p)
    for a, b in zip(scene.objects, back.objects):
        assert np.array_equal(a.pixels, b.pixels) and np.array_equal(a.gt.rotation, b.gt.rotation)
        assert np.array_equal(a.outliers, b.outliers) and a.shape.category == b.shape.category
        for ca, cb in zip(a.mixture.components, b.mixture.components):
            assert np.array_equal(ca.mu, cb.mu) and np.array_equal(ca.sigma2, cb.sigma2)
    q = tmp_path / "t.json"
    fileio.save_scene(back, q)
    assert p.read_bytes() == q.read_bytes()


def test_scene_validation_errors(tmp_path, K):
    d = fileio.scene_to_json(make_scene(K, seed=0))
    bad = json.loads(json.dumps(d))
    bad["version"] = 9
    with pytest.raises(ValidationError, match="version"):
        fileio.scene_from_json(bad)
    bad = json.loads(json.dumps(d))
    bad["objects"][0]["gt"]["rotation"][0] = 3.0
    with pytest.raises(ValidationError):
        fileio.scene_from_json(bad)
    bad = json.loads(json.dumps(d))
    bad["objects"][0]["mask"] = bad["objects"][0]["mask"][:-1]
    with pytest.raises(ValidationError, match="mask"):
        fileio.scene_from_json(bad)
    bad = json.loads(json.dumps(d))
    bad["objects"][1]["id"] = bad["objects"][0]["id"]
    with pytest.raises(ValidationError, match="duplicate"):
        fileio.scene_from_json(bad)


def test_results_round_trip_and_id_check(tmp_path, K):
    scene = make_scene(K, seed=1)
    est = PoseEstimate(np.eye(3), [0, 0, 3.0], objective=1.5, inlier_mask=np.ones(4, bool), iterations_used=7)
    entries = [fileio.result_entry(0, est, s_norm=[0.6, 0.8, 1e-9]), fileio.result_entry(1, error="boom")]
    res = fileio.results_to_json("s.json", "lmm-pnp", entries)
    p = tmp_path / "r.json"
    fileio.save_results(res, p)
    assert fileio.load_results(p, scene) == res
    assert res["objects"][0]["inliers"] == 4 and res["objects"][1]["status"] == "failed"
    res["objects"][0]["id"] = 99
    with pytest.raises(ValidationError, match="99"):
        fileio.validate_results(res, scene)


def test_codebook_round_trip(tmp_path):
    cb = SizeCodebook({"b": [0.3, 0.6, 0.7], "a": [0.5, 0.5, 0.5]})
    fileio.save_codebook(cb, tmp_path / "c.json")
    back = fileio.load_codebook(tmp_path / "c.json")
    assert list(json.loads((tmp_path / "c.json").read_text())) == ["a", "b"]
    assert all(np.array_equal(cb[k], back[k]) for k in cb)


def test_atomic_write_leaves_no_temp_on_failure(tmp_path):
    target = tmp_path / "x.json"
    target.write_text("old")

    with pytest.raises(TypeError):
        fileio.atomic_write(target, 12345)
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]
