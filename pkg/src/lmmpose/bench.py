"""Paired synthetic experiments comparing solver variants.

Every variant solves the same trial scenes (same seeds, verified by a hash
of the serialized scene), so per-trial error differences are paired and a
sign test on wins/losses is a valid significance check.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import fileio, metrics, synth
from .errors import ConfigError, LmmPoseError
from .geom import Intrinsics, ScaleAgnosticPose
from .pose_repr import SizeCodebook
from .solvers import CorrespondenceSet, SolverConfig, solve_lmm_pnp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    name: str
    solver: SolverConfig = SolverConfig()


@dataclass(frozen=True)
class TrialSpec:
    generator: object  # config.GeneratorConfig
    noise: synth.NoiseSpec = None
    variants: tuple = ()
    n_trials: int = 1
    base_seed: int = 0
    eval_options: metrics.EvalOptions = metrics.EvalOptions()
    metric_d: str = "prior"
    curve_thresholds: tuple = tuple(round(0.05 * i, 2) for i in range(21))

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.variants:
            raise ConfigError("at least one solver variant is required")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError(f"variant names must be unique, got {names}")
        if self.metric_d not in ("prior", "exact"):
            raise ConfigError(f"metric_d must be 'prior' or 'exact', got {self.metric_d!r}")


@dataclass
class TrialReport:
    variants: list
    rotation_errors: dict
    translation_errors: dict
    failures: dict
    tables: dict
    paired: list
    scene_hashes: list
    curves: dict = field(default_factory=dict)

    def summary_text(self) -> str:
        lines = ["variant  median_rot_deg  median_t_err  failures"]
        for v in self.variants:
            lines.append(
                f"{v}  {np.median(self.rotation_errors[v]):.6g}  "
                f"{np.median(self.translation_errors[v]):.6g}  {int(np.sum(self.failures[v]))}"
            )
        lines.append("")
        lines.append("a  b  median_delta_deg  win_rate  wins  losses  sign_test_p")
        for p in self.paired:
            lines.append(
                f"{p['a']}  {p['b']}  {p['median_delta']:.6g}  {p['win_rate']:.4f}  "
                f"{p['wins']}  {p['losses']}  {p['p_value']:.6g}"
            )
        for v, t in self.tables.items():
            lines.append("")
            lines.append(f"[{v}]")
            lines.append(t.to_text().rstrip())
        return "\n".join(lines) + "\n"


def build_shapes(gen, seed):
    return [
        synth.gen_shape(s["primitive"], s["category"], gen.n_points, [seed, i], s.get("extents", (1.0, 1.0, 1.0)))
        for i, s in enumerate(gen.shapes)
    ]


def shape_codebook(shapes) -> SizeCodebook:
    acc = {}
    for s in shapes:
        acc.setdefault(s.category, []).append(s.s_norm)
    return SizeCodebook({c: np.mean(v, axis=0) for c, v in sorted(acc.items())})


def unit_size(s):
    s = np.asarray(s, dtype=np.float64)
    return s / np.linalg.norm(s)


def make_trial_scene(spec: TrialSpec, shapes, i: int):
    gen = spec.generator
    K = Intrinsics(*gen.intrinsics)
    ranges = synth.PoseRanges(tuple(gen.d_range), tuple(gen.depth_range), gen.rotation, gen.center, s_in=gen.s_in)
    # one object per trial, shapes cycled
    shape = shapes[i % len(shapes)]
    scene = synth.gen_scene([shape], 1, ranges, K, gen.image_size, [spec.base_seed, i, 0])
    if spec.noise is not None:
        scene = synth.corrupt(scene, spec.noise, [spec.base_seed, i, 1])
    return scene


def scene_hash(scene) -> str:
    return hashlib.sha256(fileio.dumps(fileio.scene_to_json(scene)).encode()).hexdigest()


def _failed_result(obj):
    return metrics.InstanceResult(obj.shape.category, obj.shape.symmetric, obj.gt, None, None, obj.id)


def _solve_trials(spec: TrialSpec):
    shapes = build_shapes(spec.generator, spec.base_seed)
    codebook = shape_codebook(shapes)
    names = [v.name for v in spec.variants]
    rot = {n: [] for n in names}
    terr = {n: [] for n in names}
    fail = {n: [] for n in names}
    results = {n: [] for n in names}
    hashes = []
    for i in range(spec.n_trials):
        scene = make_trial_scene(spec, shapes, i)
        hashes.append(scene_hash(scene))
        obj = scene.objects[0]
        corr = CorrespondenceSet(obj.pixels, obj.mixture, scene.intrinsics)
        d = obj.gt.diameter
        for v in spec.variants:
            try:
                est = solve_lmm_pnp(corr, replace(v.solver, seed=spec.base_seed + i))
            except (LmmPoseError, np.linalg.LinAlgError) as exc:
                log.info("trial %d variant %s failed: %s", i, v.name, exc)
                rot[v.name].append(np.inf)
                terr[v.name].append(np.inf)
                fail[v.name].append(True)
                results[v.name].append((obj, None))
                continue
            rot[v.name].append(metrics.rotation_error(est.rotation, obj.gt.rotation, obj.shape.symmetric))
            terr[v.name].append(float(np.linalg.norm(est.t_norm - obj.gt.translation / d)))
            fail[v.name].append(False)
            results[v.name].append((obj, est))
    return names, codebook, rot, terr, fail, results, hashes


def _sap_result(obj, est, codebook, pred_d=None):
    if est is None:
        return _failed_result(obj)
    sap = ScaleAgnosticPose(est.rotation, est.t_norm, unit_size(codebook.lookup(obj.shape.category)))
    return metrics.InstanceResult(obj.shape.category, obj.shape.symmetric, obj.gt, sap, pred_d, obj.id)


def paired_stats(a, b, name_a, name_b) -> dict:
    """Sign test that ``a`` has lower error than ``b`` (ties dropped)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    n = wins + losses
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    finite = np.isfinite(a) & np.isfinite(b)
    delta = float(np.median(a[finite] - b[finite])) if finite.any() else float("nan")
    return {
        "a": name_a,
        "b": name_b,
        "median_a": float(np.median(a)),
        "median_b": float(np.median(b)),
        "median_delta": delta,
        "win_rate": wins / len(a),
        "wins": wins,
        "losses": losses,
        "p_value": float(p),
    }


def run_ablation(spec: TrialSpec) -> TrialReport:
    names, codebook, rot, terr, fail, results, hashes = _solve_trials(spec)
    tables = {
        n: metrics.evaluate([_sap_result(o, e, codebook) for o, e in results[n]], spec.eval_options) for n in names
    }
    paired = [
        paired_stats(rot[a], rot[b], a, b) for i, a in enumerate(names) for b in names[i + 1 :]
    ]
    return TrialReport(
        names,
        {n: np.asarray(rot[n]) for n in names},
        {n: np.asarray(terr[n]) for n in names},
        {n: np.asarray(fail[n]) for n in names},
        tables,
        paired,
        hashes,
    )


def run_sap_comparison(spec: TrialSpec) -> TrialReport:
    """Scale-agnostic vs metric-scale pipelines on identical solves.

    The SAP pipeline is scored with NIoU. The metric-scale pipeline must
    commit to a diameter: with ``metric_d="prior"`` it uses the geometric
    mean of the generator's diameter range (the image carries no scale
    information); with ``"exact"`` it receives the true diameter.
    """
    spec = replace(spec, variants=spec.variants[:1])
    names, codebook, rot, terr, fail, results, hashes = _solve_trials(spec)
    base = names[0]
    lo, hi = spec.generator.d_range
    d_prior = float(np.sqrt(lo * hi))
    sap_results = [_sap_result(o, e, codebook) for o, e in results[base]]
    metric_results = [
        _sap_result(o, e, codebook, o.gt.diameter if spec.metric_d == "exact" else d_prior) for o, e in results[base]
    ]
    opts = spec.eval_options
    abs_opts = replace(opts, absolute=True, d_source="pred")
    th = spec.curve_thresholds
    curves = {
        "sap": metrics.ap_curve(sap_results, "niou", th, opts),
        "metric": metrics.ap_curve(metric_results, "iou", th, abs_opts),
    }
    tables = {"sap": metrics.evaluate(sap_results, opts), "metric": metrics.evaluate(metric_results, abs_opts)}
    names2 = ["sap", "metric"]
    return TrialReport(
        names2,
        {n: np.asarray(rot[base]) for n in names2},
        {n: np.asarray(terr[base]) for n in names2},
        {n: np.asarray(fail[base]) for n in names2},
        tables,
        [],
        hashes,
        curves,
    )


def write_report(report: TrialReport, out_dir) -> list:
    """Write per-variant CSVs, curves and a summary; returns written paths."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        p = out / name
        fileio.atomic_write(p, text)
        written.append(p)

    for v in report.variants:
        put(f"metrics_{v}.csv", report.tables[v].to_csv())
        rows = ["trial,rotation_deg,t_norm_error,failed,scene_sha256"]
        for i, (r, t, f) in enumerate(zip(report.rotation_errors[v], report.translation_errors[v], report.failures[v])):
            rows.append(f"{i},{r!r},{t!r},{int(f)},{report.scene_hashes[i]}")
        put(f"errors_{v}.csv", "\n".join(rows) + "\n")
    if report.paired:
        rows = ["a,b,median_a,median_b,median_delta,win_rate,wins,losses,p_value"]
        for p in report.paired:
            rows.append(",".join(str(p[k]) for k in ("a", "b", "median_a", "median_b", "median_delta", "win_rate", "wins", "losses", "p_value")))
        put("paired.csv", "\n".join(rows) + "\n")
    for v, curve in report.curves.items():
        put(f"ap_curve_{v}.csv", metrics.curve_to_csv(curve))
    put("summary.txt", report.summary_text())
    return written


def spec_from_config(cfg) -> TrialSpec:
    b = cfg.bench
    variants = tuple(Variant(v["name"], replace(cfg.solver, **(v.get("solver") or {}))) for v in b.variants)
    return TrialSpec(
        generator=cfg.generator,
        noise=cfg.noise,
        variants=variants,
        n_trials=b.n_trials,
        base_seed=b.base_seed,
        eval_options=cfg.thresholds,
        metric_d=b.metric_d,
        curve_thresholds=tuple(b.curve_thresholds),
    )
