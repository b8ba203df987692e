"""``lmmpose`` command line: synth, solve, eval, bench, selftest.

Exit codes: 0 success, 1 invariant or internal failure, 2 partial failure
(some objects could not be solved), 64 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import bench, config, fileio, lmm, metrics, synth
from .errors import ConfigError, LmmPoseError, ValidationError
from .geom import Intrinsics, ScaleAgnosticPose, random_rotation
from .pose_repr import SizeCodebook, compute_codebook
from .solvers import CorrespondenceSet, PoseEstimate, ransac_pnp, solve_lmm_pnp, umeyama

log = logging.getLogger("lmmpose")

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2, 64
SOLVERS = ("lmm-pnp", "pnp-unweighted", "ransac-pnp", "umeyama-oracle")
FORCE_FAIL_ENV = "LMMPOSE_SELFTEST_FORCE_FAIL"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _locked(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out / ".lmmpose.lock"), timeout=0)


# -- synth -------------------------------------------------------------------


def generate_scenes(cfg: config.Config, seed: int):
    gen = cfg.generator
    shapes = bench.build_shapes(gen, seed)
    K = Intrinsics(*gen.intrinsics)
    ranges = synth.PoseRanges(tuple(gen.d_range), tuple(gen.depth_range), gen.rotation, gen.center, s_in=gen.s_in)
    scenes = []
    for k in range(gen.n_scenes):
        scene = synth.gen_scene(shapes, gen.n_objects, ranges, K, gen.image_size, [seed, k, 0])
        if cfg.noise is not None:
            scene = synth.corrupt(scene, cfg.noise, [seed, k, 1])
        scenes.append(scene)
    codebook = compute_codebook(scenes)
    return [replace(s, codebook=codebook) for s in scenes], codebook


def cmd_synth(args) -> int:
    cfg = config.load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    scenes, codebook = generate_scenes(cfg, seed)
    with _locked(args.out_dir):
        for k, scene in enumerate(scenes):
            fileio.save_scene(scene, Path(args.out_dir) / f"scene_{k:04d}.json")
        fileio.save_codebook(codebook, Path(args.out_dir) / "codebook.json")
    print(f"wrote {len(scenes)} scene(s) and codebook.json to {args.out_dir}")
    return EXIT_OK


# -- solve -------------------------------------------------------------------


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def solve_object(obj, K, solver, cfg: config.Config):
    """Returns (estimate, d or None). Raises on failure."""
    if solver == "umeyama-oracle":
        vis = obj.mask
        mu, _ = lmm.fuse(obj.mixture)
        scale, R, t = umeyama(mu[vis], obj.camera_points()[vis])
        return PoseEstimate(R, t / scale, inlier_mask=vis.copy()), scale
    corr = CorrespondenceSet(obj.pixels, obj.mixture, K)
    if solver == "lmm-pnp":
        return solve_lmm_pnp(corr, cfg.solver), None
    if solver == "pnp-unweighted":
        return solve_lmm_pnp(corr, replace(cfg.solver, use_uncertainty_weights=False)), None
    return ransac_pnp(corr, cfg.solver, cfg.ransac.inlier_threshold_px, cfg.ransac.rounds), None


def solve_scene(scene, solver, cfg, codebook: SizeCodebook, scene_name="scene"):
    entries, failed = [], 0
    for obj in scene.objects:
        try:
            s_norm = _unit(codebook.lookup(obj.shape.category))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]) if exc.args else str(exc)) from None
        try:
            est, d = solve_object(obj, scene.intrinsics, solver, cfg)
        except (LmmPoseError, np.linalg.LinAlgError) as exc:
            log.warning("object %d (%s): %s", obj.id, obj.shape.category, exc)
            entries.append(fileio.result_entry(obj.id, error=exc))
            failed += 1
            continue
        entries.append(fileio.result_entry(obj.id, est, s_norm=s_norm, d=d))
    return fileio.results_to_json(scene_name, solver, entries), failed


def cmd_solve(args) -> int:
    cfg = config.load_config(args.config)
    scene = fileio.load_scene(args.scene)
    if args.codebook:
        codebook = fileio.load_codebook(args.codebook)
    elif scene.codebook:
        codebook = SizeCodebook(scene.codebook)
    else:
        raise ConfigError("scene has no size codebook; pass --codebook")
    res, failed = solve_scene(scene, args.solver, cfg, codebook, Path(args.scene).name)
    fileio.save_results(res, args.out)
    n = len(scene.objects)
    print(f"solved {n - failed}/{n} object(s) with {args.solver}; results in {args.out}")
    return EXIT_PARTIAL if failed else EXIT_OK


# -- eval --------------------------------------------------------------------


def instance_results(scene, results):
    by_id = {e["id"]: e for e in results["objects"]}
    out = []
    for obj in scene.objects:
        e = by_id.get(obj.id)
        sap, d = None, None
        if e is None:
            log.warning("object %d has no result; counted as a miss", obj.id)
        elif e["status"] == "ok":
            R = np.asarray(e["rotation"], dtype=np.float64).reshape(3, 3)
            sap = ScaleAgnosticPose(R, np.asarray(e["t_norm"]), _unit(e["s_norm"]))
            d = e.get("d")
        out.append(metrics.InstanceResult(obj.shape.category, obj.shape.symmetric, obj.gt, sap, d, obj.id))
    return out


def cmd_eval(args) -> int:
    opts = config.load_config(args.thresholds).thresholds if args.thresholds else metrics.EvalOptions()
    opts = replace(opts, absolute=args.absolute or opts.absolute, d_source=args.d_source or opts.d_source)
    scene = fileio.load_scene(args.scene)
    results = fileio.load_results(args.results, scene)
    table = metrics.evaluate(instance_results(scene, results), opts)
    csv_text = table.to_csv()
    if args.out:
        fileio.atomic_write(args.out, csv_text)
        sys.stdout.write(table.to_text())
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg = config.load_config(args.config)
    spec = bench.spec_from_config(cfg)
    t0 = time.perf_counter()
    report = bench.run_sap_comparison(spec) if cfg.bench.kind == "sap" else bench.run_ablation(spec)
    with _locked(args.out_dir):
        bench.write_report(report, args.out_dir)
    sys.stdout.write(report.summary_text())
    log.info("bench finished in %.1f s", time.perf_counter() - t0)
    return EXIT_OK


# -- selftest ----------------------------------------------------------------


def _check_loss_gradient():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        n = 5
        gt = rng.uniform(-0.5, 0.5, (n, 3))
        mu = gt + rng.uniform(0.01, 0.2, (n, 3)) * rng.choice([-1, 1], (n, 3))
        s2 = rng.uniform(0.05, 1.0, (n, 3))
        lam = rng.uniform(0.1, 15)
        _, g_mu, g_s2 = lmm.aleatoric_loss(lmm.LaplacianMap(mu, s2), gt, lam)
        h = 1e-6
        for arr, g in ((mu, g_mu), (s2, g_s2)):
            for idx in np.ndindex(arr.shape):
                a, b = arr.copy(), arr.copy()
                a[idx] += h
                b[idx] -= h
                if arr is mu:
                    fa = lmm.aleatoric_loss(lmm.LaplacianMap(a, s2), gt, lam)[0]
                    fb = lmm.aleatoric_loss(lmm.LaplacianMap(b, s2), gt, lam)[0]
                else:
                    fa = lmm.aleatoric_loss(lmm.LaplacianMap(mu, a), gt, lam)[0]
                    fb = lmm.aleatoric_loss(lmm.LaplacianMap(mu, b), gt, lam)[0]
                fd = (fa - fb) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-12))
    return worst < 1e-5, f"max relative gradient error {worst:.2e}"


def _check_sigma2_fit():
    rng = np.random.default_rng(2)
    worst = 0.0
    for lam in (15.0, 1.0, 0.1):
        e = rng.uniform(1e-3, 0.5, (4, 3))
        gt = np.zeros((4, 3))
        s2, _ = lmm.fit_sigma2(lmm.LaplacianMap(e, np.ones((4, 3))), gt, lam)
        worst = max(worst, float(np.max(np.abs(s2 - lam * e))))
    return worst < 1e-4, f"max |sigma2 - lam|e|| {worst:.2e}"


def _check_scene_round_trip():
    cfg = config.Config(generator=config.GeneratorConfig(n_objects=2, n_points=60), noise=synth.NoiseSpec())
    scenes, _ = generate_scenes(cfg, 7)
    a = fileio.dumps(fileio.scene_to_json(scenes[0]))
    b = fileio.dumps(fileio.scene_to_json(fileio.scene_from_json(json.loads(a))))
    return a == b, "scene JSON save/load/save is byte-identical" if a == b else "scene JSON round trip changed bytes"


def _check_pnp_closure():
    cfg = config.Config(generator=config.GeneratorConfig(n_objects=4, n_points=50))
    scenes, _ = generate_scenes(cfg, 3)
    worst_r, worst_t = 0.0, 0.0
    for obj in scenes[0].objects:
        est = solve_lmm_pnp(CorrespondenceSet(obj.pixels, obj.mixture, scenes[0].intrinsics))
        worst_r = max(worst_r, metrics.rotation_error(est.rotation, obj.gt.rotation, False))
        worst_t = max(worst_t, float(np.linalg.norm(est.t_norm - obj.gt.translation / obj.gt.diameter)))
    ok = worst_r < 0.1 and worst_t < 1e-3
    return ok, f"noiseless PnP worst rotation {worst_r:.2e} deg, t_norm {worst_t:.2e}"


def _check_iou_oracle():
    a = metrics.OrientedBox(np.eye(3), np.zeros(3), np.ones(3))
    b = metrics.OrientedBox(np.eye(3), np.array([0.5, 0.0, 0.0]), np.ones(3))
    hand = abs(metrics.box_iou_exact(a, b) - 1 / 3)
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(5):
        p = metrics.OrientedBox(random_rotation(rng), rng.uniform(-0.2, 0.2, 3), rng.uniform(0.5, 1.5, 3))
        q = metrics.OrientedBox(random_rotation(rng), rng.uniform(-0.2, 0.2, 3), rng.uniform(0.5, 1.5, 3))
        worst = max(worst, abs(metrics.box_iou_exact(p, q) - metrics.box_iou_mc(p, q, 400_000, [4, i])))
    ok = hand < 1e-9 and worst < 0.005
    return ok, f"offset cubes error {hand:.1e}; exact vs Monte Carlo max gap {worst:.4f}"


SELFTESTS = {
    "loss_gradient": _check_loss_gradient,
    "sigma2_fit": _check_sigma2_fit,
    "scene_round_trip": _check_scene_round_trip,
    "pnp_closure": _check_pnp_closure,
    "iou_oracle": _check_iou_oracle,
}


def cmd_selftest(args) -> int:
    forced = {s for s in os.environ.get(FORCE_FAIL_ENV, "").split(",") if s}
    unknown = forced - set(SELFTESTS) - {"all"}
    if unknown:
        raise ConfigError(f"{FORCE_FAIL_ENV}: unknown invariant(s) {sorted(unknown)}; choose from {sorted(SELFTESTS)} or 'all'")
    failed = []
    for name, check in SELFTESTS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failed invariant
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        if name in forced or "all" in forced:
            ok, detail = False, f"forced failure via {FORCE_FAIL_ENV}"
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({time.perf_counter() - t0:.2f}s)  {detail}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"selftest failed: {', '.join(failed)}")
        return EXIT_FAIL
    print("selftest passed")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lmmpose", description="Scale-agnostic category-level pose tools on synthetic data.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic scenes and a size codebook")
    s.add_argument("--config", help="YAML config file (defaults apply when omitted)")
    s.add_argument("--out-dir", required=True, help="directory for scene_XXXX.json and codebook.json")
    s.add_argument("--seed", type=int, help=f"overrides the config seed (default from ${config.SEED_ENV} or 0)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("solve", help="estimate scale-agnostic poses for every object of a scene")
    s.add_argument("scene", help="scene JSON file")
    s.add_argument("--solver", required=True, choices=SOLVERS)
    s.add_argument("--config", help="YAML config file with solver/ransac sections")
    s.add_argument("--codebook", help="size codebook JSON (default: the one embedded in the scene)")
    s.add_argument("--out", required=True, help="result JSON file")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("eval", help="score results against scene ground truth")
    s.add_argument("scene", help="scene JSON file")
    s.add_argument("results", help="result JSON file")
    s.add_argument("--absolute", action="store_true", help="also report metric IoU and cm columns")
    s.add_argument("--d-source", choices=("pred", "gt"), help="diameter used by absolute metrics (default pred)")
    s.add_argument("--thresholds", help="YAML config whose 'thresholds' section overrides the defaults")
    s.add_argument("--out", help="CSV output path (text table then goes to stdout); CSV to stdout if omitted")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="run a paired ablation or SAP comparison")
    s.add_argument("--config", help="YAML config with a 'bench' section (defaults apply when omitted)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("selftest", help=f"run the embedded invariant checks (set {FORCE_FAIL_ENV} to force a failure)")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Timeout as exc:
        print(f"error: output directory is locked by another process ({exc})", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, KeyError, ValueError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
