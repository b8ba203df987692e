"""JSON/CSV persistence for scenes, results, codebooks and tables.

Floats are written with Python's shortest round-trip repr, so every value
reloads bit-identically. All writes go to a temporary file in the target
directory and are renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import lmm
from .errors import ValidationError
from .geom import Intrinsics, Pose9D
from .pose_repr import DetectionBox, SizeCodebook
from .synth import Scene, SceneObject, ShapeModel

SCHEMA_VERSION = 1


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"


def _rows(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _vec(a):
    return [float(v) for v in np.ravel(a)]


def _arr(data, shape, name):
    a = np.array(data, dtype=np.float64)
    if a.size == 0 and shape[0] == 0:
        a = a.reshape(shape)
    if a.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: non-finite values")
    return a


def _rotation(data, name):
    return _arr(data, (9,), name).reshape(3, 3)


# -- scenes -----------------------------------------------------------------


def pose_to_json(p: Pose9D) -> dict:
    return {"rotation": _vec(p.rotation), "translation": _vec(p.translation), "size": _vec(p.size)}


def pose_from_json(d, name="pose") -> Pose9D:
    return Pose9D(_rotation(d["rotation"], f"{name}.rotation"), _arr(d["translation"], (3,), f"{name}.translation"), _arr(d["size"], (3,), f"{name}.size"))


def intrinsics_to_json(K: Intrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}


def object_to_json(o: SceneObject) -> dict:
    return {
        "id": int(o.id),
        "category": o.shape.category,
        "symmetric": bool(o.shape.symmetric),
        "primitive": o.shape.primitive,
        "s_norm": _vec(o.shape.s_norm),
        "gt": pose_to_json(o.gt),
        "detection": {k: getattr(o.detection, k) for k in ("c_x", "c_y", "w_box", "h_box", "s_in")},
        "pixels": _rows(o.pixels),
        "gt_nocs": _rows(o.gt_nocs),
        "mask": [bool(v) for v in o.mask],
        "mixture": {
            "weights": list(o.mixture.weights),
            "components": [{"mu": _rows(c.mu), "sigma2": _rows(c.sigma2)} for c in o.mixture.components],
        },
        "outliers": [int(i) for i in np.flatnonzero(o.outliers)] if o.outliers is not None else [],
    }


def object_from_json(d) -> SceneObject:
    oid = d["id"]
    tag = f"object {oid}"
    n = len(d["pixels"])
    pixels = _arr(d["pixels"], (n, 2), f"{tag}.pixels")
    gt_nocs = _arr(d["gt_nocs"], (n, 3), f"{tag}.gt_nocs")
    mask = np.array(d["mask"], dtype=bool)
    if mask.shape != (n,):
        raise ValidationError(f"{tag}.mask: expected {n} entries, got {mask.shape}")
    comps = [
        lmm.LaplacianMap(
            _arr(c["mu"], (n, 3), f"{tag}.mixture.mu"), _arr(c["sigma2"], (n, 3), f"{tag}.mixture.sigma2"), mask
        )
        for c in d["mixture"]["components"]
    ]
    if len(comps) != 2:
        raise ValidationError(f"{tag}.mixture: expected 2 components, got {len(comps)}")
    mixture = lmm.LaplacianMixture(comps[0], comps[1], tuple(d["mixture"]["weights"]))
    outliers = np.zeros(n, dtype=bool)
    outliers[np.asarray(d.get("outliers", []), dtype=int)] = True
    shape = ShapeModel(d["category"], bool(d["symmetric"]), gt_nocs, _arr(d["s_norm"], (3,), f"{tag}.s_norm"), None, d.get("primitive", "box"))
    return SceneObject(
        id=int(oid),
        shape=shape,
        gt=pose_from_json(d["gt"], f"{tag}.gt"),
        detection=DetectionBox(**d["detection"]),
        pixels=pixels,
        gt_nocs=gt_nocs,
        mask=mask,
        mixture=mixture,
        outliers=outliers,
    )


def scene_to_json(scene: Scene) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "intrinsics": intrinsics_to_json(scene.intrinsics),
        "image_size": [int(v) for v in scene.image_size],
        "codebook": SizeCodebook(scene.codebook).to_json() if scene.codebook else None,
        "objects": [object_to_json(o) for o in scene.objects],
    }


def scene_from_json(d) -> Scene:
    if d.get("version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported scene file version {d.get('version')!r}")
    objs = [object_from_json(o) for o in d["objects"]]
    ids = [o.id for o in objs]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate object ids in scene")
    cb = d.get("codebook")
    return Scene(Intrinsics(**d["intrinsics"]), tuple(d["image_size"]), objs, SizeCodebook(cb) if cb else None)


def save_scene(scene: Scene, path) -> None:
    atomic_write(path, dumps(scene_to_json(scene)))


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as f:
        return scene_from_json(json.load(f))


def save_codebook(cb: SizeCodebook, path) -> None:
    atomic_write(path, dumps(SizeCodebook(cb).to_json()))


def load_codebook(path) -> SizeCodebook:
    with open(path, encoding="utf-8") as f:
        return SizeCodebook(json.load(f))


# -- results ----------------------------------------------------------------


def result_entry(oid, estimate=None, s_norm=None, s_out=None, d=None, error=None) -> dict:
    """One ResultFile object record; ``estimate`` None marks a failed solve."""
    if estimate is None:
        return {"id": int(oid), "status": "failed", "error": str(error)}
    inl = estimate.inlier_mask
    return {
        "id": int(oid),
        "status": "ok",
        "rotation": _vec(estimate.rotation),
        "t_norm": _vec(estimate.t_norm),
        "s_norm": _vec(s_norm),
        "s_out": _vec(s_out) if s_out is not None else None,
        "d": None if d is None else float(d),
        "objective": float(estimate.objective),
        "iterations": int(estimate.iterations_used),
        "inliers": int(np.sum(inl)) if inl is not None else None,
    }


def results_to_json(scene_name, solver, entries) -> dict:
    return {"version": SCHEMA_VERSION, "scene": str(scene_name), "solver": solver, "objects": list(entries)}


def validate_results(d, scene: Scene = None) -> dict:
    if d.get("version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported result file version {d.get('version')!r}")
    for e in d["objects"]:
        if e.get("status") == "ok":
            _rotation(e["rotation"], f"result {e['id']}.rotation")
            _arr(e["t_norm"], (3,), f"result {e['id']}.t_norm")
            _arr(e["s_norm"], (3,), f"result {e['id']}.s_norm")
    if scene is not None:
        known = {o.id for o in scene.objects}
        unknown = sorted({e["id"] for e in d["objects"]} - known)
        if unknown:
            raise ValidationError(f"result ids not present in scene: {unknown}")
    return d


def save_results(d, path) -> None:
    atomic_write(path, dumps(validate_results(d)))


def load_results(path, scene: Scene = None) -> dict:
    with open(path, encoding="utf-8") as f:
        return validate_results(json.load(f), scene)
