"""Pose evaluation: oriented-box IoU, symmetry-aware errors and AP tables.

Scale-agnostic metrics compare poses after dividing each one by its own box
diagonal (NIoU, translation error as a fraction of the diagonal); absolute
metrics use metric boxes and centimeters. A threshold on an error passes
when the error is strictly below it; an IoU threshold passes when the IoU
is at least the threshold.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .errors import ConfigError, ValidationError
from .geom import Pose9D, ScaleAgnosticPose, as_rotation, geodesic_angle, rot_y

_PLANE_EPS = 1e-12


@dataclass(frozen=True)
class OrientedBox:
    rotation: np.ndarray
    center: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation))
        c = np.array(self.center, dtype=np.float64)
        e = np.array(self.extents, dtype=np.float64)
        if c.shape != (3,) or e.shape != (3,):
            raise ValidationError("center and extents must be 3-vectors")
        if np.any(e <= 0):
            raise ValidationError(f"extents must be positive, got {e.tolist()}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "extents", e)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array(list(product((-1, 1), repeat=3)), dtype=float)
        return (signs * self.extents / 2) @ self.rotation.T + self.center

    def faces(self):
        """Six outward-oriented quads (counter-clockwise seen from outside)."""
        h = self.extents / 2
        quads = []
        for axis in range(3):
            u, v = (axis + 1) % 3, (axis + 2) % 3
            for sign in (1.0, -1.0):
                base = np.zeros(3)
                base[axis] = sign * h[axis]
                eu, ev = np.zeros(3), np.zeros(3)
                eu[u], ev[v] = h[u], h[v]
                if sign < 0:
                    eu, ev = ev, eu
                local = np.array([base - eu - ev, base + eu - ev, base + eu + ev, base - eu + ev])
                quads.append(local @ self.rotation.T + self.center)
        return quads

    def halfspaces(self):
        """``(normal, offset)`` pairs with the box = {x : normal @ x <= offset}."""
        out = []
        for axis in range(3):
            n = self.rotation[:, axis]
            c = n @ self.center
            out.append((n, c + self.extents[axis] / 2))
            out.append((-n, -c + self.extents[axis] / 2))
        return out

    def contains(self, pts) -> np.ndarray:
        local = (np.asarray(pts) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.extents / 2, axis=-1)


def box_from_pose(rotation, translation, size) -> OrientedBox:
    return OrientedBox(rotation, translation, size)


# -- exact IoU by polyhedron clipping ---------------------------------------


# The clipping core uses plain float tuples: numpy overhead dominates on
# polygons of a handful of vertices.


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _clip_polygon(poly, n, off):
    """Sutherland-Hodgman: keep the part of ``poly`` with ``n @ x <= off``."""
    out = []
    k = len(poly)
    dist = [_dot(n, p) - off for p in poly]
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = dist[i], dist[(i + 1) % k]
        if dp <= _PLANE_EPS:
            out.append(p)
        if (dp < -_PLANE_EPS and dq > _PLANE_EPS) or (dp > _PLANE_EPS and dq < -_PLANE_EPS):
            f = dp / (dp - dq)
            out.append((p[0] + (q[0] - p[0]) * f, p[1] + (q[1] - p[1]) * f, p[2] + (q[2] - p[2]) * f))
    return out


def _cap_polygon(points, n):
    """Order coplanar points counter-clockwise around outward normal ``n``."""
    k = len(points)
    c = tuple(sum(p[i] for p in points) / k for i in range(3))
    a = _cross(n, (1.0, 0.0, 0.0))
    if _dot(a, a) < 1e-12:
        a = _cross(n, (0.0, 1.0, 0.0))
    na = math.sqrt(_dot(a, a))
    a = (a[0] / na, a[1] / na, a[2] / na)
    b = _cross(n, a)

    def angle(p):
        r = (p[0] - c[0], p[1] - c[1], p[2] - c[2])
        return math.atan2(_dot(r, b), _dot(r, a))

    keep = []
    for p in sorted(points, key=angle):
        if not keep or max(abs(p[i] - keep[-1][i]) for i in range(3)) > 1e-12:
            keep.append(p)
    if len(keep) > 1 and max(abs(keep[0][i] - keep[-1][i]) for i in range(3)) <= 1e-12:
        keep.pop()
    return keep


def clip_polyhedron(faces, n, off):
    """Clip a closed convex polyhedron (list of outward polygons) by ``n @ x <= off``."""
    n = tuple(float(v) for v in n)
    side = [_dot(n, p) - off for f in faces for p in f]
    if max(side) <= _PLANE_EPS:
        return faces
    if min(side) >= -_PLANE_EPS:
        return []
    new_faces, cap = [], []
    for f in faces:
        clipped = _clip_polygon(f, n, off)
        if len(clipped) >= 3:
            new_faces.append(clipped)
            cap.extend(p for p in clipped if abs(_dot(n, p) - off) <= 1e-9)
    if len(cap) >= 3:
        poly = _cap_polygon(cap, n)
        if len(poly) >= 3:
            new_faces.append(poly)
    return new_faces


def polyhedron_volume(faces) -> float:
    """Divergence theorem over fan-triangulated outward faces."""
    vol = 0.0
    for f in faces:
        p0 = f[0]
        for i in range(1, len(f) - 1):
            vol += _dot(p0, _cross(f[i], f[i + 1]))
    return vol / 6.0


def intersection_volume(a: OrientedBox, b: OrientedBox) -> float:
    # work relative to a's center to limit cancellation
    shift = a.center
    faces = [[tuple(p) for p in f - shift] for f in a.faces()]
    if np.linalg.norm(b.center - shift) > 0.5 * (np.linalg.norm(a.extents) + np.linalg.norm(b.extents)):
        return 0.0
    for n, off in b.halfspaces():
        faces = clip_polyhedron(faces, n, float(off - n @ shift))
        if not faces:
            return 0.0
    return max(polyhedron_volume(faces), 0.0)


def box_iou_exact(a: OrientedBox, b: OrientedBox) -> float:
    inter = min(intersection_volume(a, b), a.volume, b.volume)
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def box_iou_mc(a: OrientedBox, b: OrientedBox, n_samples: int, seed) -> float:
    """Monte Carlo IoU: uniform samples in the bounding box of both boxes."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    n_a = n_b = n_ab = 0
    chunk = 200_000
    for start in range(0, n_samples, chunk):
        pts = rng.uniform(lo, hi, size=(min(chunk, n_samples - start), 3))
        ia, ib = a.contains(pts), b.contains(pts)
        n_a += int(ia.sum())
        n_b += int(ib.sum())
        n_ab += int((ia & ib).sum())
    union = n_a + n_b - n_ab
    return n_ab / union if union else 0.0


def symmetry_iou(pred: OrientedBox, gt: OrientedBox, symmetric: bool, n_rot: int = 100) -> float:
    """IoU maximized over rotations of ``pred`` about its own y axis if symmetric."""
    if not symmetric:
        return box_iou_exact(pred, gt)
    if n_rot < 1:
        raise ValueError("n_rot must be >= 1")
    best = 0.0
    for k in range(n_rot):
        R = pred.rotation @ rot_y(360.0 * k / n_rot)
        best = max(best, box_iou_exact(OrientedBox(R, pred.center, pred.extents), gt))
    return best


def rotation_error(pred, gt, symmetric: bool) -> float:
    """Geodesic angle, or the angle between y axes for symmetric objects (degrees)."""
    if not symmetric:
        return geodesic_angle(pred, gt)
    a, b = np.asarray(pred)[:, 1], np.asarray(gt)[:, 1]
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)))


def translation_error_ratio(t_pred, t_gt, d_gt: float) -> float:
    """``||t_pred - t_gt|| / d_gt`` with both translations in the same units."""
    if not d_gt > 0:
        raise ValueError("d_gt must be positive")
    return float(np.linalg.norm(np.asarray(t_pred) - np.asarray(t_gt)) / d_gt)


# -- AP tables --------------------------------------------------------------


@dataclass(frozen=True)
class InstanceResult:
    category: str
    symmetric: bool
    gt: Pose9D
    pred_sap: Optional[ScaleAgnosticPose]  # None: the solver failed on this instance
    pred_d: Optional[float] = None
    id: int = 0


@dataclass(frozen=True)
class EvalOptions:
    iou_thresholds: tuple = (0.25, 0.5, 0.75)
    rotation_deg: float = 10.0
    d_fractions: tuple = (0.2, 0.5)
    cm: float = 10.0
    n_rot: int = 100
    absolute: bool = False
    # "pred": each box normalized by its own diagonal; "gt": both by the gt diagonal
    niou_mode: str = "pred"
    # where the absolute pipeline takes the diameter from: "pred" or "gt"
    d_source: str = "pred"

    def __post_init__(self):
        if self.niou_mode not in ("pred", "gt"):
            raise ConfigError(f"niou_mode must be 'pred' or 'gt', got {self.niou_mode!r}")
        if self.d_source not in ("pred", "gt"):
            raise ConfigError(f"d_source must be 'pred' or 'gt', got {self.d_source!r}")


def _pct(v):
    return int(round(v * 100))


def column_names(opts: EvalOptions):
    rot = f"deg{opts.rotation_deg:g}"
    ds = [f"d{int(round(f * 10)):02d}" if round(f * 10, 9).is_integer() else f"d{f:g}" for f in opts.d_fractions]
    cols = [f"NIoU{_pct(t)}" for t in opts.iou_thresholds]
    cols += [f"{rot}_{d}" for d in ds] + ds + [rot]
    if opts.absolute:
        cm = f"cm{opts.cm:g}"
        cols += [f"IoU{_pct(t)}" for t in opts.iou_thresholds] + [f"{rot}_{cm}", cm]
    return cols


@dataclass
class MetricTable:
    """Percentages per category plus an unweighted ``mean`` row."""

    columns: list
    rows: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category"] + list(self.columns))
        for cat, vals in self.rows.items():
            w.writerow([cat] + [f"{vals[c]:.1f}" for c in self.columns])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["category"] + list(self.columns)
        body = [[cat] + [f"{vals[c]:.1f}" for c in self.columns] for cat, vals in self.rows.items()]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        fmt = lambda r: "  ".join(s.ljust(w) if i == 0 else s.rjust(w) for i, (s, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
        return "\n".join(lines) + "\n"


def _instance_measures(r: InstanceResult, opts: EvalOptions):
    """Raw per-instance quantities from which every column is thresholded."""
    if r.pred_sap is None:
        # counts as a miss at every threshold, including IoU >= 0
        out = {"rot": np.inf, "t_ratio": np.inf, "niou": -np.inf}
        if opts.absolute:
            out.update(iou=-np.inf, t_cm=np.inf)
        return out
    d_gt = r.gt.diameter
    sap = r.pred_sap
    rot_err = rotation_error(sap.rotation, r.gt.rotation, r.symmetric)
    gt_box_n = OrientedBox(r.gt.rotation, r.gt.translation / d_gt, r.gt.size / d_gt)
    if opts.niou_mode == "pred":
        pred_box_n = OrientedBox(sap.rotation, sap.t_norm, sap.s_norm)
        t_err = translation_error_ratio(sap.t_norm, r.gt.translation / d_gt, 1.0)
    else:
        if r.pred_d is None:
            raise ConfigError(f"instance {r.id}: niou_mode='gt' needs a predicted diameter")
        k = r.pred_d / d_gt
        pred_box_n = OrientedBox(sap.rotation, sap.t_norm * k, sap.s_norm * k)
        t_err = translation_error_ratio(sap.t_norm * r.pred_d, r.gt.translation, d_gt)
    out = {
        "rot": rot_err,
        "t_ratio": t_err,
        "niou": symmetry_iou(pred_box_n, gt_box_n, r.symmetric, opts.n_rot),
    }
    if opts.absolute:
        if opts.d_source == "gt":
            d = d_gt
        elif r.pred_d is None:
            raise ConfigError(f"instance {r.id}: absolute metrics requested but no predicted diameter")
        else:
            d = r.pred_d
        pred_box = OrientedBox(sap.rotation, sap.t_norm * d, sap.s_norm * d)
        gt_box = OrientedBox(r.gt.rotation, r.gt.translation, r.gt.size)
        out["iou"] = symmetry_iou(pred_box, gt_box, r.symmetric, opts.n_rot)
        out["t_cm"] = 100.0 * float(np.linalg.norm(sap.t_norm * d - r.gt.translation))
    return out


def _passes(m, opts: EvalOptions):
    cols = column_names(opts)
    rot_ok = m["rot"] < opts.rotation_deg
    flags = [m["niou"] >= t for t in opts.iou_thresholds]
    d_ok = [m["t_ratio"] < f for f in opts.d_fractions]
    flags += [rot_ok and ok for ok in d_ok] + d_ok + [rot_ok]
    if opts.absolute:
        cm_ok = m["t_cm"] < opts.cm
        flags += [m["iou"] >= t for t in opts.iou_thresholds] + [rot_ok and cm_ok, cm_ok]
    return dict(zip(cols, flags))


def evaluate(results, options: EvalOptions = EvalOptions()) -> MetricTable:
    """AP (fraction of matched instances passing, in percent) per category and mean."""
    results = list(results)
    if not results:
        raise ValueError("no results to evaluate")
    cols = column_names(options)
    by_cat = {}
    for r in results:
        by_cat.setdefault(r.category, []).append(_passes(_instance_measures(r, options), options))
    table = MetricTable(cols)
    for cat in sorted(by_cat):
        flags = by_cat[cat]
        table.rows[cat] = {c: 100.0 * sum(f[c] for f in flags) / len(flags) for c in cols}
    table.rows["mean"] = {c: float(np.mean([table.rows[cat][c] for cat in sorted(by_cat)])) for c in cols}
    return table


METRIC_KINDS = ("niou", "iou", "rotation", "translation", "translation_cm")


def ap_curve(results, metric_kind: str, thresholds, options: EvalOptions = EvalOptions()):
    """Mean-over-categories AP at each threshold; returns ``[(threshold, AP), ...]``.

    IoU kinds pass at ``iou >= threshold``; error kinds at ``error < threshold``.
    """
    if metric_kind not in METRIC_KINDS:
        raise ValueError(f"unknown metric kind {metric_kind!r}; expected one of {METRIC_KINDS}")
    th = np.asarray(list(thresholds), dtype=float)
    if np.any(np.diff(th) < 0):
        raise ValueError("threshold grid must be monotone non-decreasing")
    key = {"niou": "niou", "iou": "iou", "rotation": "rot", "translation": "t_ratio", "translation_cm": "t_cm"}[metric_kind]
    if key in ("iou", "t_cm") and not options.absolute:
        options = EvalOptions(**{**options.__dict__, "absolute": True})
    by_cat = {}
    for r in results:
        by_cat.setdefault(r.category, []).append(_instance_measures(r, options)[key])
    curve = []
    for t in th:
        aps = []
        for cat in sorted(by_cat):
            v = np.asarray(by_cat[cat])
            ok = v >= t if key in ("niou", "iou") else v < t
            aps.append(100.0 * ok.mean())
        curve.append((float(t), float(np.mean(aps))))
    return curve


def curve_to_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "AP"])
    for t, ap in curve:
        w.writerow([f"{t:g}", f"{ap:.4f}"])
    return buf.getvalue()
