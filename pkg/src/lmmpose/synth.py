"""Synthetic shapes, scenes and corruption models.

Shapes are surface point samples normalized to the NOCS convention: the
tight axis-aligned box is centered at the origin with diagonal 1. Scenes
place shapes in front of a pinhole camera and record exact projections,
so every solver and metric has a known ground truth to be checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import lmm
from .errors import ConfigError, GenerationError
from .geom import Intrinsics, Pose9D, backproject, project, random_rotation
from .pose_repr import DetectionBox

PRIMITIVES = ("box", "cylinder", "ellipsoid", "composite")
MIN_VISIBLE = 6


@dataclass(frozen=True)
class ShapeModel:
    category: str
    symmetric: bool
    nocs_points: np.ndarray
    s_norm: np.ndarray
    normals: np.ndarray = field(default=None, repr=False, compare=False)
    primitive: str = "box"


@dataclass(frozen=True)
class NoiseSpec:
    b_range: tuple = (1e-3, 1e-1)
    outlier_fraction: float = 0.0
    # "honest" sets sigma2 to the true variance; "miscalibrated" scales it
    sigma_honesty: str = "honest"
    miscalibration_factor: float = 1.0
    pixel_jitter: float = 0.0
    # "nocs": outlier means drawn uniformly in the NOCS ball; "pixels": outlier pixels shuffled
    outlier_mode: str = "nocs"

    def __post_init__(self):
        lo, hi = self.b_range
        if not 0 < lo <= hi:
            raise ConfigError(f"b_range must satisfy 0 < low <= high, got {self.b_range}")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError(f"outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if self.sigma_honesty not in ("honest", "miscalibrated"):
            raise ConfigError(f"sigma_honesty must be 'honest' or 'miscalibrated', got {self.sigma_honesty!r}")
        if not self.miscalibration_factor > 0:
            raise ConfigError("miscalibration_factor must be positive")
        if self.pixel_jitter < 0:
            raise ConfigError("pixel_jitter must be nonnegative")
        if self.outlier_mode not in ("nocs", "pixels"):
            raise ConfigError(f"outlier_mode must be 'nocs' or 'pixels', got {self.outlier_mode!r}")
        object.__setattr__(self, "b_range", (float(lo), float(hi)))


@dataclass(frozen=True)
class PoseRanges:
    d_range: tuple = (0.15, 0.35)
    depth_range: tuple = (0.6, 1.2)
    rotation: str = "random"  # or "identity"
    center: str = "random"  # or "principal"
    margin_px: float = 8.0
    s_in: float = 256.0


@dataclass(frozen=True)
class SceneObject:
    id: int
    shape: ShapeModel
    gt: Pose9D
    detection: DetectionBox
    pixels: np.ndarray
    gt_nocs: np.ndarray
    mask: np.ndarray
    mixture: lmm.LaplacianMixture
    outliers: np.ndarray = None

    def camera_points(self) -> np.ndarray:
        """Ground-truth camera-frame points in meters."""
        return self.gt_nocs * self.gt.diameter @ self.gt.rotation.T + self.gt.translation


@dataclass(frozen=True)
class Scene:
    intrinsics: Intrinsics
    image_size: tuple
    objects: list
    codebook: dict = None


# -- shapes ----------------------------------------------------------------


def _sample_box(rng, n, ext):
    half = np.asarray(ext) / 2.0
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    areas = np.repeat(areas, 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-half, half, size=(n, 3))
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return pts, normals


def _sample_cylinder(rng, n, radius, height):
    side, cap = 2 * np.pi * radius * height, np.pi * radius**2
    # rim points pin the tight box to the true extents
    rim = np.array([[radius, 0, 0], [-radius, 0, 0], [0, 0, radius], [0, 0, -radius]], dtype=float)
    m = n - len(rim)
    kind = rng.choice(3, size=m, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, m)
    rr = radius * np.sqrt(rng.uniform(0, 1, m))
    y = rng.uniform(-height / 2, height / 2, m)
    pts = np.empty((m, 3))
    normals = np.zeros((m, 3))
    s = kind == 0
    pts[s] = np.stack([radius * np.cos(theta[s]), y[s], radius * np.sin(theta[s])], axis=1)
    normals[s] = np.stack([np.cos(theta[s]), np.zeros(s.sum()), np.sin(theta[s])], axis=1)
    for k, sign in ((1, 1.0), (2, -1.0)):
        c = kind == k
        pts[c] = np.stack([rr[c] * np.cos(theta[c]), np.full(c.sum(), sign * height / 2), rr[c] * np.sin(theta[c])], axis=1)
        normals[c, 1] = sign
    return np.vstack([rim, pts]), np.vstack([rim / radius, normals])


def _sample_ellipsoid(rng, n, semi):
    semi = np.asarray(semi, dtype=float)
    extremes = np.vstack([np.diag(semi), -np.diag(semi)])
    d = rng.standard_normal((n - 6, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.vstack([extremes, d * semi])
    normals = pts / semi**2
    return pts, normals / np.linalg.norm(normals, axis=1, keepdims=True)


def gen_shape(primitive, category, n_points, seed, extents=(1.0, 1.0, 1.0)) -> ShapeModel:
    """Surface-sampled shape normalized to a diagonal-1 tight box.

    ``extents`` are the generating full side lengths (any scale). Cylinders
    use ``extents[0]`` as diameter and ``extents[1]`` as height along y;
    ellipsoids with equal x and z extents are bodies of revolution.
    Cylinders and such ellipsoids are marked symmetric about y.
    """
    if primitive not in PRIMITIVES:
        raise ConfigError(f"unknown primitive {primitive!r}; expected one of {PRIMITIVES}")
    if n_points < 8:
        raise ConfigError(f"n_points must be >= 8, got {n_points}")
    ext = np.asarray(extents, dtype=float)
    if ext.shape != (3,) or np.any(ext <= 0):
        raise ConfigError(f"extents must be three positive numbers, got {extents}")
    rng = np.random.default_rng(seed)
    if primitive == "box":
        pts, normals = _sample_box(rng, n_points, ext)
        symmetric = False
    elif primitive == "cylinder":
        pts, normals = _sample_cylinder(rng, n_points, ext[0] / 2, ext[1])
        symmetric = True
    elif primitive == "ellipsoid":
        pts, normals = _sample_ellipsoid(rng, n_points, ext / 2)
        symmetric = bool(ext[0] == ext[2])
    else:
        # mug-like: y-axis cylinder body with a box handle on +x
        radius, height = ext[0] / 2, ext[1]
        n_handle = max(8, n_points // 5)
        body, body_n = _sample_cylinder(rng, n_points - n_handle, radius, height)
        hext = np.array([0.35 * radius, 0.6 * height, 0.25 * radius])
        handle, handle_n = _sample_box(rng, n_handle, hext)
        handle[:, 0] += radius + hext[0] / 2
        pts, normals = np.vstack([body, handle]), np.vstack([body_n, handle_n])
        symmetric = False
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    diag = np.linalg.norm(span)
    nocs = (pts - (lo + hi) / 2) / diag
    s_norm = span / diag
    for a in (nocs, s_norm, normals):
        a.setflags(write=False)
    return ShapeModel(str(category), symmetric, nocs, s_norm, normals, primitive)


# -- scenes ----------------------------------------------------------------


def _visible(R, t, points_m, normals):
    Y = points_m @ R.T + t
    n_cam = normals @ R.T
    return np.einsum("ij,ij->i", n_cam, -Y) > 0


def exact_mixture(gt_nocs, mask) -> lmm.LaplacianMixture:
    """Noise-free mixture: means at ground truth, variances at the floor."""
    return lmm.LaplacianMixture.single(gt_nocs, np.full(gt_nocs.shape, lmm.SIGMA2_FLOOR), mask)


def _place(shape, ranges, K, image_size, rng):
    W, H = image_size
    R = np.eye(3) if ranges.rotation == "identity" else random_rotation(rng)
    d = rng.uniform(*ranges.d_range)
    z = rng.uniform(*ranges.depth_range)
    if ranges.center == "principal":
        uv = np.array([K.cx, K.cy])
    else:
        m = ranges.margin_px
        uv = np.array([rng.uniform(m, W - m), rng.uniform(m, H - m)])
    t = backproject(K, uv, z)
    cam = shape.nocs_points * d @ R.T + t
    if np.any(cam[:, 2] <= 0):
        return None
    pix = project(K, cam)
    m = ranges.margin_px
    if np.any(pix < m) or np.any(pix[:, 0] > W - m) or np.any(pix[:, 1] > H - m):
        return None
    if shape.normals is not None:
        mask = _visible(R, t, shape.nocs_points * d, shape.normals)
    else:
        mask = np.ones(len(pix), dtype=bool)
    if mask.sum() < MIN_VISIBLE:
        return None
    return R, d, t, pix, mask


def gen_scene(shapes, n_objects, pose_ranges: PoseRanges, K: Intrinsics, image_size, seed, max_tries=1000) -> Scene:
    """Place ``n_objects`` shapes (cycled from ``shapes``) in front of the camera."""
    rng = np.random.default_rng(seed)
    objects = []
    for i in range(n_objects):
        shape = shapes[i % len(shapes)]
        for _ in range(max_tries):
            placed = _place(shape, pose_ranges, K, image_size, rng)
            if placed is not None:
                break
        else:
            raise GenerationError(f"could not place object {i} inside the image after {max_tries} tries")
        R, d, t, pix, mask = placed
        lo, hi = pix.min(axis=0), pix.max(axis=0)
        w, h = 1.1 * (hi - lo)
        c = (lo + hi) / 2
        det = DetectionBox(c[0], c[1], max(w, 1e-6), max(h, 1e-6), pose_ranges.s_in)
        gt = Pose9D(R, t, shape.s_norm * d)
        gt_nocs = np.array(shape.nocs_points)
        objects.append(
            SceneObject(
                id=i,
                shape=shape,
                gt=gt,
                detection=det,
                pixels=pix,
                gt_nocs=gt_nocs,
                mask=mask,
                mixture=exact_mixture(gt_nocs, mask),
                outliers=np.zeros(len(pix), dtype=bool),
            )
        )
    return Scene(K, tuple(int(v) for v in image_size), objects)


def _uniform_ball(rng, n, radius=0.5):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.uniform(0, 1, (n, 1)) ** (1 / 3)


# honest variance assigned to NOCS outliers: Laplace scale 0.25, about the
# typical per-axis distance between two points of the radius-0.5 ball
OUTLIER_SIGMA2 = 2 * 0.25**2


def _corrupt_component(rng, gt, mask, spec, outliers):
    n = len(gt)
    lo, hi = spec.b_range
    b = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    u = rng.random((n, 3)) - 0.5
    mag = np.minimum(np.abs(u), 0.5 - 2.0**-54)
    mu = gt - b[:, None] * np.sign(u) * np.log1p(-2.0 * mag)
    sigma2 = np.repeat(2.0 * b[:, None] ** 2, 3, axis=1)
    if spec.outlier_mode == "nocs" and outliers.any():
        mu[outliers] = _uniform_ball(rng, int(outliers.sum()))
        if spec.sigma_honesty == "honest":
            sigma2[outliers] = OUTLIER_SIGMA2
    if spec.sigma_honesty == "miscalibrated":
        sigma2 = sigma2 * spec.miscalibration_factor
    # b can be tiny; floor keeps the map valid
    sigma2 = np.maximum(sigma2, np.finfo(float).tiny)
    return lmm.LaplacianMap(mu, sigma2, mask), b


def corrupt(scene: Scene, spec: NoiseSpec, seed) -> Scene:
    """Fill every object's mixture with noisy means and (mis)calibrated variances.

    ``floor(outlier_fraction * n_visible)`` visible points per object are
    flagged as outliers; both mixture components are drawn independently.
    """
    rng = np.random.default_rng(seed)
    out = []
    for obj in scene.objects:
        vis_idx = np.flatnonzero(obj.mask)
        n_out = int(np.floor(spec.outlier_fraction * len(vis_idx)))
        outliers = np.zeros(len(obj.gt_nocs), dtype=bool)
        if n_out:
            outliers[rng.choice(vis_idx, n_out, replace=False)] = True
        a, _ = _corrupt_component(rng, obj.gt_nocs, obj.mask, spec, outliers)
        b, _ = _corrupt_component(rng, obj.gt_nocs, obj.mask, spec, outliers)
        pixels = np.array(obj.pixels)
        if spec.outlier_mode == "pixels" and n_out >= 2:
            order = rng.permutation(np.flatnonzero(outliers))
            # cyclic shift: every outlier receives another point's pixel
            pixels[order] = pixels[np.roll(order, 1)]
        if spec.pixel_jitter > 0:
            pixels = pixels + rng.uniform(-spec.pixel_jitter, spec.pixel_jitter, pixels.shape)
        out.append(replace(obj, mixture=lmm.LaplacianMixture(a, b), pixels=pixels, outliers=outliers))
    return replace(scene, objects=out)
