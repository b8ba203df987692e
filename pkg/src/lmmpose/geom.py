"""Geometric value types and pinhole camera operations.

Rotations are plain ``(3, 3)`` float arrays validated by :func:`as_rotation`;
poses are frozen dataclasses holding read-only copies of their arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError, ValidationError

ROTATION_TOL = 1e-9
RENORMALIZE_TOL = 1e-6


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"intrinsics {name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, k: float) -> "Intrinsics":
        """Intrinsics of the same camera after resizing the image by ``k``."""
        return Intrinsics(self.fx * k, self.fy * k, self.cx * k, self.cy * k)


def _polar(m):
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def rotation_defect(m) -> float:
    """Largest deviation of ``m`` from orthonormality / unit determinant."""
    m = np.asarray(m, dtype=np.float64)
    return max(np.abs(m.T @ m - np.eye(3)).max(), abs(np.linalg.det(m) - 1.0))


def as_rotation(m) -> np.ndarray:
    """Validate a 3x3 rotation matrix, returning a read-only copy.

    Matrices within ``1e-6`` of SO(3) are snapped back onto it via the
    orthogonal polar factor; anything further away is rejected.
    """
    m = np.array(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("rotation contains non-finite values")
    defect = rotation_defect(m)
    if defect > RENORMALIZE_TOL:
        raise ValidationError(f"matrix is not a rotation (defect {defect:.3g})")
    if defect > ROTATION_TOL:
        m = _polar(m)
    m.setflags(write=False)
    return m


def rot_x(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula: rotation matrix for axis-angle vector ``omega``."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < 1e-8:
        # second-order Taylor expansion
        return np.eye(3) + k + 0.5 * k @ k
    return np.eye(3) + np.sin(theta) / theta * k + (1 - np.cos(theta)) / theta**2 * k @ k


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def project(K: Intrinsics, p) -> np.ndarray:
    """Project camera-frame point(s) to pixels.

    Accepts a single 3-vector or an ``(N, 3)`` array; returns the matching
    2-vector or ``(N, 2)`` array.
    """
    p = np.asarray(p, dtype=np.float64)
    pts = np.atleast_2d(p)
    z = pts[:, 2]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"point {i} has non-positive depth z={z[i]!r}: {pts[i].tolist()}")
    uv = np.stack([K.fx * pts[:, 0] / z + K.cx, K.fy * pts[:, 1] / z + K.cy], axis=1)
    return uv[0] if p.ndim == 1 else uv


def backproject(K: Intrinsics, uv, z) -> np.ndarray:
    """Lift pixel(s) ``uv`` to camera-frame point(s) at depth ``z``."""
    uv = np.asarray(uv, dtype=np.float64)
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(~(z_arr > 0)):
        raise DomainError(f"back-projection depth must be positive, got {z!r}")
    pix = np.atleast_2d(uv)
    zz = np.broadcast_to(z_arr, pix.shape[:1])
    out = np.stack([(pix[:, 0] - K.cx) / K.fx * zz, (pix[:, 1] - K.cy) / K.fy * zz, zz], axis=1)
    return out[0] if uv.ndim == 1 else out


def rotation_from_columns(r_x, r_y) -> np.ndarray:
    """Build a rotation whose first two columns follow ``r_x`` and ``r_y``.

    Gram-Schmidt: the first column is ``r_x`` normalized, the second is the
    part of ``r_y`` orthogonal to it, and the third is their cross product.
    """
    r_x = np.asarray(r_x, dtype=np.float64)
    r_y = np.asarray(r_y, dtype=np.float64)
    nx = np.linalg.norm(r_x)
    if not nx > 0:
        raise DegenerateError("r_x must be nonzero")
    c1 = r_x / nx
    ny = np.linalg.norm(r_y)
    if not ny > 0:
        raise DegenerateError("r_y must be nonzero")
    v = r_y / ny
    v = v - c1 * (c1 @ v)
    # second pass removes residual leakage for nearly parallel inputs
    v = v - c1 * (c1 @ v)
    nv = np.linalg.norm(v)
    if nv < 1e-12:
        raise DegenerateError("r_y is parallel to r_x")
    c2 = v / nv
    c3 = np.cross(c1, c2)
    return as_rotation(np.stack([c1, c2, c3], axis=1))


def geodesic_angle(R1, R2) -> float:
    """Angle of the relative rotation ``R1 R2^T`` in degrees.

    Uses ``atan2(sin, cos)``; equal to ``arccos((trace - 1) / 2)`` but keeps
    full precision near 0 and 180 degrees, where arccos loses half the digits.
    """
    M = np.asarray(R1, dtype=np.float64) @ np.asarray(R2, dtype=np.float64).T
    c = np.clip((np.trace(M) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


@dataclass(frozen=True)
class Pose9D:
    """Metric pose: rotation, translation (m) and full box size (m)."""

    rotation: np.ndarray
    translation: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))
        size = _frozen(self.size, (3,), "size")
        if np.any(size <= 0):
            raise ValidationError(f"size components must be positive, got {size.tolist()}")
        object.__setattr__(self, "size", size)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.size))


@dataclass(frozen=True)
class ScaleAgnosticPose:
    """Pose with translation and size expressed in units of the box diagonal."""

    rotation: np.ndarray
    t_norm: np.ndarray
    s_norm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation))
        object.__setattr__(self, "t_norm", _frozen(self.t_norm, (3,), "t_norm"))
        s = _frozen(self.s_norm, (3,), "s_norm")
        if np.any(s <= 0):
            raise ValidationError(f"s_norm components must be positive, got {s.tolist()}")
        if abs(np.linalg.norm(s) - 1.0) > ROTATION_TOL:
            raise ValidationError(f"s_norm must have unit norm, got {np.linalg.norm(s)!r}")
        object.__setattr__(self, "s_norm", s)
