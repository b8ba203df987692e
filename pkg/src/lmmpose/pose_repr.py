"""Scale-agnostic pose algebra.

Translation and size are divided by the box diagonal ``d = ||size||``; the
translation is further encoded relative to the 2D detection box so that a
regressor never sees absolute pixel positions or crop resolutions.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, ValidationError
from .geom import Intrinsics, Pose9D, ScaleAgnosticPose, backproject


@dataclass(frozen=True)
class DetectionBox:
    """2D detection: center, width/height and the square input size of the crop."""

    c_x: float
    c_y: float
    w_box: float
    h_box: float
    s_in: float

    def __post_init__(self):
        for name in ("c_x", "c_y", "w_box", "h_box", "s_in"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"detection box {name} must be finite")
            object.__setattr__(self, name, v)
        if self.w_box <= 0 or self.h_box <= 0 or self.s_in <= 0:
            raise ValidationError("w_box, h_box and s_in must be positive")

    @property
    def s_box(self) -> float:
        return max(self.w_box, self.h_box)


@dataclass(frozen=True)
class TranslationParams:
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for name in ("dx", "dy", "dz"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"translation parameter {name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


class SizeCodebook(dict):
    """Mapping ``category -> s_avg`` (mean normalized size)."""

    def __init__(self, entries: Mapping[str, Iterable[float]] = ()):
        super().__init__()
        for cat, s in dict(entries).items():
            self[cat] = s

    def __setitem__(self, category, s_avg):
        s = np.array(s_avg, dtype=np.float64)
        if s.shape != (3,) or not np.all(np.isfinite(s)):
            raise ValidationError(f"codebook entry {category!r} must be a finite 3-vector")
        if np.any(s <= 0) or np.linalg.norm(s) > 1 + 1e-9:
            raise ValidationError(
                f"codebook entry {category!r} must be positive with norm <= 1, got {s.tolist()}"
            )
        s.setflags(write=False)
        super().__setitem__(str(category), s)

    def lookup(self, category) -> np.ndarray:
        try:
            return self[category]
        except KeyError:
            raise KeyError(f"category {category!r} not in size codebook (have {sorted(self)})") from None

    def to_json(self) -> dict:
        return {cat: [float(v) for v in self[cat]] for cat in sorted(self)}


def normalize_pose(pose: Pose9D) -> tuple[ScaleAgnosticPose, float]:
    d = float(np.linalg.norm(pose.size))
    sap = ScaleAgnosticPose(pose.rotation, pose.translation / d, pose.size / d)
    return sap, d


def denormalize_pose(sap: ScaleAgnosticPose, d: float) -> Pose9D:
    if not d > 0:
        raise DomainError(f"diameter must be positive, got {d!r}")
    return Pose9D(sap.rotation, d * sap.t_norm, d * sap.s_norm)


def encode_translation(o, t_z_norm: float, box: DetectionBox) -> TranslationParams:
    """Express projected center ``o`` and normalized depth relative to ``box``."""
    o_x, o_y = np.asarray(o, dtype=np.float64)
    return TranslationParams(
        (o_x - box.c_x) / box.w_box,
        (o_y - box.c_y) / box.h_box,
        t_z_norm * box.s_box / box.s_in,
    )


def decode_translation(params: TranslationParams, box: DetectionBox, K: Intrinsics) -> np.ndarray:
    """Invert :func:`encode_translation` and back-project to a normalized translation."""
    o_x = params.dx * box.w_box + box.c_x
    o_y = params.dy * box.h_box + box.c_y
    t_z_norm = params.dz * box.s_in / box.s_box
    if not t_z_norm > 0:
        raise DomainError(f"decoded normalized depth must be positive, got {t_z_norm!r}")
    return backproject(K, np.array([o_x, o_y]), t_z_norm)


def encode_size(s_norm, category, codebook: SizeCodebook) -> np.ndarray:
    return np.asarray(s_norm, dtype=np.float64) - codebook.lookup(category)


def decode_size(s_out, category, codebook: SizeCodebook) -> np.ndarray:
    return np.asarray(s_out, dtype=np.float64) + codebook.lookup(category)


def compute_codebook(scenes, categories=None) -> SizeCodebook:
    """Per-category mean of ground-truth normalized sizes over all scene objects.

    ``categories`` optionally lists categories that must be present; any
    without an instance raises ``ValueError`` naming them.
    """
    acc = defaultdict(list)
    for scene in scenes:
        for obj in scene.objects:
            acc[obj.shape.category].append(obj.gt.size / np.linalg.norm(obj.gt.size))
    missing = sorted(set(categories or ()) - set(acc))
    if missing:
        raise ValueError(f"no instances for categories: {', '.join(missing)}")
    if not acc:
        raise ValueError("no instances found; cannot build a size codebook")
    return SizeCodebook({cat: np.mean(np.stack(v), axis=0) for cat, v in sorted(acc.items())})
