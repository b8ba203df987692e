"""Versioned YAML configuration for the command-line tools.

Every section is optional and falls back to the defaults below. Unknown
keys and ill-typed values raise :class:`ConfigError` naming the dotted
field path and its line in the file.

Example::

    version: 1
    seed: 0
    generator:
      n_scenes: 2
      n_objects: 3
      shapes:
        - {primitive: box, category: box, extents: [1.0, 2.0, 1.5]}
    noise:
      b_range: [0.001, 0.1]
    solver:
      max_iterations: 100
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .metrics import EvalOptions
from .synth import NoiseSpec
from .solvers import SolverConfig

CONFIG_VERSION = 1
SEED_ENV = "LMMPOSE_SEED"

DEFAULT_SHAPES = (
    {"primitive": "box", "category": "box", "extents": [1.0, 2.0, 1.5]},
    {"primitive": "cylinder", "category": "can", "extents": [1.0, 1.6, 1.0]},
    {"primitive": "composite", "category": "mug", "extents": [1.0, 1.0, 1.0]},
    {"primitive": "ellipsoid", "category": "bowl", "extents": [1.0, 0.6, 1.0]},
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_scenes: int = 1
    n_objects: int = 3
    n_points: int = 200
    intrinsics: tuple = (500.0, 500.0, 320.0, 240.0)
    image_size: tuple = (640, 480)
    d_range: tuple = (0.15, 0.35)
    depth_range: tuple = (0.6, 1.2)
    rotation: str = "random"
    center: str = "random"
    s_in: float = 256.0
    shapes: tuple = DEFAULT_SHAPES

    def __post_init__(self):
        for name in ("n_scenes", "n_objects"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_points < 8:
            raise ConfigError(f"n_points must be >= 8, got {self.n_points}")
        for name in ("d_range", "depth_range"):
            r = getattr(self, name)
            if len(r) != 2 or not 0 < r[0] <= r[1]:
                raise ConfigError(f"{name} must be [lo, hi] with 0 < lo <= hi, got {list(r)}")
        if len(self.intrinsics) != 4 or len(self.image_size) != 2:
            raise ConfigError("intrinsics needs [fx, fy, cx, cy] and image_size [width, height]")
        if self.rotation not in ("random", "identity"):
            raise ConfigError(f"rotation must be 'random' or 'identity', got {self.rotation!r}")
        if self.center not in ("random", "principal"):
            raise ConfigError(f"center must be 'random' or 'principal', got {self.center!r}")
        if not self.shapes:
            raise ConfigError("shapes must not be empty")


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold_px: float = 2.0
    rounds: int = 200


@dataclass(frozen=True)
class BenchConfig:
    kind: str = "ablation"  # or "sap"
    n_trials: int = 50
    base_seed: int = 0
    variants: tuple = (
        {"name": "weighted", "solver": {"use_uncertainty_weights": True}},
        {"name": "unweighted", "solver": {"use_uncertainty_weights": False}},
    )
    # SAP comparison: metric pipeline's diameter guess ("prior" or "exact")
    metric_d: str = "prior"
    curve_thresholds: tuple = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class Config:
    version: int = CONFIG_VERSION
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    noise: NoiseSpec = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    thresholds: EvalOptions = field(default_factory=EvalOptions)
    bench: BenchConfig = field(default_factory=BenchConfig)


_SECTIONS = {
    "generator": GeneratorConfig,
    "noise": NoiseSpec,
    "solver": SolverConfig,
    "ransac": RansacConfig,
    "thresholds": EvalOptions,
    "bench": BenchConfig,
}

_SHAPE_KEYS = {"primitive": str, "category": str, "extents": list}
_VARIANT_KEYS = {"name": str, "solver": dict}


class _Located:
    """Parsed YAML value plus a map from dotted path to 1-based line number."""

    def __init__(self, node):
        self.lines = {}
        self.value = self._convert(node, "")

    def _convert(self, node, path):
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                sub = f"{path}.{key}" if path else key
                self.lines[sub] = k.start_mark.line + 1
                out[key] = self._convert(v, sub)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._convert(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return yaml.safe_load(yaml.serialize(node))

    def error(self, path, msg):
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        return ConfigError(f"{path}{where}: {msg}")


def _check_type(loc, path, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise loc.error(path, f"expected {type(default).__name__}, got {type(value).__name__} {value!r}")


def _build(loc, path, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise loc.error(path, f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key not in known:
            raise loc.error(sub, f"unknown field; expected one of {sorted(known)}")
        default = getattr(cls(), key)
        _check_type(loc, sub, value, default)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    if cls is GeneratorConfig and "shapes" in kwargs:
        for i, s in enumerate(kwargs["shapes"]):
            _check_keys(loc, f"{path}.shapes[{i}]", s, _SHAPE_KEYS, required=("primitive", "category"))
    if cls is BenchConfig and "variants" in kwargs:
        if not kwargs["variants"]:
            raise loc.error(f"{path}.variants", "at least one variant is required")
        for i, v in enumerate(kwargs["variants"]):
            _check_keys(loc, f"{path}.variants[{i}]", v, _VARIANT_KEYS, required=("name",))
            _build(loc, f"{path}.variants[{i}].solver", SolverConfig, v.get("solver"))
    try:
        return cls(**kwargs)
    except (ConfigError, ValueError, TypeError) as exc:
        msg = str(exc)
        field_ = next((k for k in kwargs if msg.startswith(k)), None)
        raise loc.error(f"{path}.{field_}" if field_ else path, msg) from None


def _check_keys(loc, path, d, allowed, required=()):
    if not isinstance(d, dict):
        raise loc.error(path, "expected a mapping")
    for k, v in d.items():
        if k not in allowed:
            raise loc.error(f"{path}.{k}", f"unknown field; expected one of {sorted(allowed)}")
        if not isinstance(v, allowed[k]):
            raise loc.error(f"{path}.{k}", f"expected {allowed[k].__name__}")
    for k in required:
        if k not in d:
            raise loc.error(path, f"missing required field {k!r}")


def parse_config(text: str, source: str = "<config>") -> Config:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if node is None:
        return Config(seed=default_seed())
    loc = _Located(node)
    data = loc.value
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    allowed = {"version", "seed", *_SECTIONS}
    for key in data:
        if key not in allowed:
            raise loc.error(key, f"unknown field; expected one of {sorted(allowed)}")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise loc.error("version", f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
    seed = data.get("seed", default_seed())
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise loc.error("seed", "expected an integer")
    kwargs = {"seed": seed}
    for name, cls in _SECTIONS.items():
        if name in data:
            if name == "noise" and data[name] is None:
                continue
            kwargs[name] = _build(loc, name, cls, data[name])
    return Config(**kwargs)


def load_config(path) -> Config:
    if path is None:
        return Config(seed=default_seed())
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), str(path))


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"environment variable {SEED_ENV} must be an integer, got {raw!r}") from None
