"""Per-point Laplacian shape model over normalized object coordinates.

Each visible pixel carries a Laplace distribution per NOCS axis with mean
``mu`` and variance ``sigma2``; two such maps (from independent predictors)
form a two-component mixture. The Laplace scale is ``b = sqrt(sigma2 / 2)``
so that ``sigma2`` is the distribution's variance; :func:`laplace_scale` is
the only place that conversion lives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SIGMA2_FLOOR = 1e-8
MAX_LOG_STEP = 1.0
DEFAULT_WEIGHTS = (0.5, 0.5)


def laplace_scale(sigma2):
    """Laplace scale ``b`` for variance ``sigma2`` (Var = 2 b^2)."""
    return np.sqrt(np.asarray(sigma2) / 2.0)


@dataclass(frozen=True)
class LaplacianMap:
    """Means ``mu`` (N, 3), variances ``sigma2`` (N, 3) and visibility ``mask`` (N,).

    Variances below ``floor`` are raised to it; non-positive ones are rejected.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    mask: np.ndarray = None
    floor: float = field(default=SIGMA2_FLOOR, repr=False, compare=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        s2 = np.array(self.sigma2, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[1] != 3:
            raise ValidationError(f"mu must have shape (N, 3), got {mu.shape}")
        if s2.shape != mu.shape:
            raise ValidationError(f"sigma2 shape {s2.shape} does not match mu shape {mu.shape}")
        if not np.all(np.isfinite(mu)):
            raise ValidationError("mu contains non-finite values")
        if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
            raise ValidationError("sigma2 must be finite and strictly positive")
        s2 = np.maximum(s2, self.floor)
        if self.mask is None:
            mask = np.ones(len(mu), dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != (len(mu),):
                raise ValidationError(f"mask must have shape ({len(mu)},), got {mask.shape}")
        for name, arr in (("mu", mu), ("sigma2", s2), ("mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.mu)


@dataclass(frozen=True)
class LaplacianMixture:
    """Two Laplacian maps sharing points and visibility, with mixing weights."""

    component_dino: LaplacianMap
    component_conv: LaplacianMap
    weights: tuple = DEFAULT_WEIGHTS

    def __post_init__(self):
        a, b = self.component_dino, self.component_conv
        if len(a) != len(b):
            raise ValidationError(f"components disagree on point count: {len(a)} vs {len(b)}")
        if not np.array_equal(a.mask, b.mask):
            raise ValidationError("components must share the visibility mask")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (2,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights must be two nonnegative numbers summing to 1, got {self.weights}")
        object.__setattr__(self, "weights", (float(w[0]), float(w[1])))

    @property
    def components(self):
        return (self.component_dino, self.component_conv)

    @property
    def mask(self) -> np.ndarray:
        return self.component_dino.mask

    def __len__(self):
        return len(self.component_dino)

    @classmethod
    def single(cls, mu, sigma2, mask=None, floor=SIGMA2_FLOOR):
        """Mixture whose two components are the same map."""
        m = LaplacianMap(mu, sigma2, mask, floor=floor)
        return cls(m, m)


def aleatoric_loss(lmap: LaplacianMap, gt, lam: float, reduction: str = "sum"):
    """Laplacian aleatoric loss and its analytic gradients.

    Per visible entry: ``lam / sigma2 * |gt - mu| + log(sigma2)``, summed (or
    averaged over visible entries with ``reduction="mean"``).

    Returns
    -------
    loss : float
    grad_mu : (N, 3) ndarray
    grad_sigma2 : (N, 3) ndarray
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != lmap.mu.shape:
        raise ValidationError(f"gt shape {gt.shape} does not match mu shape {lmap.mu.shape}")
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam!r}")
    if reduction not in ("sum", "mean"):
        raise ValidationError(f"unknown reduction {reduction!r}")
    vis = lmap.mask[:, None].astype(np.float64)
    s2 = lmap.sigma2
    diff = gt - lmap.mu
    err = np.abs(diff)
    loss = vis * (lam * err / s2 + np.log(s2))
    grad_mu = vis * (-lam * np.sign(diff) / s2)
    grad_s2 = vis * (-lam * err / s2**2 + 1.0 / s2)
    total = loss.sum()
    if reduction == "mean":
        n = 3 * int(lmap.mask.sum())
        scale = 1.0 / n if n else 0.0
        total, grad_mu, grad_s2 = total * scale, grad_mu * scale, grad_s2 * scale
    return float(total), grad_mu, grad_s2


def optimal_sigma2(abs_err, lam: float, floor: float = SIGMA2_FLOOR):
    """Minimizer of ``lam*|e|/s + log(s)`` over ``s > 0``, i.e. ``lam*|e|``."""
    return np.maximum(lam * np.abs(abs_err), floor)


def fit_sigma2(lmap: LaplacianMap, gt, lam: float, lr: float = 0.5, max_steps: int = 10_000, tol: float = 1e-12):
    """Gradient descent on the variances alone (means held fixed).

    Steps are taken on ``log(sigma2)`` using the chain rule through the
    analytic ``grad_sigma2``; this is how a network regressing log-variance
    sees the loss. Each log step is capped at ``MAX_LOG_STEP``. Returns the
    fitted variances and the number of steps.
    """
    log_s2 = np.log(lmap.sigma2)
    gt = np.asarray(gt, dtype=np.float64)
    for step in range(1, max_steps + 1):
        cur = LaplacianMap(lmap.mu, np.exp(log_s2), lmap.mask, floor=lmap.floor)
        _, _, g_s2 = aleatoric_loss(cur, gt, lam)
        g = g_s2 * cur.sigma2
        # far below the optimum g ~ -lam|e|/sigma2 explodes; cap the log step
        delta = np.clip(lr * g, -MAX_LOG_STEP, MAX_LOG_STEP)
        new = np.maximum(log_s2 - delta, np.log(max(lmap.floor, 1e-300)))
        moved = np.max(np.abs(new - log_s2))
        log_s2 = new
        if moved < tol:
            break
    return np.exp(log_s2), step


def _pick_components(mixture: LaplacianMixture, rng, shape):
    return rng.random(shape) >= mixture.weights[0]


def sample(mixture: LaplacianMixture, count: int, seed) -> np.ndarray:
    """Draw ``count`` joint samples of all N points; returns ``(count, N, 3)``.

    Per point a component is picked with the mixing weights, then each axis
    is drawn from its Laplace distribution by inverse CDF.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    n = len(mixture)
    a, b = mixture.components
    second = _pick_components(mixture, rng, (count, n))[..., None]
    mu = np.where(second, b.mu, a.mu)
    scale = np.where(second, laplace_scale(b.sigma2), laplace_scale(a.sigma2))
    u = rng.random((count, n, 3)) - 0.5
    # rng.random() can return exactly 0, i.e. u = -0.5 and an infinite draw
    mag = np.minimum(np.abs(u), 0.5 - 2.0**-54)
    return mu - scale * np.sign(u) * np.log1p(-2.0 * mag)


def mixture_mean(mixture: LaplacianMixture) -> np.ndarray:
    """Mean of the mixture per point: weight-averaged component means."""
    (w1, w2), (a, b) = mixture.weights, mixture.components
    return w1 * a.mu + w2 * b.mu


def fuse(mixture: LaplacianMixture):
    """Precision-weighted summary of the mixture.

    Returns the per-axis precision-weighted mean ``(N, 3)`` and a per-point
    scalar precision ``w1/mean(sigma2_1) + w2/mean(sigma2_2)``; masked points
    get zero weight.
    """
    (w1, w2), (a, b) = mixture.weights, mixture.components
    p1, p2 = w1 / a.sigma2, w2 / b.sigma2
    mu = (p1 * a.mu + p2 * b.mu) / (p1 + p2)
    weight = w1 / a.sigma2.mean(axis=1) + w2 / b.sigma2.mean(axis=1)
    return mu, np.where(mixture.mask, weight, 0.0)


def nll(mixture: LaplacianMixture, point_index: int, x) -> float:
    """Negative log density of the mixture at point ``point_index``."""
    n = len(mixture)
    if not -n <= point_index < n:
        raise IndexError(f"point index {point_index} out of range for {n} points")
    x = np.asarray(x, dtype=np.float64)
    log_terms = []
    for w, comp in zip(mixture.weights, mixture.components):
        if w == 0:
            continue
        bb = laplace_scale(comp.sigma2[point_index])
        log_terms.append(np.log(w) + np.sum(-np.log(2 * bb) - np.abs(x - comp.mu[point_index]) / bb))
    return float(-np.logaddexp.reduce(log_terms))
