"""Pose solvers for 2D pixel / 3D NOCS correspondences.

The main entry point, :func:`solve_lmm_pnp`, minimizes the expected L1
reprojection error of the per-point Laplacian mixtures with a classical
optimizer: a DLT initialization followed by Levenberg-Marquardt on an
iteratively reweighted least-squares model of the L1 cost. Each point is
weighted by the fused precision of its mixture, so confident correspondences
dominate the fit. When the DLT is rank deficient because most visible points
sit on one face, a plane homography supplies the start instead.

All solves happen in normalized units: NOCS points live in a box of
diagonal 1, so the recovered translation is ``t / d`` and the camera-frame
point for NOCS coordinate ``x`` is ``R @ x + t_norm``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import lmm
from .errors import DegenerateError, SolverFailure, ValidationError
from .geom import Intrinsics, _polar, as_rotation, project, so3_exp

log = logging.getLogger(__name__)

MIN_PNP_POINTS = 6


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pixels ``(N, 2)`` paired with per-point NOCS mixtures under intrinsics ``K``."""

    pixels: np.ndarray
    mixture: lmm.LaplacianMixture
    intrinsics: Intrinsics

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.shape != (len(self.mixture), 2):
            raise ValidationError(f"pixels must have shape ({len(self.mixture)}, 2), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("pixels contain non-finite values")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def mask(self) -> np.ndarray:
        return self.mixture.mask

    def subset(self, keep) -> "CorrespondenceSet":
        """Same correspondences with points outside ``keep`` marked invisible."""
        mask = self.mask & np.asarray(keep, dtype=bool)
        comps = [lmm.LaplacianMap(c.mu, c.sigma2, mask, floor=c.floor) for c in self.mixture.components]
        return CorrespondenceSet(self.pixels, lmm.LaplacianMixture(*comps, self.mixture.weights), self.intrinsics)


REFERENCE_FOCAL_PX = 500.0


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    convergence_tol: float = 1e-10
    # IRLS L1 floor in pixels at REFERENCE_FOCAL_PX; scales with the focal
    # length so that resizing the image leaves the solution unchanged
    huber_like_eps: float = 1e-6
    mc_samples: int = 64
    seed: int = 0
    use_uncertainty_weights: bool = True
    # "l1" is the Laplacian objective; "l2" the squared-residual (Gaussian) ablation
    loss: str = "l1"
    initial_damping: float = 1e-3

    def __post_init__(self):
        if self.max_iterations < 1 or self.mc_samples < 1:
            raise ValidationError("max_iterations and mc_samples must be positive")
        if not (self.convergence_tol > 0 and self.huber_like_eps > 0 and self.initial_damping > 0):
            raise ValidationError("tolerances and damping must be positive")
        if self.loss not in ("l1", "l2"):
            raise ValidationError(f"loss must be 'l1' or 'l2', got {self.loss!r}")


@dataclass(frozen=True)
class PoseEstimate:
    rotation: np.ndarray
    t_norm: np.ndarray
    objective: float = 0.0
    inlier_mask: np.ndarray = None
    iterations_used: int = 0
    cost_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation))
        t = np.array(self.t_norm, dtype=np.float64)
        t.setflags(write=False)
        object.__setattr__(self, "t_norm", t)
        if self.objective < 0:
            raise ValidationError("objective must be nonnegative")


# -- Umeyama ---------------------------------------------------------------


def umeyama(src, dst, with_scale: bool = True):
    """Least-squares similarity ``dst ~ scale * R @ src + t``.

    Parameters
    ----------
    src, dst : (N, 3) array_like
        Corresponding points, N >= 3 and not collinear.
    with_scale : bool
        If False the scale is fixed to 1 (rigid alignment).

    Returns
    -------
    scale : float
    R : (3, 3) ndarray, det(R) = +1
    t : (3,) ndarray
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValidationError(f"src and dst must both be (N, 3), got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 3:
        raise DegenerateError(f"umeyama needs at least 3 points, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.sum(xs**2) / n
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    if d[0] <= 0 or d[1] <= 1e-12 * d[0]:
        raise DegenerateError("rank-deficient covariance: points are collinear or coincident")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    R = u @ np.diag(sign) @ vt
    scale = float(np.sum(d * sign) / var_s) if with_scale else 1.0
    t = mu_d - scale * R @ mu_s
    return scale, as_rotation(R), t


# -- DLT initialization ----------------------------------------------------


def _normalized_rays(K: Intrinsics, pixels):
    return np.stack([(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy], axis=1)


def _solve_translation(R, X, rays):
    """Linear least squares for t given R: rays ~ (R X + t)_xy / (R X + t)_z."""
    y = X @ R.T
    n = len(X)
    A = np.zeros((2 * n, 3))
    b = np.empty(2 * n)
    A[0::2, 0] = -1.0
    A[0::2, 2] = rays[:, 0]
    A[1::2, 1] = -1.0
    A[1::2, 2] = rays[:, 1]
    b[0::2] = y[:, 0] - rays[:, 0] * y[:, 2]
    b[1::2] = y[:, 1] - rays[:, 1] * y[:, 2]
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _dlt_system(Xn, rays):
    n = len(Xn)
    Xh = np.hstack([Xn, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -rays[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -rays[:, 1:] * Xh
    return A


def dlt_pose(points, pixels, K: Intrinsics, weights=None, robust_iterations: int = 0):
    """Linear pose from >= 6 non-coplanar 3D points and their pixels.

    ``weights`` scale each point's pair of DLT rows; ``robust_iterations``
    further reweights rows by the inverse algebraic residual (an IRLS
    approximation of L1 on the linear system). Returns ``(R, t)``.

    Raises :class:`DegenerateError` for too few or coplanar points, or when
    the hypothesis places the object behind the camera.
    """
    X = np.asarray(points, dtype=np.float64)
    n = len(X)
    if n < MIN_PNP_POINTS:
        raise DegenerateError(f"DLT needs at least {MIN_PNP_POINTS} points, got {n}")
    centroid = X.mean(axis=0)
    Xc = X - centroid
    sv = np.linalg.svd(Xc, compute_uv=False)
    if sv[0] <= 0 or sv[2] < 1e-9 * sv[0]:
        raise DegenerateError("points are coplanar (or collinear); DLT is under-determined")
    scale = np.sqrt(np.mean(np.sum(Xc**2, axis=1)))
    rays = _normalized_rays(K, pixels)
    A = _dlt_system(Xc / scale, rays)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    row_w = np.repeat(w, 2)
    for it in range(robust_iterations + 1):
        _, s, vt = np.linalg.svd(A * row_w[:, None])
        if s[-2] < 1e-12 * s[0]:
            raise DegenerateError("DLT system has a multi-dimensional null space")
        P = vt[-1]
        if it < robust_iterations:
            res = np.abs(A @ P).reshape(n, 2).sum(axis=1)
            row_w = np.repeat(w / np.maximum(res, 1e-8 * max(res.max(), 1e-300)), 2)
            row_w /= row_w.max()
    P = P.reshape(3, 4)
    # undo the 3D normalization: x = P' [ (X - c)/s ; 1 ]
    M = P[:, :3] / scale
    p4 = P[:, 3] - M @ centroid
    if M[2] @ centroid + p4[2] < 0:
        M, p4 = -M, -p4
    # the depth row of M is poorly conditioned for small objects (weak
    # perspective); rebuild it from the two image rows
    r1, r2 = M[0], M[1]
    lam = 0.5 * (np.linalg.norm(r1) + np.linalg.norm(r2))
    if not lam > 0:
        raise DegenerateError("DLT produced a zero rotation block")
    R = _polar(np.stack([r1, r2, np.cross(r1, r2) / lam]) / lam)
    t = _solve_translation(R, X, rays)
    if (centroid @ R[2] + t[2]) <= 0:
        raise DegenerateError("DLT hypothesis places the object behind the camera")
    return as_rotation(R), t


def dominant_plane(X, tol: float = 1e-3, trials: int = 300, seed=0):
    """Largest subset of ``X`` within ``tol`` of a common plane (>= 4 points).

    Planes are proposed from point triples (all of them when few, otherwise a
    seeded sample) and refit by SVD on their inliers. Returns a boolean mask.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n < 4:
        raise DegenerateError(f"a plane needs at least 4 points, got {n}")
    if n <= 20:
        triples = [(i, j, k) for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n)]
    else:
        rng = np.random.default_rng(seed)
        triples = [rng.choice(n, 3, replace=False) for _ in range(trials)]
    best = None
    for tri in triples:
        a, b, c = X[list(tri)]
        normal = np.cross(b - a, c - a)
        nn = np.linalg.norm(normal)
        if nn < 1e-12:
            continue
        inl = np.abs((X - a) @ (normal / nn)) < tol
        if best is None or inl.sum() > best.sum():
            best = inl
    if best is None or best.sum() < 4:
        raise DegenerateError("no plane holds 4 or more points")
    return best


def planar_pose(points, pixels, K: Intrinsics):
    """Pose from >= 4 coplanar points through the plane-to-image homography.

    Used when the points (or most of them) lie on one face, where the
    12-unknown DLT is rank deficient but calibrated pose is still determined.
    """
    X = np.asarray(points, dtype=np.float64)
    if len(X) < 4:
        raise DegenerateError(f"planar pose needs at least 4 points, got {len(X)}")
    c = X.mean(axis=0)
    _, sv, vt = np.linalg.svd(X - c)
    if sv[1] < 1e-9 * sv[0]:
        raise DegenerateError("points are collinear")
    Q = vt.T
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    ab = (X - c) @ Q[:, :2]
    s = np.sqrt(np.mean(np.sum(ab**2, axis=1)))
    ab = ab / s
    rays = _normalized_rays(K, pixels)
    n = len(X)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2], A[0::2, 2] = ab, 1.0
    A[0::2, 6:8], A[0::2, 8] = -rays[:, :1] * ab, -rays[:, 0]
    A[1::2, 3:5], A[1::2, 5] = ab, 1.0
    A[1::2, 6:8], A[1::2, 8] = -rays[:, 1:] * ab, -rays[:, 1]
    _, sa, vta = np.linalg.svd(A)
    if sa[-2] < 1e-12 * sa[0]:
        raise DegenerateError("homography system has a multi-dimensional null space")
    H = vta[-1].reshape(3, 3)
    lam = 0.5 * (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    H = H / lam
    if H[2, 2] < 0:
        H = -H
    r1, r2 = H[:, 0], H[:, 1]
    Rp = _polar(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = as_rotation(Rp @ Q.T)
    t = _solve_translation(R, X, rays)
    if np.any(X @ R.T @ [0, 0, 1] + t[2] <= 0):
        raise DegenerateError("planar hypothesis places points behind the camera")
    return R, t


def planar_init(X, uv, K: Intrinsics, tol: float = 1e-3, seed=0):
    """Planar pose from the dominant plane of ``X``."""
    on_plane = dominant_plane(X, tol, seed=seed)
    return planar_pose(X[on_plane], uv[on_plane], K)


def _solver_points(corr: CorrespondenceSet, use_weights: bool):
    """3D points and per-point precision (zero on masked points)."""
    if use_weights:
        return lmm.fuse(corr.mixture)
    return lmm.mixture_mean(corr.mixture), corr.mask.astype(np.float64)


def _loss_weights(precision, vis, loss):
    """Per-point weights matched to the residual power.

    An L1 cost scales each residual by ``1/b``, i.e. ``sqrt(precision)``;
    an L2 cost by ``1/sigma2``. Normalized to mean one over visible points.
    """
    w = np.asarray(precision, dtype=np.float64)[vis]
    if loss == "l1":
        w = np.sqrt(w)
    m = w.mean()
    return w / m if m > 0 else np.ones_like(w)


def dlt_init(corr: CorrespondenceSet, use_uncertainty_weights: bool = True) -> PoseEstimate:
    """DLT estimate from the visible mixture means.

    With ``use_uncertainty_weights`` the fused means are used and each
    point's rows are scaled by ``sqrt(precision)``; otherwise plain mixture
    means with equal rows.
    """
    vis = corr.mask
    if vis.sum() < MIN_PNP_POINTS:
        raise DegenerateError(f"need at least {MIN_PNP_POINTS} visible points, got {int(vis.sum())}")
    X, prec = _solver_points(corr, use_uncertainty_weights)
    w = _loss_weights(prec, vis, "l1")
    try:
        R, t = dlt_pose(X[vis], corr.pixels[vis], corr.intrinsics, weights=w)
    except DegenerateError as exc:
        if "coplanar" in str(exc) or "null space" in str(exc):
            raise
        # gross outliers can flip the linear solution; retry with IRLS rows
        R, t = dlt_pose(X[vis], corr.pixels[vis], corr.intrinsics, weights=w, robust_iterations=10)
    return PoseEstimate(R, t, inlier_mask=vis.copy())


# -- robust refinement -----------------------------------------------------


def _residuals(R, t, X, uv, K):
    Y = X @ R.T + t
    if np.any(Y[:, 2] <= 0):
        return None, Y
    return project(K, Y) - uv, Y


def _cost(r, p, loss):
    if loss == "l1":
        return float(np.sum(p[:, None] * np.abs(r)))
    return float(np.sum(p[:, None] * r**2))


def _jacobian(R, X, Y, K):
    """d residual / d (omega, t) for the left perturbation R <- exp(omega) R."""
    n = len(X)
    x, y, z = Y.T
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = K.fx / z
    dpi[:, 0, 2] = -K.fx * x / z**2
    dpi[:, 1, 1] = K.fy / z
    dpi[:, 1, 2] = -K.fy * y / z**2
    rx = X @ R.T
    dY = np.zeros((n, 3, 6))
    # d(omega x rx)/d omega = -[rx]_x
    dY[:, 0, 1], dY[:, 0, 2] = rx[:, 2], -rx[:, 1]
    dY[:, 1, 0], dY[:, 1, 2] = -rx[:, 2], rx[:, 0]
    dY[:, 2, 0], dY[:, 2, 1] = rx[:, 1], -rx[:, 0]
    dY[:, :, 3:] = np.eye(3)
    return np.einsum("nij,njk->nik", dpi, dY)


def refine_pose(R, t, X, uv, K: Intrinsics, point_weights, cfg: SolverConfig):
    """Levenberg-Marquardt on the weighted L1 (or L2) reprojection cost.

    Returns ``(R, t, iterations, cost_history)``. Each LM step solves the
    IRLS quadratic model with Marquardt damping and is accepted only if the
    true cost decreases, so ``cost_history`` is non-increasing.
    """
    p = np.asarray(point_weights, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    r, Y = _residuals(R, t, X, uv, K)
    if r is None:
        raise DegenerateError("initial pose places points behind the camera")
    cost = _cost(r, p, cfg.loss)
    history = [cost]
    eps = cfg.huber_like_eps * np.sqrt(K.fx * K.fy) / REFERENCE_FOCAL_PX
    damping = cfg.initial_damping
    iters = 0
    for iters in range(1, cfg.max_iterations + 1):
        if cfg.loss == "l1":
            w = p[:, None] / np.maximum(np.abs(r), eps)
        else:
            w = np.broadcast_to(p[:, None], r.shape)
        J = _jacobian(R, X, Y, K)
        A = np.einsum("nji,nj,njk->ik", J, w, J)
        g = np.einsum("nji,nj,nj->i", J, w, r)
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        step_norm = None
        while damping < 1e12:
            try:
                delta = -np.linalg.solve(A + damping * np.diag(diag), g)
            except np.linalg.LinAlgError:
                damping *= 3.0
                continue
            R_new = so3_exp(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new, Y_new = _residuals(R_new, t_new, X, uv, K)
            if r_new is not None:
                cost_new = _cost(r_new, p, cfg.loss)
                if cost_new <= cost:
                    R, t, r, Y, cost = R_new, t_new, r_new, Y_new, cost_new
                    history.append(cost)
                    damping *= 0.3
                    step_norm = float(np.linalg.norm(delta))
                    break
            damping *= 3.0
        if step_norm is None or step_norm < cfg.convergence_tol:
            break
    else:
        log.debug("LM hit the iteration cap (%d)", cfg.max_iterations)
    return as_rotation(R), t, iters, tuple(history)


def solve_lmm_pnp(corr: CorrespondenceSet, cfg: SolverConfig = SolverConfig(), init: PoseEstimate = None) -> PoseEstimate:
    """Pose minimizing the (uncertainty-weighted) L1 reprojection of the mixtures.

    With ``cfg.use_uncertainty_weights`` the 3D points are the precision-fused
    mixture means and each point is weighted by its fused precision (square
    root of it for the L1 loss); otherwise plain mixture means with unit
    weights are used. The returned
    ``objective`` is the Monte Carlo expected L1 reprojection error at the
    solution.
    """
    vis = corr.mask
    X, prec = _solver_points(corr, cfg.use_uncertainty_weights)
    if init is None:
        try:
            init = dlt_init(corr, cfg.use_uncertainty_weights)
        except DegenerateError as exc:
            if vis.sum() < MIN_PNP_POINTS:
                raise
            if "coplanar" in str(exc) or "null space" in str(exc):
                init = PoseEstimate(*planar_init(X[vis], corr.pixels[vis], corr.intrinsics, seed=cfg.seed))
            else:
                init = PoseEstimate(*lmeds_init(X[vis], corr.pixels[vis], corr.intrinsics, cfg.seed))
    p = _loss_weights(prec, vis, cfg.loss)
    args = (X[vis], corr.pixels[vis], corr.intrinsics, p, cfg)
    try:
        R, t, iters, history = refine_pose(init.rotation, init.t_norm, *args)
    except DegenerateError:
        try:
            R0, t0 = dlt_pose(X[vis], corr.pixels[vis], corr.intrinsics, weights=p, robust_iterations=10)
            R, t, iters, history = refine_pose(R0, t0, *args)
        except DegenerateError:
            R0, t0 = lmeds_init(X[vis], corr.pixels[vis], corr.intrinsics, cfg.seed)
            R, t, iters, history = refine_pose(R0, t0, *args)
    est = PoseEstimate(R, t, inlier_mask=vis.copy(), iterations_used=iters, cost_history=history)
    return replace(est, objective=expected_objective(corr, est, cfg.mc_samples, cfg.seed))


def lmeds_init(X, uv, K: Intrinsics, seed, rounds: int = 200):
    """Best 6-point DLT hypothesis by median reprojection error.

    Fallback start for when gross outliers break the all-points DLT.
    """
    rng = np.random.default_rng(seed)
    best, best_err = None, np.inf
    for _ in range(rounds):
        pick = rng.choice(len(X), MIN_PNP_POINTS, replace=False)
        try:
            R, t = dlt_pose(X[pick], uv[pick], K)
        except DegenerateError:
            continue
        Y = X @ R.T + t
        if np.any(Y[:, 2] <= 0):
            continue
        med = float(np.median(np.linalg.norm(project(K, Y) - uv, axis=1)))
        if med < best_err:
            best, best_err = (R, t), med
    if best is None:
        raise DegenerateError("no 6-point DLT hypothesis places every point in front of the camera")
    return best


def expected_objective(corr: CorrespondenceSet, pose: PoseEstimate, n: int, seed) -> float:
    """Monte Carlo estimate of the mean expected L1 reprojection error.

    ``(1/N) sum_i E_{x ~ eta_i} ||pi(K (R x + t)) - u_i||_1`` over visible
    points. Samples landing at non-positive depth are skipped (logged).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    vis = corr.mask
    if not vis.any():
        return 0.0
    xs = lmm.sample(corr.mixture, n, seed)[:, vis]
    Y = xs @ pose.rotation.T + pose.t_norm
    K = corr.intrinsics
    z = Y[..., 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = K.fx * Y[..., 0] / zs + K.cx
    v = K.fy * Y[..., 1] / zs + K.cy
    uv = corr.pixels[vis]
    err = np.abs(u - uv[:, 0]) + np.abs(v - uv[:, 1])
    err = np.where(ok, err, 0.0)
    counts = ok.sum(axis=0)
    skipped = int(ok.size - ok.sum())
    if skipped:
        log.warning("expected_objective skipped %d samples behind the camera", skipped)
    used = counts > 0
    if not used.any():
        return float("inf")
    return float(np.mean(err.sum(axis=0)[used] / counts[used]))


# -- RANSAC ----------------------------------------------------------------


def ransac_pnp(
    corr: CorrespondenceSet,
    cfg: SolverConfig = SolverConfig(),
    inlier_threshold_px: float = 2.0,
    rounds: int = 200,
) -> PoseEstimate:
    """Minimal 6-point DLT hypotheses with reprojection consensus, then refine.

    The final refinement runs on the consensus set with uncertainty weights
    off; the inlier mask is recomputed at the refined pose.
    """
    vis_idx = np.flatnonzero(corr.mask)
    if len(vis_idx) < MIN_PNP_POINTS:
        raise DegenerateError(f"need at least {MIN_PNP_POINTS} visible points, got {len(vis_idx)}")
    mu, _ = lmm.fuse(corr.mixture)
    K = corr.intrinsics
    rng = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(rounds):
        pick = rng.choice(vis_idx, MIN_PNP_POINTS, replace=False)
        try:
            R, t = dlt_pose(mu[pick], corr.pixels[pick], K)
        except DegenerateError:
            continue
        inl = _inliers(R, t, mu, corr, inlier_threshold_px)
        score = (int(inl.sum()), -_inlier_error(R, t, mu, corr, inl))
        if best is None or score > best[0]:
            best = (score, R, t, inl)
    if best is None or best[0][0] < MIN_PNP_POINTS:
        raise SolverFailure("RANSAC found no hypothesis with at least 6 inliers")
    _, R, t, inl = best
    sub = corr.subset(inl)
    # a refinement from the minimal-sample pose; weights off by design
    init = PoseEstimate(R, t)
    try:
        init = PoseEstimate(*dlt_pose(mu[inl], corr.pixels[inl], K))
    except DegenerateError:
        pass
    refined = solve_lmm_pnp(sub, replace(cfg, use_uncertainty_weights=False), init=init)
    final_inl = _inliers(refined.rotation, refined.t_norm, mu, corr, inlier_threshold_px)
    if final_inl.sum() < MIN_PNP_POINTS:
        final_inl = inl
    return replace(refined, inlier_mask=final_inl)


def _inliers(R, t, mu, corr, thr):
    Y = mu @ R.T + t
    ok = corr.mask & (Y[:, 2] > 0)
    out = np.zeros(len(mu), dtype=bool)
    if ok.any():
        err = np.linalg.norm(project(corr.intrinsics, Y[ok]) - corr.pixels[ok], axis=1)
        out[np.flatnonzero(ok)] = err < thr
    return out


def _inlier_error(R, t, mu, corr, inl):
    if not inl.any():
        return np.inf
    Y = mu[inl] @ R.T + t
    return float(np.sum(np.linalg.norm(project(corr.intrinsics, Y) - corr.pixels[inl], axis=1)))
