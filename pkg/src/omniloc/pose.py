"""Depth-lifted 2D-3D correspondences, spherical PnP + RANSAC, and pose metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cameras import CameraModel, EquirectModel
from .geometry import RigidTransform, hat, so3_exp
from .p3p import bearing_residuals, solve_p3p_bearings

log = logging.getLogger(__name__)

# (translation m, rotation deg) per accuracy level
ACCURACY_THRESHOLDS = {"high": (0.25, 2.0), "medium": (0.5, 5.0), "low": (5.0, 10.0)}


class LocalizationError(RuntimeError):
    pass


@dataclass
class Correspondence:
    query_pixel: tuple[float, float]
    ref_pixel: tuple[float, float]
    lifted_point: np.ndarray
    bearing: np.ndarray


@dataclass
class RansacConfig:
    angular_threshold_rad: float = math.radians(0.5)
    max_iters: int = 10_000
    confidence: float = 0.999
    min_inliers: int = 4
    seed: int = 0


@dataclass
class RefineResult:
    pose: RigidTransform
    converged: bool
    iterations: int
    cost_trace: list[float] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]


@dataclass
class PnPResult:
    pose: RigidTransform
    inliers: np.ndarray
    iterations: int
    refine: RefineResult | None = None


# --- lifting -----------------------------------------------------------------


def depth_lookup(depth: np.ndarray, pixel, model: EquirectModel) -> float:
    """Nearest-pixel depth; ``pixel`` lives in ``model``'s resolution, which may
    differ from the depth map's (matches are often made on downscaled panoramas)."""
    h, w = depth.shape[:2]
    u = float(pixel[0]) * w / model.width
    v = float(pixel[1]) * h / model.height
    i = min(max(int(math.floor(v)), 0), h - 1)
    j = int(math.floor(u)) % w
    return float(depth[i, j])


def lift_reference(pixel, depth_map: np.ndarray, ref_pose: RigidTransform, model: EquirectModel):
    """World point seen at ``pixel`` of a reference panorama; None for invalid depth."""
    if not model.in_image(np.asarray(pixel, dtype=np.float64)):
        raise ValueError(f"pixel {tuple(pixel)} outside the reference image")
    z = depth_lookup(depth_map, pixel, model)
    if not (np.isfinite(z) and z > 0):
        return None
    d, _ = model.unproject(np.asarray(pixel, dtype=np.float64))
    return ref_pose.rotation @ (z * d) + ref_pose.translation


def build_correspondences(
    matches,
    query_model: CameraModel,
    depth_map: np.ndarray,
    ref_pose: RigidTransform,
    ref_model: EquirectModel,
) -> tuple[list[Correspondence], int]:
    """Turn (qu, qv, ru, rv) matches into correspondences; returns (kept, dropped)."""
    out, dropped = [], 0
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    dirs, valid = query_model.unproject(m[:, :2])
    for row, d, ok in zip(m, dirs, valid):
        if not ok or not ref_model.in_image(row[2:]):
            dropped += 1
            continue
        X = lift_reference(row[2:], depth_map, ref_pose, ref_model)
        if X is None:
            dropped += 1
            continue
        out.append(Correspondence((row[0], row[1]), (row[2], row[3]), X, d))
    return out, dropped


def _arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(corrs, tuple) and len(corrs) == 2:
        return np.asarray(corrs[0], dtype=np.float64), np.asarray(corrs[1], dtype=np.float64)
    b = np.array([c.bearing for c in corrs], dtype=np.float64).reshape(-1, 3)
    X = np.array([c.lifted_point for c in corrs], dtype=np.float64).reshape(-1, 3)
    return b, X


# --- refinement --------------------------------------------------------------


def angular_residuals(pose: RigidTransform, bearings, points):
    """Tangent-plane residual vectors r_i (|r_i| = angle) and their 3x6 Jacobians.

    Pose perturbation: R <- R·exp(ω), t <- t + R·δ, tangent ordered (ω, δ).
    """
    b = bearings / np.linalg.norm(bearings, axis=1, keepdims=True)
    p = (points - pose.translation) @ pose.rotation
    n = np.linalg.norm(p, axis=1)
    ph = p / n[:, None]
    c = np.einsum("ij,ij->i", b, ph)
    w = ph - c[:, None] * b
    s = np.linalg.norm(w, axis=1)
    theta = np.arctan2(s, c)
    small = s < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(small, 1.0 + theta**2 / 6.0, theta / s)
        uh = np.where(small[:, None], 0.0, w / s[:, None])
        k = np.where(small, 0.0, (s - theta * c) / s)  # sinθ·g'(θ)
    r = g[:, None] * w

    I = np.eye(3)
    J = np.empty((len(b), 3, 6))
    for i in range(len(b)):
        dph = (I - np.outer(ph[i], ph[i])) / n[i]
        P = I - np.outer(b[i], b[i])
        dtheta = c[i] * uh[i] - s[i] * b[i]
        dr_dp = (g[i] * P + k[i] * np.outer(uh[i], dtheta)) @ dph
        J[i, :, :3] = dr_dp @ hat(p[i])
        J[i, :, 3:] = -dr_dp
    return r, J, theta


def angular_cost(pose: RigidTransform, bearings, points) -> float:
    """Σ angle(b_i, Rᵀ(X_i − t))²."""
    return float(np.sum(bearing_residuals(pose, bearings, points) ** 2))


def angular_gradient(pose: RigidTransform, bearings, points) -> np.ndarray:
    b, X = np.asarray(bearings, float), np.asarray(points, float)
    r, J, _ = angular_residuals(pose, b, X)
    return 2.0 * np.einsum("nij,ni->j", J, r)


def perturb(pose: RigidTransform, xi: np.ndarray) -> RigidTransform:
    xi = np.asarray(xi, dtype=np.float64)
    return RigidTransform(
        pose.rotation @ so3_exp(xi[:3]), pose.translation + pose.rotation @ xi[3:]
    )


def refine_pose(
    pose: RigidTransform,
    correspondences,
    max_iters: int = 50,
    tol: float = 1e-15,
) -> RefineResult:
    """Levenberg-Marquardt on the summed squared bearing angles."""
    b, X = _arrays(correspondences)
    if len(b) < 4:
        raise LocalizationError("refinement needs at least 4 correspondences")
    cost = angular_cost(pose, b, X)
    trace = [cost]
    mu = 1e-6
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r, J, _ = angular_residuals(pose, b, X)
        Jf = J.reshape(-1, 6)
        H = Jf.T @ Jf
        grad = Jf.T @ r.reshape(-1)
        if np.linalg.matrix_rank(H, tol=1e-10 * max(np.abs(H).max(), 1e-300)) < 6:
            log.warning("refine_pose: rank-deficient normal equations")
            return RefineResult(pose, False, it, trace)
        if np.abs(grad).max() < 1e-14 or cost < 1e-30:
            converged = True
            break
        accepted = False
        while mu < 1e12:
            step = np.linalg.solve(H + mu * np.diag(np.diag(H)), -grad)
            cand = perturb(pose, step)
            c_new = angular_cost(cand, b, X)
            if c_new <= cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel = (cost - c_new) / max(cost, 1e-300)
        pose, cost = cand, c_new
        trace.append(cost)
        mu = max(mu / 10.0, 1e-12)
        if rel < tol or np.abs(step).max() < 1e-15:
            converged = True
            break
    else:
        log.warning("refine_pose: no convergence after %d iterations", max_iters)
    return RefineResult(pose, converged, it, trace)


# --- RANSAC ------------------------------------------------------------------


def _needed_iters(inlier_ratio: float, confidence: float, sample: int = 3) -> float:
    p_good = inlier_ratio**sample
    if p_good <= 0:
        return math.inf
    if p_good >= 1:
        return 1
    return math.log(1 - confidence) / math.log(1 - p_good)


def ransac_pnp(correspondences, config: RansacConfig | None = None, **overrides) -> PnPResult:
    """Robust camera-to-world pose from bearing/world-point pairs.

    Minimal samples go through the bearing P3P solver; a sample's candidates
    are scored by inlier count (angular residual below threshold). The winner
    is refined on its inliers and the inlier set re-evaluated.
    """
    cfg = replace(config or RansacConfig(), **overrides)
    b, X = _arrays(correspondences)
    n = len(b)
    if n < 4:
        raise LocalizationError(f"need at least 4 correspondences, got {n}")
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    rng = np.random.default_rng(cfg.seed)
    thr = cfg.angular_threshold_rad

    best_pose, best_count, best_err = None, 0, math.inf
    needed = cfg.max_iters
    it = 0
    while it < min(cfg.max_iters, needed):
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        for T in solve_p3p_bearings(b[idx], X[idx]):
            res = bearing_residuals(T, b, X)
            inl = res < thr
            count = int(inl.sum())
            err = float(np.sum(np.minimum(res, thr) ** 2))
            if count > best_count or (count == best_count and err < best_err):
                best_pose, best_count, best_err = T, count, err
                needed = _needed_iters(count / n, cfg.confidence)

    if best_pose is None or best_count < cfg.min_inliers:
        raise LocalizationError("localization failed: no model with enough inliers")

    inliers = np.flatnonzero(bearing_residuals(best_pose, b, X) < thr)
    pose, ref = best_pose, None
    for _ in range(3):
        ref = refine_pose(pose, (b[inliers], X[inliers]))
        new_inl = np.flatnonzero(bearing_residuals(ref.pose, b, X) < thr)
        if len(new_inl) < len(inliers):
            break
        pose = ref.pose
        if np.array_equal(new_inl, inliers):
            break
        inliers = new_inl
    return PnPResult(pose, inliers, it, ref)


# --- metrics -----------------------------------------------------------------


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, via atan2 for accuracy near 0 and 180°."""
    M = np.asarray(R_a).T @ np.asarray(R_b)
    c = (np.trace(M) - 1.0) / 2.0
    s = np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) / 2.0
    return float(np.clip(np.degrees(np.arctan2(s, c)), 0.0, 180.0))


def pose_errors(est: RigidTransform, gt: RigidTransform) -> tuple[float, float]:
    """(camera-center distance in m, rotation angle in degrees)."""
    return (
        float(np.linalg.norm(est.translation - gt.translation)),
        rotation_angle_deg(est.rotation, gt.rotation),
    )


def bucketize(trans_err: float, rot_err: float, thresholds=ACCURACY_THRESHOLDS) -> tuple[bool, bool, bool]:
    """(high, medium, low) accuracy flags; a level holds iff both errors are within it."""
    return tuple(
        bool(trans_err <= thresholds[k][0] and rot_err <= thresholds[k][1])
        for k in ("high", "medium", "low")
    )


def accuracy_table(errors: Sequence[tuple[float, float] | None]) -> dict[str, float]:
    """Percent of queries per accuracy level; ``None`` marks a failed localization."""
    n = len(errors)
    out = {}
    for j, key in enumerate(("high", "medium", "low")):
        hits = sum(1 for e in errors if e is not None and bucketize(*e)[j])
        out[key] = 100.0 * hits / n if n else 0.0
    return out
