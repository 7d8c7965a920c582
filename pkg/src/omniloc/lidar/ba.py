"""Eigenvalue bundle adjustment over plane / edge features.

For a feature whose points P_k gather across frames, the point-to-feature
energy (1/N)·Σ(nᵀ(P_k − q))² is minimized by q = centroid and n = the
covariance eigenvector of the smallest eigenvalue, where it equals λ_min(A).
The pose-only cost is therefore Σ λ_min(A(poses)) over planes, and
Σ (λ2 + λ3)(A(poses)) over edges (distance-to-line energy).

The optimizer takes damped second-order steps on the pose tangent space. The
gradient is the eigenvalue sensitivity vᵀ(dA)v; the curvature combines the
point-to-feature Gauss-Newton term with the eigenvector-coupling term of
second-order eigenvalue perturbation. Steps are accepted only if the true
eigenvalue cost does not increase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import RigidTransform, so3_exp
from .features import VoxelFeature, eigh_desc

log = logging.getLogger(__name__)


class BAError(RuntimeError):
    pass


@dataclass
class BAOptions:
    max_iters: int = 50
    rel_tol: float = 1e-10
    init_damping: float = 1e-4
    fixed_first: bool = True


@dataclass
class BAResult:
    poses: list[RigidTransform]
    cost_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _clouds(clouds) -> list[np.ndarray]:
    return [getattr(c, "points", c) for c in clouds]


class _Problem:
    """Feature point lists regrouped per frame for fast re-evaluation."""

    def __init__(self, clouds, features: Sequence[VoxelFeature]):
        clouds = _clouds(clouds)
        self.n_frames = len(clouds)
        self.items = []
        for f in features:
            frames = f.members[:, 0].astype(np.int64)
            local = np.stack([clouds[u][i] for u, i in f.members]) if len(f.members) else np.zeros((0, 3))
            self.items.append((f.kind, frames, local))

    def world(self, poses, frames, local):
        R = np.stack([p.rotation for p in poses])[frames]
        t = np.stack([p.translation for p in poses])[frames]
        q = np.einsum("nij,nj->ni", R, local)
        return q, q + t

    def cost(self, poses) -> float:
        total = 0.0
        for kind, frames, local in self.items:
            _, P = self.world(poses, frames, local)
            total += feature_cost(kind, P)
        return total


def feature_cost(kind: str, P: np.ndarray) -> float:
    """λ_min (plane) or λ2 + λ3 (edge) of the feature covariance.

    Evaluated as the Rayleigh quotient mean((D·v)²) over the small-eigenvalue
    eigenvectors: equal to the eigenvalues, but accurate to relative rather than
    ‖A‖-absolute precision when the feature is nearly perfect.
    """
    D = P - P.mean(axis=0)
    A = D.T @ D / len(P)
    _, V = np.linalg.eigh(0.5 * (A + A.T))
    k = 1 if kind == "plane" else 2
    return float(np.mean(np.sum((D @ V[:, :k]) ** 2, axis=1)))


def ba_objective(poses: Sequence[RigidTransform], features: Sequence[VoxelFeature], clouds) -> float:
    """Σ λ_min over plane features + Σ (λ2 + λ3) over edge features."""
    return _Problem(clouds, features).cost(poses)


def point_to_feature_cost(kind, P, normal_or_dir, q) -> float:
    """The feature-parametrized energy (1/N)·Σ distance² from the feature.

    For planes: (1/N)·Σ (nᵀ(P − q))². For edges: mean squared distance to the
    line through q along the direction.
    """
    d = np.asarray(normal_or_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    X = np.asarray(P, dtype=np.float64) - q
    if kind == "plane":
        return float(np.mean((X @ d) ** 2))
    perp = X - np.outer(X @ d, d)
    return float(np.mean(np.sum(perp**2, axis=1)))


def _block_sum(F, frames, rows):
    out = np.zeros((F, rows.shape[1]))
    np.add.at(out, frames, rows)
    return out.reshape(-1)


def _normal_equations(problem: _Problem, poses):
    """Second-order model (H, g) of the cost around ``poses``: cost(ξ) ≈ c + 2gᵀξ + ξᵀHξ.

    H = Gauss-Newton term at frozen eigenvectors minus the eigenvector
    coupling term Σ b bᵀ / (λ_j − λ_k), which lets the feature direction
    follow the poses.
    """
    F = problem.n_frames
    H = np.zeros((6 * F, 6 * F))
    g = np.zeros(6 * F)
    for kind, frames, local in problem.items:
        q, P = problem.world(poses, frames, local)
        N = len(P)
        D = P - P.mean(axis=0)
        w, V = eigh_desc(D.T @ D / N)
        small = [2] if kind == "plane" else [1, 2]
        large = [0, 1] if kind == "plane" else [0]
        jac = {i: np.concatenate([np.cross(q, V[:, i]), np.broadcast_to(V[:, i], q.shape)], axis=1) for i in range(3)}
        proj = D @ V  # (N, 3) coordinates of centered points in the eigenbasis
        for k in small:
            j = jac[k]
            r = proj[:, k]
            M = np.zeros((F, 6))
            np.add.at(M, frames, j)
            for u in np.unique(frames):
                sel = frames == u
                ju = j[sel]
                H[6 * u : 6 * u + 6, 6 * u : 6 * u + 6] += ju.T @ ju / N
            Mf = M.reshape(-1)
            H -= np.outer(Mf, Mf) / N**2
            g += _block_sum(F, frames, j * r[:, None]) / N
            for l in large:
                gap = w[l] - w[k]
                if gap <= 1e-12 * max(w[0], 1e-300):
                    continue
                b = _block_sum(F, frames, proj[:, l : l + 1] * j + r[:, None] * jac[l]) / N
                H -= np.outer(b, b) / gap
    return H, g


def _apply(poses, step, free):
    out = list(poses)
    for k, u in enumerate(free):
        w, d = step[6 * k : 6 * k + 3], step[6 * k + 3 : 6 * k + 6]
        p = poses[u]
        out[u] = RigidTransform(so3_exp(w) @ p.rotation, p.translation + d)
    return out


def optimize_poses(
    poses: Sequence[RigidTransform],
    features: Sequence[VoxelFeature],
    clouds,
    opts: BAOptions | None = None,
) -> BAResult:
    """Refine scan poses by minimizing the eigenvalue cost; pose 0 is the gauge."""
    opts = opts or BAOptions()
    poses = list(poses)
    if len(poses) < 2:
        raise BAError("need at least two poses")
    problem = _Problem(clouds, features)
    if problem.n_frames != len(poses):
        raise BAError("clouds and poses differ in length")
    free = list(range(1, len(poses))) if opts.fixed_first else list(range(len(poses)))
    idx = np.concatenate([np.arange(6 * u, 6 * u + 6) for u in free])

    cost = problem.cost(poses)
    if not np.isfinite(cost):
        raise BAError(f"non-finite initial cost {cost}")
    trace = [cost]
    mu = opts.init_damping
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        H, g = _normal_equations(problem, poses)
        H, g = H[np.ix_(idx, idx)], g[idx]
        scale = max(np.abs(np.diag(H)).max(), 1e-300)
        accepted = False
        while mu < 1e10:
            try:
                step = np.linalg.solve(H + mu * scale * np.eye(len(idx)), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = _apply(poses, step, free)
            c_new = problem.cost(cand)
            if not np.isfinite(c_new):
                raise BAError(f"non-finite cost at iteration {it}")
            if c_new <= cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            converged = True
            break
        rel = (cost - c_new) / max(cost, 1e-300)
        poses, cost = cand, c_new
        trace.append(cost)
        mu = max(mu / 10.0, 1e-12)
        if rel < opts.rel_tol or cost == 0.0:
            converged = True
            break
    else:
        log.info("optimize_poses: stopped at max_iters=%d", opts.max_iters)
    return BAResult(poses, trace, it, converged)
