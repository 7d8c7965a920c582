"""Ground-plane pose constraint used during reference-map SLAM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidTransform


@dataclass(frozen=True)
class PlaneCoeffs:
    """Plane n·x + delta = 0 with unit normal n."""

    n: np.ndarray
    delta: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("plane normal must be non-zero and finite")
        object.__setattr__(self, "n", n / norm)
        object.__setattr__(self, "delta", float(self.delta))


# n = +Z, zero intercept
CANONICAL_GROUND = PlaneCoeffs(np.array([0.0, 0.0, 1.0]), 0.0)


def _wrap(a: np.ndarray) -> np.ndarray:
    """Wrap angles into (−π, π]."""
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def plane_params(p: PlaneCoeffs) -> np.ndarray:
    """(azimuth of n, elevation of n, intercept); atan2(0, 0) is taken as 0."""
    nx, ny, nz = p.n
    az = 0.0 if np.hypot(nx, ny) < 1e-12 else np.arctan2(ny, nx)
    return np.array([az, np.arctan2(nz, np.linalg.norm(p.n)), p.delta])


def transform_plane(p: PlaneCoeffs, pose: RigidTransform) -> PlaneCoeffs:
    """n' = R·n, δ' = δ − t·n'."""
    n2 = pose.rotation @ p.n
    return PlaneCoeffs(n2, p.delta - float(pose.translation @ n2))


def ground_plane_residual(
    pose: RigidTransform, detected: PlaneCoeffs, canonical: PlaneCoeffs = CANONICAL_GROUND
) -> np.ndarray:
    """3-vector mismatch between the canonical ground moved by ``pose`` and the detection."""
    e = plane_params(transform_plane(canonical, pose)) - plane_params(detected)
    e[:2] = _wrap(e[:2])
    return e
