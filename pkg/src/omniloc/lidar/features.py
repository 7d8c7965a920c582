"""Point transforms, feature covariance and octree (adaptive) voxelization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import RigidTransform


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FramedCloud:
    """Points of one lidar scan, in the sensor frame."""

    frame: int
    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(P) == 0:
            raise FeatureError(f"frame {self.frame} is empty")
        if not np.isfinite(P).all():
            raise FeatureError(f"frame {self.frame} has non-finite coordinates")
        object.__setattr__(self, "points", P)


@dataclass
class VoxelFeature:
    kind: str  # "plane" or "edge"
    members: np.ndarray  # (N, 2) int: (frame, point index)
    centroid: np.ndarray
    direction: np.ndarray  # plane normal (min eigvec) or edge direction (max eigvec)
    eigenvalues: np.ndarray  # descending
    depth: int = 0


def transform_points(cloud, pose: RigidTransform) -> np.ndarray:
    """World coordinates R·p + t of a scan's points."""
    P = cloud.points if isinstance(cloud, FramedCloud) else np.asarray(cloud, dtype=np.float64)
    return P @ pose.rotation.T + pose.translation


def feature_covariance(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A, eigenvalues descending, centroid) with A the 1/N point covariance."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(P) < 3:
        raise FeatureError(f"need at least 3 points, got {len(P)}")
    c = P.mean(axis=0)
    D = P - c
    A = D.T @ D / len(P)
    A = 0.5 * (A + A.T)
    w = np.linalg.eigvalsh(A)[::-1]
    return A, w, c


def eigh_desc(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(A)
    return w[::-1], V[:, ::-1]


def classify(eigs: np.ndarray, plane_ratio: float, edge_ratio: float) -> str | None:
    l1, l2, l3 = eigs
    if l1 <= 0:
        return None
    if l2 / l1 < edge_ratio:
        return "edge"
    if l2 > 0 and l3 / l2 < plane_ratio:
        return "plane"
    return None


@dataclass
class VoxelConfig:
    root_voxel_m: float = 1.0
    max_depth: int = 3
    plane_ratio: float = 0.01
    edge_ratio: float = 0.1
    min_points: int = 10


def _make_feature(kind, members, P, depth) -> VoxelFeature:
    A, _, c = feature_covariance(P)
    w, V = eigh_desc(A)
    direction = V[:, 2] if kind == "plane" else V[:, 0]
    return VoxelFeature(kind, members, c, direction, w, depth)


def adaptive_voxelize(
    frames: Sequence,
    poses: Sequence[RigidTransform],
    root_voxel_m: float = 1.0,
    max_depth: int = 3,
    plane_ratio: float = 0.01,
    edge_ratio: float = 0.1,
    min_points: int = 10,
) -> list[VoxelFeature]:
    """Split world space into root voxels and recursively octree-subdivide each
    until its points form a single plane or edge; cells still mixed at
    ``max_depth`` (or with fewer than ``min_points``) are dropped."""
    if not root_voxel_m > 0:
        raise FeatureError("root voxel size must be positive")
    clouds = [f.points if isinstance(f, FramedCloud) else np.asarray(f, float) for f in frames]
    if len(clouds) != len(poses):
        raise FeatureError("frames and poses differ in length")
    world = np.concatenate([transform_points(P, T) for P, T in zip(clouds, poses)])
    members = np.concatenate(
        [np.stack([np.full(len(P), u), np.arange(len(P))], axis=1) for u, P in enumerate(clouds)]
    )
    keys = np.floor(world / root_voxel_m).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    keys, world, members = keys[order], world[order], members[order]
    splits = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1

    out: list[VoxelFeature] = []

    def recurse(P, M, lo, size, depth):
        if len(P) < max(min_points, 3):
            return
        _, w, _ = feature_covariance(P)
        kind = classify(w, plane_ratio, edge_ratio)
        if kind is not None:
            out.append(_make_feature(kind, M, P, depth))
            return
        if depth >= max_depth:
            return
        half = size / 2.0
        octant = ((P - lo) >= half).astype(np.int64)
        code = octant[:, 0] * 4 + octant[:, 1] * 2 + octant[:, 2]
        for c in range(8):
            sel = code == c
            if sel.any():
                off = np.array([(c >> 2) & 1, (c >> 1) & 1, c & 1]) * half
                recurse(P[sel], M[sel], lo + off, half, depth + 1)

    for K, P, M in zip(np.split(keys, splits), np.split(world, splits), np.split(members, splits)):
        recurse(P, M, K[0] * root_voxel_m, root_voxel_m, 0)
    return out
