"""Synthetic lidar scenes for exercising the bundle adjustment."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..geometry import RigidTransform, rot_x, rot_y, rot_z, so3_exp
from .features import FramedCloud, VoxelFeature, _make_feature

# (unit normal, offset d) with n·x = d; room 10 m x 8 m x 3 m plus a ramp
ROOM_PLANES = [
    (np.array([0.0, 0.0, 1.0]), 0.0),
    (np.array([1.0, 0.0, 0.0]), 5.0),
    (np.array([-1.0, 0.0, 0.0]), 5.0),
    (np.array([0.0, 1.0, 0.0]), 4.0),
    (np.array([0.0, -1.0, 0.0]), 4.0),
    (np.array([0.0, 0.0, -1.0]), -3.0),
    (np.array([0.3, 0.3, 0.9055385138137417]), 1.2),
]


@dataclass
class Scenario:
    planes: int = 5
    poses: int = 10
    noise_rot_deg: float = 1.0
    noise_t_m: float = 0.05
    seed: int = 0
    points_per_plane: int = 150
    point_noise_m: float = 0.002
    patch_half_m: float = 1.5


def load_scenario(path) -> Scenario:
    sc = Scenario()
    types = {f.name: f.type for f in fields(Scenario)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        setattr(sc, key, int(val) if types[key] in ("int", int) else float(val))
    return sc


@dataclass
class SimScene:
    clouds: list[FramedCloud]
    gt_poses: list[RigidTransform]
    init_poses: list[RigidTransform]
    labels: list[np.ndarray]  # per frame, plane index of each point
    planes: list[tuple[np.ndarray, float]]

    def plane_features(self) -> list[VoxelFeature]:
        """One feature per plane, built from ground-truth point labels."""
        feats = []
        for k in range(len(self.planes)):
            members = np.concatenate(
                [np.stack([np.full((lab == k).sum(), u), np.flatnonzero(lab == k)], axis=1)
                 for u, lab in enumerate(self.labels)]
            )
            world = np.concatenate(
                [self.gt_poses[u].apply(self.clouds[u].points[lab == k]) for u, lab in enumerate(self.labels)]
            )
            feats.append(_make_feature("plane", members, world, 0))
        return feats


def _tangent_basis(n: np.ndarray):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def simulate(sc: Scenario) -> SimScene:
    """Scans of a room of planes from ``sc.poses`` sensor poses, plus noisy initial poses.

    Pose 0 is left exact (it fixes the gauge); the rest get Gaussian rotation
    and translation noise.
    """
    if not 1 <= sc.planes <= len(ROOM_PLANES):
        raise ValueError(f"planes must lie in [1, {len(ROOM_PLANES)}]")
    rng = np.random.default_rng(sc.seed)
    planes = ROOM_PLANES[: sc.planes]
    gt, init, clouds, labels = [], [], [], []
    for u in range(sc.poses):
        R = rot_z(rng.uniform(0, 2 * math.pi)) @ rot_y(rng.normal(0, 0.05)) @ rot_x(rng.normal(0, 0.05))
        t = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(1.0, 2.0)])
        T = RigidTransform(R, t)
        gt.append(T)
        pts, lab = [], []
        for k, (n, d) in enumerate(planes):
            e1, e2 = _tangent_basis(n)
            # patch around the foot of the sensor on the plane, shared extent across frames
            foot = np.zeros(3) + d * n
            ab = rng.uniform(-sc.patch_half_m, sc.patch_half_m, size=(sc.points_per_plane, 2))
            X = foot + ab[:, :1] * e1 + ab[:, 1:] * e2
            X += rng.normal(0, sc.point_noise_m, size=(sc.points_per_plane, 1)) * n
            pts.append(T.inverse().apply(X))
            lab.append(np.full(sc.points_per_plane, k))
        clouds.append(FramedCloud(u, np.concatenate(pts)))
        labels.append(np.concatenate(lab))
        if u == 0:
            init.append(T)
        else:
            w = rng.normal(0, math.radians(sc.noise_rot_deg), 3)
            dt = rng.normal(0, sc.noise_t_m, 3)
            init.append(RigidTransform(so3_exp(w) @ R, t + dt))
    return SimScene(clouds, gt, init, labels, list(planes))


def pose_rmse(est, gt) -> tuple[float, float]:
    """(translation RMSE m, rotation RMSE deg) over all poses."""
    te = [np.linalg.norm(a.translation - b.translation) ** 2 for a, b in zip(est, gt)]
    re = []
    for a, b in zip(est, gt):
        M = a.rotation.T @ b.rotation
        s = np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) / 2
        re.append(math.degrees(math.atan2(s, (np.trace(M) - 1) / 2)) ** 2)
    return math.sqrt(np.mean(te)), math.sqrt(np.mean(re))


