"""Synthetic scenes: box-room panoramas with exact depth, queries, matches and descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .cameras import CameraModel, EquirectModel, pixel_grid
from .dataset import Frame, SceneManifest, save_manifest
from .geometry import RigidTransform, rot_to_quat, rot_x, rot_y
from .retrieval import GlobalDescriptor, write_descriptors


def gradient_panorama(width: int, height: int) -> np.ndarray:
    """Smooth RGB panorama that is periodic in longitude (no seam at u = 0)."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v)
    r = 127.5 * (1 + np.cos(2 * np.pi * uu))
    g = 255.0 * vv
    b = 127.5 * (1 + np.sin(2 * np.pi * uu) * np.cos(np.pi * vv))
    return np.clip(np.rint(np.stack([r, g, b], axis=-1)), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Room:
    """Axis-aligned box room in world coordinates (z up)."""

    half: tuple[float, float, float] = (6.0, 6.0, 2.0)
    center: tuple[float, float, float] = (0.0, 0.0, 1.5)

    def ray_range(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance from an interior ``origin`` along unit ``dirs`` to the walls."""
        lo = np.asarray(self.center) - self.half
        hi = np.asarray(self.center) + self.half
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = (hi - origin) / dirs
            t_lo = (lo - origin) / dirs
        t = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
        return t.min(axis=-1)


def upright_pose(rng: np.random.Generator, room: Room, margin: float = 1.0) -> RigidTransform:
    """Camera-to-world pose with the camera's y axis pointing down (world −z)."""
    # base maps camera (x right, y down, z forward) to world (x, -z, y)
    base = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    R = base @ rot_y(rng.uniform(0, 2 * math.pi)) @ rot_x(rng.normal(0, 0.03))
    c = np.asarray(room.center)
    h = np.asarray(room.half) - margin
    t = c + rng.uniform(-h, h) * np.array([1.0, 1.0, 0.3])
    return RigidTransform(R, t)


def render_depth(model: EquirectModel, pose: RigidTransform, room: Room) -> np.ndarray:
    """Ray range per panorama pixel (float32)."""
    d, _ = model.unproject(pixel_grid(model.width, model.height))
    return room.ray_range(pose.translation, d @ pose.rotation.T).astype(np.float32)


def synth_matches(
    rng: np.random.Generator,
    query_model: CameraModel,
    query_pose: RigidTransform,
    ref_model: EquirectModel,
    ref_pose: RigidTransform,
    room: Room,
    n: int = 200,
    outlier_frac: float = 0.2,
    noise_px: float = 0.3,
) -> np.ndarray:
    """(qu, qv, ru, rv) rows: ref pixel centers lifted by exact depth and seen by the query."""
    rows = []
    tries = 0
    while len(rows) < n and tries < 50:
        tries += 1
        ij = np.stack([rng.integers(0, ref_model.width, 4 * n), rng.integers(0, ref_model.height, 4 * n)], 1)
        ref_uv = ij + 0.5
        d, _ = ref_model.unproject(ref_uv)
        dw = d @ ref_pose.rotation.T
        X = ref_pose.translation + room.ray_range(ref_pose.translation, dw)[:, None] * dw
        pc = (X - query_pose.translation) @ query_pose.rotation
        quv, vis = query_model.project(pc)
        ok = vis & query_model.in_image(np.where(vis[:, None], quv, -1.0))
        for a, b in zip(quv[ok], ref_uv[ok]):
            rows.append([*a, *b])
    m = np.asarray(rows[:n], dtype=np.float64).reshape(-1, 4)
    m[:, :2] += rng.normal(0, noise_px, size=(len(m), 2))
    m[:, 0] = np.clip(m[:, 0], 0, query_model.width - 1e-6)
    m[:, 1] = np.clip(m[:, 1], 0, query_model.height - 1e-6)
    bad = rng.random(len(m)) < outlier_frac
    m[bad, 0] = rng.uniform(0, query_model.width, bad.sum())
    m[bad, 1] = rng.uniform(0, query_model.height, bad.sum())
    return m


def place_descriptor(t: np.ndarray, proj: np.ndarray, noise: float, rng) -> np.ndarray:
    """Random-Fourier embedding of a camera position, so nearby cameras look alike."""
    z = proj @ np.asarray(t, dtype=np.float64)
    v = np.concatenate([np.cos(z), np.sin(z)])
    return v + rng.normal(0, noise, v.shape)


@dataclass
class FixtureSpec:
    scene: str = "concourse"
    n_refs: int = 6
    queries_per_camera: int = 3
    cameras: tuple[str, ...] = ("pinhole", "fisheye2")
    pano_width: int = 512
    query_scale: float = 0.25
    matches_per_pair: int = 150
    retrieved_refs: int = 2
    outlier_frac: float = 0.2
    desc_dim: int = 32
    seed: int = 0


def make_fixture(out_dir, spec: FixtureSpec | None = None) -> SceneManifest:
    """Write a small scene to ``out_dir``: manifest, images, depths, matches, descriptors.

    Layout: ``scene.manifest``, ``ref/``, ``query/``, ``matches/<query>__<ref>.txt``,
    ``ref_desc.bin``, ``query_desc.bin``.
    """
    from .dataset import scaled_preset

    spec = spec or FixtureSpec()
    out = Path(out_dir)
    for sub in ("ref", "query", "matches"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    room = Room()
    ref_model = EquirectModel(spec.pano_width, spec.pano_width // 2)
    proj = rng.normal(0, 0.35, size=(spec.desc_dim // 2, 3))

    def frame(fid, img_path, depth_path, T):
        return Frame(fid, img_path, depth_path, tuple(map(float, T.translation)), tuple(map(float, rot_to_quat(T.rotation))))

    pano = gradient_panorama(ref_model.width, ref_model.height)
    refs, ref_desc = [], []
    for i in range(spec.n_refs):
        fid = f"r{i:03d}"
        T = upright_pose(rng, room)
        img, dep = out / "ref" / f"{fid}.png", out / "ref" / f"{fid}.pfm"
        io.save_image(img, pano)
        io.write_pfm(dep, render_depth(ref_model, T, room))
        f = frame(fid, img, dep, T)
        refs.append(f)
        ref_desc.append(GlobalDescriptor(fid, place_descriptor(f.pose.translation, proj, 0.05, rng)))

    queries: dict[tuple[str, str], list[Frame]] = {}
    query_desc = []
    for cam in spec.cameras:
        model = scaled_preset(cam, spec.query_scale)
        frames = []
        for j in range(spec.queries_per_camera):
            qid = f"q_{cam}_{j:03d}"
            T = upright_pose(rng, room, margin=1.5)
            img = out / "query" / f"{qid}.png"
            io.save_image(img, np.zeros((model.height, model.width), dtype=np.uint8))
            f = frame(qid, img, None, T)
            frames.append(f)
            query_desc.append(GlobalDescriptor(qid, place_descriptor(f.pose.translation, proj, 0.05, rng)))
            dist = [np.linalg.norm(r.pose.translation - f.pose.translation) for r in refs]
            for k in np.argsort(dist, kind="stable")[: spec.retrieved_refs]:
                r = refs[k]
                m = synth_matches(rng, model, f.pose, ref_model, r.pose, room,
                                  spec.matches_per_pair, spec.outlier_frac)
                io.write_matches(out / "matches" / f"{qid}__{r.id}.txt", qid, r.id, f"{cam}@{spec.query_scale}", m)
        queries[(cam, "day")] = frames
    write_descriptors(out / "ref_desc.bin", ref_desc)
    write_descriptors(out / "query_desc.bin", query_desc)
    m = SceneManifest(spec.scene, 5.0 if spec.scene.lower() == "concourse" else 10.0, refs, queries)
    save_manifest(m, out / "scene.manifest")
    return m


def pnp_scene(rng: np.random.Generator, n: int = 50, outlier_frac: float = 0.3, noise_deg: float = 0.1):
    """Random camera, ``n`` points all around it (1-8 m), noisy bearings and uniform outliers.

    Returns (true pose, bearings, world points, scene diameter, outlier mask).
    """
    from scipy.spatial.distance import pdist

    from .geometry import random_rotation, so3_exp

    T = RigidTransform(random_rotation(rng), rng.uniform(-2, 2, 3))
    pc = rng.normal(size=(n, 3))
    pc /= np.linalg.norm(pc, axis=1, keepdims=True)
    pc *= rng.uniform(1, 8, (n, 1))
    X = T.apply(pc)
    b = pc / np.linalg.norm(pc, axis=1, keepdims=True)
    if noise_deg:
        axis = np.cross(b, rng.normal(size=(n, 3)))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        ang = rng.normal(size=n) * math.radians(noise_deg)
        b = np.array([so3_exp(a * w) @ v for a, w, v in zip(axis, ang, b)])
    out = np.zeros(n, dtype=bool)
    out[rng.choice(n, int(round(outlier_frac * n)), replace=False)] = True
    v = rng.normal(size=(out.sum(), 3))
    b[out] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return T, b, X, float(pdist(X).max()), out
