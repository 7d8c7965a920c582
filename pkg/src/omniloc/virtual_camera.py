"""Virtual cameras: rectify panoramas into other models and remap back.

``extract_virtual`` is the forward operator (VC2: panorama -> lower-FoV view)
and ``remap_to_equirect`` its inverse (VC1: view -> masked panorama canvas).
A rotation ``R`` maps panorama-frame directions into the virtual camera
frame, so a target pixel with bearing d reads the panorama at Rᵀ·d.

Images are numpy arrays shaped (H, W) or (H, W, C), uint8 unless noted.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cameras import CameraModel, EquirectModel, PinholeModel, pixel_grid
from .geometry import is_rotation, rot_x, rot_y, rot_z


class VirtualCameraError(ValueError):
    pass


@dataclass
class MaskedEquirect:
    image: np.ndarray
    mask: np.ndarray  # True where the source covers the canvas pixel

    def __post_init__(self):
        if self.mask.shape != self.image.shape[:2]:
            raise VirtualCameraError("mask and image sizes differ")


def _check_rotation(rot) -> np.ndarray:
    R = np.asarray(rot, dtype=np.float64)
    if not is_rotation(R, tol=1e-9):
        raise VirtualCameraError("rotation must be orthonormal with det +1")
    return R


def _check_pano(pano: np.ndarray) -> EquirectModel:
    h, w = pano.shape[:2]
    if w != 2 * h:
        raise VirtualCameraError(f"panorama must be 2:1, got {w}x{h}")
    return EquirectModel(w, h)


def _finish(values: np.ndarray, dtype) -> np.ndarray:
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        return np.clip(np.rint(values), info.min, info.max).astype(dtype)
    return values.astype(dtype)


def sample_bilinear(img: np.ndarray, uv: np.ndarray, wrap_u: bool = False) -> np.ndarray:
    """Sample at continuous pixel coordinates (centers at +0.5).

    Columns wrap when ``wrap_u`` (panorama seam); everything else clamps.
    Returns float64 values shaped uv.shape[:-1] (+ channels).
    """
    h, w = img.shape[:2]
    x = uv[..., 0] - 0.5
    y = uv[..., 1] - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if wrap_u:
        x0 %= w
        x1 %= w
    else:
        x0 = np.clip(x0, 0, w - 1)
        x1 = np.clip(x1, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    y1 = np.clip(y1, 0, h - 1)
    src = img.astype(np.float64)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_nearest(img: np.ndarray, uv: np.ndarray, wrap_u: bool = False) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.floor(uv[..., 0]).astype(np.int64)
    y = np.floor(uv[..., 1]).astype(np.int64)
    x = x % w if wrap_u else np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    return img[y, x]


def _sample(img, uv, sampler, wrap_u):
    if sampler == "bilinear":
        return sample_bilinear(img, uv, wrap_u)
    if sampler == "nearest":
        return sample_nearest(img, uv, wrap_u).astype(np.float64)
    raise VirtualCameraError(f"unknown sampler {sampler!r}")


def _row_chunks(height: int, threads: int) -> list[slice]:
    n = max(1, min(threads, height))
    edges = np.linspace(0, height, n + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_rows(fn, height: int, threads: int):
    chunks = _row_chunks(height, threads)
    if len(chunks) == 1:
        return [fn(chunks[0])]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(fn, chunks))


def extract_virtual(
    pano: np.ndarray,
    target: CameraModel,
    rot=None,
    sampler: str = "bilinear",
    threads: int = 1,
) -> np.ndarray:
    """Render ``target`` from an equirectangular panorama (VC2)."""
    src_model = _check_pano(pano)
    R = np.eye(3) if rot is None else _check_rotation(rot)
    out_shape = (target.height, target.width) + pano.shape[2:]
    out = np.zeros(out_shape, dtype=pano.dtype)

    def work(rows: slice):
        grid = pixel_grid(target.width, target.height)[rows]
        d, valid = target.unproject(grid)
        uv, _ = src_model.project(np.where(valid[..., None], d, [0.0, 0.0, 1.0]) @ R)
        vals = _sample(pano, uv, sampler, wrap_u=True)
        vals[~valid] = 0
        out[rows] = _finish(vals, pano.dtype)

    _run_rows(work, target.height, threads)
    return out


def remap_to_equirect(
    img: np.ndarray,
    source: CameraModel,
    rot=None,
    canvas: tuple[int, int] = (1024, 512),
    sampler: str = "bilinear",
    threads: int = 1,
) -> MaskedEquirect:
    """Paint a ``source`` image onto a 2:1 canvas (VC1); uncovered pixels are black."""
    cw, ch = canvas
    if cw != 2 * ch:
        raise VirtualCameraError(f"canvas must be 2:1, got {cw}x{ch}")
    if img.shape[:2] != (source.height, source.width):
        raise VirtualCameraError("image size does not match the source model")
    canvas_model = EquirectModel(cw, ch)
    R = np.eye(3) if rot is None else _check_rotation(rot)
    wrap = isinstance(source, EquirectModel)
    out = np.zeros((ch, cw) + img.shape[2:], dtype=img.dtype)
    mask = np.zeros((ch, cw), dtype=bool)

    def work(rows: slice):
        grid = pixel_grid(cw, ch)[rows]
        d, _ = canvas_model.unproject(grid)
        uv, vis = source.project(d @ R.T)
        covered = vis & source.in_image(np.where(vis[..., None], uv, -1.0))
        if not wrap:
            # a visible ray may still sit outside the unprojection domain
            _, back = source.unproject(np.where(covered[..., None], uv, 0.0))
            covered &= back
        vals = _sample(img, np.where(covered[..., None], uv, 0.5), sampler, wrap_u=wrap)
        vals[~covered] = 0
        out[rows] = _finish(vals, img.dtype)
        mask[rows] = covered

    _run_rows(work, ch, threads)
    return MaskedEquirect(out, mask)


def solid_angle_fraction(mask: np.ndarray) -> float:
    """Fraction of the sphere covered by an equirect mask (rows weighted by solid angle)."""
    h = mask.shape[0]
    edges = np.pi / 2.0 - np.pi * np.arange(h + 1) / h
    row_w = np.sin(edges[:-1]) - np.sin(edges[1:])
    return float((mask.mean(axis=1) * row_w).sum() / 2.0)


CUBE_FACES = ("front", "right", "back", "left", "up", "down")


def cube_face_rotation(face: str) -> np.ndarray:
    """Rotation whose transpose sends the face's optical axis to its cube direction."""
    to_pano = {
        "front": np.eye(3),
        "right": rot_y(math.pi / 2),
        "back": rot_y(math.pi),
        "left": rot_y(-math.pi / 2),
        "up": rot_x(math.pi / 2),  # z -> -y, which is up with y pointing down
        "down": rot_x(-math.pi / 2),
    }
    if face not in to_pano:
        raise VirtualCameraError(f"unknown cube face {face!r}")
    return to_pano[face].T


def cube_face_model(face_px: int) -> PinholeModel:
    return PinholeModel(face_px, face_px, face_px / 2.0, face_px / 2.0, face_px / 2.0, face_px / 2.0)


def cubemap_faces(
    pano: np.ndarray,
    face_px: int,
    include_bottom: bool = False,
    sampler: str = "bilinear",
    threads: int = 1,
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Cube-map faces as (face_id, rotation, image); the floor face is dropped by default."""
    if face_px <= 0:
        raise VirtualCameraError("face_px must be positive")
    model = cube_face_model(face_px)
    faces = CUBE_FACES if include_bottom else CUBE_FACES[:-1]
    out = []
    for face in faces:
        R = cube_face_rotation(face)
        out.append((face, R, extract_virtual(pano, model, R, sampler, threads)))
    return out


def sample_rotation(
    rng_seed,
    yaw_range=(0.0, 2 * math.pi),
    pitch_range=(-math.radians(15), math.radians(15)),
    roll_range=(0.0, 0.0),
) -> np.ndarray:
    """Random R = yaw(y-axis) · pitch(x-axis) · roll(z-axis), each uniform on its range.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    angles = []
    for name, (lo, hi) in (("yaw", yaw_range), ("pitch", pitch_range), ("roll", roll_range)):
        if hi < lo:
            raise VirtualCameraError(f"empty {name} range [{lo}, {hi}]")
        angles.append(lo if hi == lo else rng.uniform(lo, hi))
    yaw, pitch, roll = angles
    return rot_y(yaw) @ rot_x(pitch) @ rot_z(roll)


def warp_depth(depth: np.ndarray, target: CameraModel, rot=None, threads: int = 1) -> np.ndarray:
    """Nearest-neighbour warp of a panorama depth map; ray depth is rotation-invariant."""
    src_model = _check_pano(depth)
    R = np.eye(3) if rot is None else _check_rotation(rot)
    out = np.zeros((target.height, target.width), dtype=depth.dtype)

    def work(rows: slice):
        grid = pixel_grid(target.width, target.height)[rows]
        d, valid = target.unproject(grid)
        uv, _ = src_model.project(np.where(valid[..., None], d, [0.0, 0.0, 1.0]) @ R)
        vals = sample_nearest(depth, uv, wrap_u=True)
        out[rows] = np.where(valid, vals, 0)

    _run_rows(work, target.height, threads)
    return out
