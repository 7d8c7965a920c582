"""Readers and writers for images, depth maps, poses, matches and point clouds."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import RigidTransform


class FormatError(ValueError):
    pass


# --- images ------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im).copy()


def save_image(path, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    Image.fromarray(arr).save(path)


def mask_path(image_path) -> Path:
    """``<name>.mask.png`` next to a VC1 output."""
    p = Path(image_path)
    return p.with_name(p.stem + ".mask.png")


# --- PFM depth ---------------------------------------------------------------


def read_pfm(path) -> np.ndarray:
    """Single-channel PFM as a top-down (H, W) float32 array."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise FormatError(f"{path}: expected single-channel 'Pf' PFM, got {header!r}")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype)
    if data.size != w * h:
        raise FormatError(f"{path}: truncated PFM data")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_pfm(path, depth: np.ndarray) -> None:
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2:
        raise FormatError("PFM writer expects a 2-D array")
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(d).tobytes())


# --- poses -------------------------------------------------------------------


def read_poses(path) -> dict[str, RigidTransform]:
    """``frame_id tx ty tz qw qx qy qz`` per line (camera-to-world, Hamilton)."""
    out: dict[str, RigidTransform] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        name = parts[0]
        if name in out:
            raise FormatError(f"{path}:{lineno}: duplicate frame id {name!r}")
        try:
            tx, ty, tz, qw, qx, qy, qz = map(float, parts[1:])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
        out[name] = RigidTransform.from_quat([tx, ty, tz], qw, qx, qy, qz)
    return out


def format_pose(name: str, T: RigidTransform) -> str:
    q = T.quat()
    t = T.translation
    vals = [*t, *q]
    return name + " " + " ".join(f"{v:.12g}" for v in vals)


def write_poses(path, poses: dict[str, RigidTransform]) -> None:
    lines = [format_pose(k, poses[k]) for k in sorted(poses)]
    Path(path).write_text("".join(line + "\n" for line in lines))


# --- matches -----------------------------------------------------------------


def read_matches(path) -> tuple[dict[str, str], np.ndarray]:
    """Header ``# query=<q> ref=<r> model=<preset>`` then ``qu qv ru rv`` rows."""
    header: dict[str, str] = {}
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
    for key in ("query", "ref"):
        if key not in header:
            raise FormatError(f"{path}: header lacks '{key}='")
    return header, np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def write_matches(path, query: str, ref: str, model: str, matches) -> None:
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    lines = [f"# query={query} ref={ref} model={model}"]
    lines += [" ".join(f"{v:.10g}" for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


# --- point clouds ------------------------------------------------------------

CLOUD_MAGIC = b"OLPC"


def read_cloud(path) -> np.ndarray:
    """ASCII ``x y z`` rows, or the binary OLPC variant (detected by magic)."""
    data = Path(path).read_bytes()
    if data[:4] == CLOUD_MAGIC:
        (count,) = struct.unpack_from("<I", data, 4)
        if len(data) != 8 + 12 * count:
            raise FormatError(f"{path}: OLPC size mismatch")
        return np.frombuffer(data, dtype="<f4", offset=8).reshape(count, 3).astype(np.float64)
    rows = []
    for lineno, raw in enumerate(data.decode("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields")
        rows.append([float(x) for x in parts])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def write_cloud(path, points, binary: bool = False) -> None:
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if binary:
        Path(path).write_bytes(CLOUD_MAGIC + struct.pack("<I", len(P)) + P.astype("<f4").tobytes())
    else:
        Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in P.tolist()))
