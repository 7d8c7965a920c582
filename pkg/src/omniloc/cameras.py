"""Camera models: equirectangular, pinhole and double-sphere.

All models share one convention: camera frame x right, y down, z forward;
continuous pixel coordinates with pixel centers at integer + 0.5.

Every model exposes vectorized ``project(dirs) -> (uv, visible)`` and
``unproject(uv) -> (dirs, valid)``. The module-level :func:`project` and
:func:`unproject` are the single-point forms with optional / raising
semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np


class CameraError(ValueError):
    pass


def _as_dirs(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != 3:
        raise CameraError(f"expected (..., 3) directions, got {d.shape}")
    return d


def _as_pixels(uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    if uv.shape[-1] != 2:
        raise CameraError(f"expected (..., 2) pixels, got {uv.shape}")
    return uv


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return v / n


@dataclass(frozen=True)
class EquirectModel:
    width: int
    height: int

    kind = "equirect"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise CameraError("image size must be positive")
        if self.width != 2 * self.height:
            raise CameraError(f"equirect must be 2:1, got {self.width}x{self.height}")

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def in_image(self, uv) -> np.ndarray:
        uv = _as_pixels(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width) & (v >= 0) & (v <= self.height)

    def unproject(self, uv):
        uv = _as_pixels(uv)
        lon = 2.0 * np.pi * (uv[..., 0] / self.width) - np.pi
        lat = np.pi / 2.0 - np.pi * (uv[..., 1] / self.height)
        c = np.cos(lat)
        d = np.stack([c * np.sin(lon), -np.sin(lat), c * np.cos(lon)], axis=-1)
        return d, self.in_image(uv)

    def project(self, dirs):
        d = _normalize(_as_dirs(dirs))
        lon = np.arctan2(d[..., 0], d[..., 2])
        lat = np.arctan2(-d[..., 1], np.hypot(d[..., 0], d[..., 2]))
        u = self.width * (lon + np.pi) / (2.0 * np.pi)
        u = np.where(u >= self.width, u - self.width, u)
        v = self.height * (np.pi / 2.0 - lat) / np.pi
        uv = np.stack([u, v], axis=-1)
        return uv, np.isfinite(uv).all(axis=-1)


@dataclass(frozen=True)
class PinholeModel:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    kind = "pinhole"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise CameraError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise CameraError("principal point must lie inside the image")

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def in_image(self, uv) -> np.ndarray:
        uv = _as_pixels(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width) & (v >= 0) & (v <= self.height)

    def unproject(self, uv):
        uv = _as_pixels(uv)
        mx = (uv[..., 0] - self.cx) / self.fx
        my = (uv[..., 1] - self.cy) / self.fy
        d = _normalize(np.stack([mx, my, np.ones_like(mx)], axis=-1))
        return d, self.in_image(uv)

    def project(self, dirs):
        d = _as_dirs(dirs)
        z = d[..., 2]
        visible = z > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            u = self.fx * d[..., 0] / z + self.cx
            v = self.fy * d[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), visible


@dataclass(frozen=True)
class DoubleSphereModel:
    """Double-sphere fisheye (two offset unit spheres, then a pinhole).

    Forward map with d1 = |p| and d2 = |(x, y, xi*d1 + z)|:
        u = fx * x / (alpha*d2 + (1 - alpha)*(xi*d1 + z)) + cx
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    xi: float
    alpha: float

    kind = "double_sphere"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise CameraError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        if not (0.0 <= self.alpha < 1.0):
            raise CameraError("alpha must lie in [0, 1)")

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    @property
    def w2(self) -> float:
        a, xi = self.alpha, self.xi
        w1 = a / (1.0 - a) if a <= 0.5 else (1.0 - a) / a
        return (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)

    def in_image(self, uv) -> np.ndarray:
        uv = _as_pixels(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width) & (v >= 0) & (v <= self.height)

    def project(self, dirs):
        d = _as_dirs(dirs)
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        a, xi = self.alpha, self.xi
        d1 = np.sqrt(x * x + y * y + z * z)
        k = xi * d1 + z
        d2 = np.sqrt(x * x + y * y + k * k)
        den = a * d2 + (1.0 - a) * k
        visible = (z > -self.w2 * d1) & (den > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = self.fx * x / den + self.cx
            v = self.fy * y / den + self.cy
        return np.stack([u, v], axis=-1), visible

    def unproject(self, uv):
        uv = _as_pixels(uv)
        a, xi = self.alpha, self.xi
        mx = (uv[..., 0] - self.cx) / self.fx
        my = (uv[..., 1] - self.cy) / self.fy
        r2 = mx * mx + my * my
        s = 1.0 - (2.0 * a - 1.0) * r2
        valid = self.in_image(uv) & (s >= 0)
        s = np.where(s >= 0, s, 0.0)
        mz = (1.0 - a * a * r2) / (a * np.sqrt(s) + 1.0 - a)
        disc = mz * mz + (1.0 - xi * xi) * r2
        valid &= disc >= 0
        k = (mz * xi + np.sqrt(np.where(disc >= 0, disc, 0.0))) / (mz * mz + r2)
        d = np.stack([k * mx, k * my, k * mz - xi], axis=-1)
        d = _normalize(d)
        # the ray must land back in the forward map's domain for the round trip
        valid &= d[..., 2] > -self.w2
        return d, valid


CameraModel = Union[EquirectModel, PinholeModel, DoubleSphereModel]


def project(model: CameraModel, direction):
    """Project a single bearing; returns (u, v) or None when not visible."""
    uv, vis = model.project(np.asarray(direction, dtype=np.float64).reshape(1, 3))
    if not vis[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def unproject(model: CameraModel, pixel) -> np.ndarray:
    """Unit bearing for one pixel; raises CameraError outside the valid domain."""
    d, valid = model.unproject(np.asarray(pixel, dtype=np.float64).reshape(1, 2))
    if not valid[0]:
        raise CameraError(f"pixel {tuple(pixel)} outside the valid domain of {model.kind}")
    return d[0]


def pinhole_from_fov(width: int, height: int, hfov: float) -> PinholeModel:
    """Undistorted pinhole with horizontal field of view ``hfov`` (radians)."""
    if not (0.0 < hfov < math.pi):
        raise CameraError(f"hfov must lie in (0, pi), got {hfov}")
    f = (width / 2.0) / math.tan(hfov / 2.0)
    return PinholeModel(width, height, f, f, width / 2.0, height / 2.0)


def double_sphere_from_fov(width: int, height: int, hfov: float, xi: float, alpha: float) -> DoubleSphereModel:
    """Solve fx = fy so the ray at hfov/2 off-axis lands on the left/right image edge."""
    h = hfov / 2.0
    probe = DoubleSphereModel(width, height, 1.0, 1.0, width / 2.0, height / 2.0, xi, alpha)
    uv, vis = probe.project(np.array([[math.sin(h), 0.0, math.cos(h)]]))
    mx = uv[0, 0] - width / 2.0
    if not vis[0] or not mx > 0:
        raise CameraError(f"hfov {math.degrees(hfov):.1f} deg unreachable with xi={xi}, alpha={alpha}")
    f = float((width / 2.0) / mx)
    return replace(probe, fx=f, fy=f)


# Table-2 camera zoo. Fisheye (xi, alpha) are reconstructions; fx is solved
# from the horizontal FoV.
PRESET_SPECS: dict[str, dict] = {
    "360": dict(type="equirect", width=6144, height=3072, fov_deg=360.0),
    "fisheye1": dict(type="double_sphere", width=1280, height=1024, fov_deg=120.0, xi=-0.2, alpha=0.3),
    "fisheye2": dict(type="double_sphere", width=1280, height=1024, fov_deg=150.0, xi=0.0, alpha=0.5),
    "fisheye3": dict(type="double_sphere", width=1280, height=1024, fov_deg=195.0, xi=0.5, alpha=0.6),
    "pinhole": dict(type="pinhole", width=1920, height=1200, fov_deg=85.0),
}


def model_from_spec(spec: dict) -> CameraModel:
    kind = str(spec["type"]).lower()
    w, h = int(spec["width"]), int(spec["height"])
    if kind in ("equirect", "equirectangular", "360"):
        return EquirectModel(w, h)
    if kind == "pinhole":
        if "fx" in spec:
            fx = float(spec["fx"])
            return PinholeModel(
                w, h, fx, float(spec.get("fy", fx)),
                float(spec.get("cx", w / 2.0)), float(spec.get("cy", h / 2.0)),
            )
        m = pinhole_from_fov(w, h, math.radians(float(spec["fov_deg"])))
        return replace(m, cx=float(spec.get("cx", m.cx)), cy=float(spec.get("cy", m.cy)))
    if kind in ("double_sphere", "doublesphere", "ds", "fisheye"):
        xi = float(spec.get("xi", 0.0))
        alpha = float(spec.get("alpha", 0.5))
        if "fx" in spec:
            fx = float(spec["fx"])
            return DoubleSphereModel(
                w, h, fx, float(spec.get("fy", fx)),
                float(spec.get("cx", w / 2.0)), float(spec.get("cy", h / 2.0)), xi, alpha,
            )
        m = double_sphere_from_fov(w, h, math.radians(float(spec["fov_deg"])), xi, alpha)
        return replace(m, cx=float(spec.get("cx", m.cx)), cy=float(spec.get("cy", m.cy)))
    raise CameraError(f"unknown camera type {kind!r}")


def preset(name: str, **overrides) -> CameraModel:
    if name not in PRESET_SPECS:
        raise CameraError(f"unknown preset {name!r}; known: {sorted(PRESET_SPECS)}")
    return model_from_spec({**PRESET_SPECS[name], **overrides})


def load_camera_file(path) -> CameraModel:
    """Parse a ``key = value`` camera file (``#`` starts a comment)."""
    spec: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CameraError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        spec[key] = val
    for key in ("type", "width", "height"):
        if key not in spec:
            raise CameraError(f"{path}: missing key {key!r}")
    return model_from_spec(spec)


def save_camera_file(model: CameraModel, path) -> None:
    lines = [f"type = {model.kind}", f"width = {model.width}", f"height = {model.height}"]
    if not isinstance(model, EquirectModel):
        lines += [f"fx = {model.fx!r}", f"fy = {model.fy!r}", f"cx = {model.cx!r}", f"cy = {model.cy!r}"]
    if isinstance(model, DoubleSphereModel):
        lines += [f"xi = {model.xi!r}", f"alpha = {model.alpha!r}"]
    Path(path).write_text("\n".join(lines) + "\n")


def valid_pixel_mask(model: CameraModel, uv) -> np.ndarray:
    """Pixels whose ray unprojects and projects back (the round-trip domain)."""
    d, valid = model.unproject(uv)
    _, vis = model.project(np.where(valid[..., None], d, 0.0))
    return valid & vis


def sample_valid_pixels(model: CameraModel, n: int, rng: np.random.Generator) -> np.ndarray:
    out = []
    total = 0
    while total < n:
        uv = rng.uniform([0.0, 0.0], [model.width, model.height], size=(2 * n, 2))
        uv = uv[valid_pixel_mask(model, uv)]
        out.append(uv)
        total += len(uv)
    return np.concatenate(out)[:n]


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(height, width, 2) array of pixel-center coordinates."""
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)
