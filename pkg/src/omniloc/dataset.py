"""Scene manifests, VC2 augmentation sets and run reports."""

from __future__ import annotations

import csv
import io as _io
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .cameras import CameraModel, preset
from .geometry import RigidTransform, rot_to_quat
from .virtual_camera import CUBE_FACES, cube_face_model, cube_face_rotation, extract_virtual, sample_rotation


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    id: str
    image: Path
    depth: Path | None
    translation: tuple[float, float, float]
    quat: tuple[float, float, float, float]  # (qw, qx, qy, qz) as written

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform.from_quat(self.translation, *self.quat)


@dataclass
class SceneManifest:
    name: str
    threshold_m: float
    references: list[Frame]
    queries: dict[tuple[str, str], list[Frame]] = field(default_factory=dict)

    def ref_poses(self) -> dict[str, RigidTransform]:
        return {f.id: f.pose for f in self.references}

    def query_poses(self, camera: str | None = None) -> dict[str, RigidTransform]:
        return {
            f.id: f.pose
            for (cam, _), frames in self.queries.items()
            if camera is None or cam == camera
            for f in frames
        }


def default_threshold(scene: str) -> float:
    """5 m for Concourse, 10 m for the larger scenes."""
    return 5.0 if scene.lower() == "concourse" else 10.0


def _read_pose_table(path: Path, where: str) -> dict[str, tuple]:
    table = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ManifestError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        if parts[0] in table:
            raise ManifestError(f"{path}:{lineno}: duplicate frame id {parts[0]!r}")
        try:
            vals = [float(x) for x in parts[1:]]
        except ValueError as e:
            raise ManifestError(f"{path}:{lineno}: {e}") from e
        table[parts[0]] = (tuple(vals[:3]), tuple(vals[3:]))
    return table


def load_manifest(path) -> SceneManifest:
    """Parse a scene manifest.

    Layout::

        scene = concourse
        threshold_m = 5            # optional
        [reference]
        poses = ref_poses.txt
        <frame_id> <image> <depth>
        [query pinhole day]
        poses = pinhole_day.txt
        <frame_id> <image>

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    top: dict[str, str] = {}
    sections: list[dict] = []
    cur = None
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ManifestError(f"{path}:{lineno}: malformed section header")
            head = line[1:-1].split()
            if head == ["reference"]:
                key = ("reference",)
            elif len(head) == 3 and head[0] == "query":
                key = ("query", head[1], head[2])
            else:
                raise ManifestError(f"{path}:{lineno}: unknown section {line!r}")
            cur = {"key": key, "poses": None, "rows": [], "line": lineno}
            sections.append(cur)
            continue
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            if cur is None:
                top[k] = v
            elif k == "poses":
                cur["poses"] = v
            else:
                raise ManifestError(f"{path}:{lineno}: unknown key {k!r} in section")
            continue
        if cur is None:
            raise ManifestError(f"{path}:{lineno}: frame line outside a section")
        cur["rows"].append((lineno, line.split()))

    if "scene" not in top:
        raise ManifestError(f"{path}: missing 'scene ='")
    scene = top["scene"]
    try:
        thr = float(top["threshold_m"]) if "threshold_m" in top else default_threshold(scene)
    except ValueError as e:
        raise ManifestError(f"{path}: bad threshold_m") from e

    refs: list[Frame] | None = None
    queries: dict[tuple[str, str], list[Frame]] = {}
    for sec in sections:
        is_ref = sec["key"][0] == "reference"
        if sec["poses"] is None:
            raise ManifestError(f"{path}:{sec['line']}: section lacks 'poses ='")
        pose_file = root / sec["poses"]
        if not pose_file.is_file():
            raise ManifestError(f"missing file: {pose_file}")
        table = _read_pose_table(pose_file, str(sec["key"]))
        frames, seen = [], set()
        for lineno, parts in sec["rows"]:
            want = 3 if is_ref else 2
            if len(parts) != want:
                raise ManifestError(f"{path}:{lineno}: expected {want} fields, got {len(parts)}")
            fid = parts[0]
            if fid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate frame id {fid!r}")
            seen.add(fid)
            image = root / parts[1]
            depth = root / parts[2] if is_ref else None
            for f in (image, depth):
                if f is not None and not f.is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file: {f}")
            if fid not in table:
                raise ManifestError(f"{path}:{lineno}: no pose for frame {fid!r}")
            t, q = table[fid]
            frames.append(Frame(fid, image, depth, t, q))
        if is_ref:
            if refs is not None:
                raise ManifestError(f"{path}: more than one [reference] section")
            refs = frames
        else:
            key = sec["key"][1:]
            if key in queries:
                raise ManifestError(f"{path}: duplicate section [query {key[0]} {key[1]}]")
            queries[key] = frames
    if refs is None:
        raise ManifestError(f"{path}: missing [reference] section")
    return SceneManifest(scene, thr, refs, queries)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_manifest(m: SceneManifest, path) -> None:
    """Write the manifest plus one pose file per section next to it."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)

    def rel(p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(root.resolve()))
        except ValueError:
            return str(Path(p).resolve())

    def write_poses(name, frames):
        lines = [" ".join([f.id, *map(_fmt, f.translation), *map(_fmt, f.quat)]) for f in frames]
        (root / name).write_text("".join(s + "\n" for s in lines))

    out = [f"scene = {m.name}", f"threshold_m = {_fmt(m.threshold_m)}", "", "[reference]"]
    ref_pf = f"{path.stem}.reference.poses.txt"
    write_poses(ref_pf, m.references)
    out.append(f"poses = {ref_pf}")
    out += [f"{f.id} {rel(f.image)} {rel(f.depth)}" for f in m.references]
    for (cam, tag), frames in m.queries.items():
        pf = f"{path.stem}.query_{cam}_{tag}.poses.txt"
        write_poses(pf, frames)
        out += ["", f"[query {cam} {tag}]", f"poses = {pf}"]
        out += [f"{f.id} {rel(f.image)}" for f in frames]
    path.write_text("\n".join(out) + "\n")


# --- VC2 augmentation --------------------------------------------------------


@dataclass
class VC2Config:
    cube_faces: int = 5  # 0 disables, 5 drops the floor face, 6 keeps it
    cube_face_px: int = 512
    crop_presets: tuple[str, ...] = ("fisheye1", "fisheye2", "fisheye3")
    crops_per_preset: int = 1
    yaw_range: tuple[float, float] = (0.0, 2 * math.pi)
    pitch_range: tuple[float, float] = (-math.radians(15), math.radians(15))
    roll_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    preset_scale: float = 1.0  # shrink preset resolutions (keeps FoV)

    @property
    def crops_per_reference(self) -> int:
        return self.cube_faces + len(self.crop_presets) * self.crops_per_preset


@dataclass(frozen=True)
class CropSpec:
    name: str
    camera: str
    model: CameraModel
    rotation: np.ndarray


def scaled_preset(name: str, scale: float) -> CameraModel:
    if scale == 1.0:
        return preset(name)
    base = preset(name)
    from .cameras import PRESET_SPECS, model_from_spec

    spec = dict(PRESET_SPECS[name])
    spec["width"] = max(2, int(round(spec["width"] * scale / 2)) * 2)
    spec["height"] = max(1, spec["width"] // 2 if base.kind == "equirect" else int(round(spec["height"] * scale)))
    return model_from_spec(spec)


def crop_plan(cfg: VC2Config, ref_index: int) -> list[CropSpec]:
    """Deterministic crop list for one reference (rotation RNG keyed by seed and index)."""
    if not 0 <= cfg.cube_faces <= 6:
        raise ValueError("cube_faces must lie in [0, 6]")
    plan = []
    face_model = cube_face_model(cfg.cube_face_px)
    for face in CUBE_FACES[: cfg.cube_faces]:
        plan.append(CropSpec(f"cube_{face}", f"cube_{face}", face_model, cube_face_rotation(face)))
    rng = np.random.default_rng([cfg.seed, ref_index])
    for cam in cfg.crop_presets:
        model = scaled_preset(cam, cfg.preset_scale)
        for i in range(cfg.crops_per_preset):
            R = sample_rotation(rng, cfg.yaw_range, cfg.pitch_range, cfg.roll_range)
            plan.append(CropSpec(f"{cam}_{i}", cam, model, R))
    return plan


def crop_pose(ref_pose: RigidTransform, crop_rotation: np.ndarray) -> RigidTransform:
    """Camera-to-world pose of a crop: the crop frame sees panorama direction Rᵀd."""
    return RigidTransform(ref_pose.rotation @ np.asarray(crop_rotation).T, ref_pose.translation)


def _label(name: str, camera: str, T: RigidTransform) -> str:
    q = rot_to_quat(T.rotation)
    vals = [*T.translation, *q]
    return f"{name} {camera} " + " ".join(f"{v:.12g}" for v in vals)


def emit_augmented_set(m: SceneManifest, cfg: VC2Config, out_dir, threads: int = 1) -> dict:
    """Write originals + VC2 crops and a ``labels.txt``; returns the inventory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = []
    inventory = {"originals": 0, "crops": 0, "by_camera": {}}
    for idx, ref in enumerate(sorted(m.references, key=lambda f: f.id)):
        orig_name = f"{ref.id}{ref.image.suffix}"
        shutil.copyfile(ref.image, out / orig_name)
        labels.append(_label(orig_name, "360", ref.pose))
        inventory["originals"] += 1
        plan = crop_plan(cfg, idx)
        if not plan:
            continue
        pano = io.load_image(ref.image)
        for c in plan:
            img = extract_virtual(pano, c.model, c.rotation, "bilinear", threads)
            name = f"{ref.id}.{c.name}.png"
            io.save_image(out / name, img)
            labels.append(_label(name, c.camera, crop_pose(ref.pose, c.rotation)))
            inventory["crops"] += 1
            inventory["by_camera"][c.camera] = inventory["by_camera"].get(c.camera, 0) + 1
    (out / "labels.txt").write_text("".join(s + "\n" for s in labels))
    inventory["labels"] = len(labels)
    inventory["by_camera"] = dict(sorted(inventory["by_camera"].items()))
    return inventory


# --- reports -----------------------------------------------------------------


def to_json(obj) -> str:
    """Canonical JSON (sorted keys, fixed separators) so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


IR_HEADER = ["query_type", "mode", "k", "recall", "precision"]
POSE_HEADER = ["query_type", "mode", "n", "failed", "high", "medium", "low", "median_trans_m", "median_rot_deg"]


@dataclass
class RunReport:
    ir_rows: list[list] = field(default_factory=list)
    pose_rows: list[list] = field(default_factory=list)
    augmentation: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    def add_ir(self, query_type: str, mode: str, table: dict[int, tuple[float, float]]) -> None:
        for k in sorted(table):
            r, p = table[k]
            self.ir_rows.append([query_type, mode, int(k), float(r), float(p)])

    def add_pose(self, query_type: str, mode: str, errors: list) -> None:
        from .pose import accuracy_table

        acc = accuracy_table(errors)
        ok = [e for e in errors if e is not None]
        med_t = float(np.median([e[0] for e in ok])) if ok else float("nan")
        med_r = float(np.median([e[1] for e in ok])) if ok else float("nan")
        self.pose_rows.append(
            [query_type, mode, len(errors), len(errors) - len(ok), acc["high"], acc["medium"], acc["low"], med_t, med_r]
        )

    def ir_csv(self) -> str:
        return to_csv(IR_HEADER, self.ir_rows)

    def pose_csv(self) -> str:
        return to_csv(POSE_HEADER, self.pose_rows)

    def as_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "ir": [dict(zip(IR_HEADER, map(clean, r))) for r in self.ir_rows],
            "localization": [dict(zip(POSE_HEADER, map(clean, r))) for r in self.pose_rows],
            "augmentation": self.augmentation,
            "runtime": self.runtime,
        }
