"""Command-line entry point: ``omniloc <subcommand> ... --out DIR``.

Every subcommand writes its reports into ``--out`` as CSV + JSON twins. Work
is fanned out over ``--threads`` workers and merged in frame-id order, so the
bytes written do not depend on the thread count.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .cameras import CameraError, CameraModel, EquirectModel, load_camera_file
from .dataset import (
    ManifestError,
    RunReport,
    VC2Config,
    emit_augmented_set,
    load_manifest,
    scaled_preset,
    to_csv,
    to_json,
)
from .geometry import rot_x, rot_y, rot_z
from .lidar.ba import BAError, BAOptions, optimize_poses
from .lidar.features import FeatureError
from .lidar.icp import icp_align
from .lidar.sim import Scenario, load_scenario, pose_rmse, simulate
from .pose import LocalizationError, RansacConfig, build_correspondences, pose_errors, ransac_pnp
from .retrieval import Database, RetrievalError, RetrievalResult, group_descriptors, read_descriptors
from .virtual_camera import (
    VirtualCameraError,
    cubemap_faces,
    extract_virtual,
    remap_to_equirect,
    sample_rotation,
    solid_angle_fraction,
)

ERROR_CODES = [
    (CameraError, "E_CAMERA"),
    (VirtualCameraError, "E_VCAM"),
    (RetrievalError, "E_RETRIEVAL"),
    (LocalizationError, "E_LOCALIZE"),
    (BAError, "E_BA"),
    (FeatureError, "E_FEATURE"),
    (ManifestError, "E_MANIFEST"),
    (io.FormatError, "E_FORMAT"),
    (FileNotFoundError, "E_NOFILE"),
    (OSError, "E_IO"),
    (ValueError, "E_VALUE"),
]


class UsageError(ValueError):
    pass


def error_code(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "E_USAGE"
    for cls, code in ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return "E_INTERNAL"


# --- helpers -----------------------------------------------------------------


def parse_camera(text: str) -> CameraModel:
    """``preset``, ``preset@scale`` or a camera file path."""
    if Path(text).is_file():
        return load_camera_file(text)
    name, _, scale = text.partition("@")
    return scaled_preset(name, float(scale) if scale else 1.0)


def parse_rotation(text: str | None) -> np.ndarray:
    """``yaw,pitch,roll`` in degrees, composed as yaw(y)·pitch(x)·roll(z)."""
    if not text:
        return np.eye(3)
    try:
        yaw, pitch, roll = (math.radians(float(x)) for x in text.split(","))
    except ValueError as e:
        raise UsageError(f"--rotation expects yaw,pitch,roll degrees, got {text!r}") from e
    return rot_y(yaw) @ rot_x(pitch) @ rot_z(roll)


def parse_ks(text: str) -> list[int]:
    try:
        ks = sorted({int(x) for x in text.split(",")})
    except ValueError as e:
        raise UsageError(f"bad --ks {text!r}") from e
    if not ks or ks[0] < 1:
        raise UsageError("--ks must be positive integers")
    return ks


def pmap(fn, items, threads: int):
    """Order-preserving map over a thread pool."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def matrix_list(R) -> list[list[float]]:
    return [[float(x) for x in row] for row in np.asarray(R)]


# --- subcommands -------------------------------------------------------------


def cmd_remap(a, out: Path) -> None:
    model = parse_camera(a.camera)
    img = io.load_image(a.image)
    R = parse_rotation(a.rotation)
    res = remap_to_equirect(img, model, R, (a.canvas_width, a.canvas_width // 2), a.sampler, a.threads)
    stem = Path(a.image).stem
    io.save_image(out / f"{stem}.vc1.png", res.image)
    io.save_image(io.mask_path(out / f"{stem}.vc1.png"), res.mask)
    cov = solid_angle_fraction(res.mask)
    rows = [[stem, model.kind, float(cov), float(res.mask.mean())]]
    write_text(out / "remap.csv", to_csv(["image", "camera", "coverage_sphere", "coverage_pixels"], rows))
    write_text(out / "remap.json", to_json({"image": stem, "camera": a.camera, "coverage_sphere": cov,
                                           "coverage_pixels": float(res.mask.mean()), "rotation": matrix_list(R)}))


def cmd_rectify(a, out: Path) -> None:
    model = parse_camera(a.camera)
    pano = io.load_image(a.pano)
    R = sample_rotation(a.seed) if a.random else parse_rotation(a.rotation)
    img = extract_virtual(pano, model, R, a.sampler, a.threads)
    stem = Path(a.pano).stem
    name = f"{stem}.{a.camera.replace('@', '_').replace('/', '_')}.png"
    io.save_image(out / name, img)
    write_text(out / "rectify.csv", to_csv(["image", "camera", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"],
                                           [[name, a.camera, *map(float, R.ravel())]]))
    write_text(out / "rectify.json", to_json({"image": name, "camera": a.camera, "rotation": matrix_list(R)}))


def cmd_cubemap(a, out: Path) -> None:
    pano = io.load_image(a.pano)
    stem = Path(a.pano).stem
    rows = []
    for face, R, img in cubemap_faces(pano, a.face_px, a.include_bottom, a.sampler, a.threads):
        name = f"{stem}.{face}.png"
        io.save_image(out / name, img)
        rows.append([name, face, *map(float, R.ravel())])
    write_text(out / "cubemap.csv", to_csv(["image", "face", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"], rows))
    write_text(out / "cubemap.json", to_json({"faces": [{"image": r[0], "face": r[1]} for r in rows], "face_px": a.face_px}))


def cmd_retrieve(a, out: Path) -> None:
    queries = sorted(read_descriptors(a.queries), key=lambda d: d.id)
    refs = read_descriptors(a.db)
    if a.mode == "vc2":
        db = Database(group_descriptors(refs))
    else:
        db = Database(refs)
    results = pmap(lambda q: db.query(q, a.k), queries, a.threads)
    rows = [[r.query_id, rank + 1, ref, float(s)] for r in results for rank, (ref, s) in enumerate(r.ranked)]
    write_text(out / "retrieval.csv", to_csv(["query", "rank", "ref", "score"], rows))
    write_text(out / "retrieval.json", to_json({
        "mode": a.mode, "k": a.k,
        "results": [{"query": r.query_id, "ranked": [[ref, s] for ref, s in r.ranked]} for r in results],
    }))


def load_results(path) -> list[RetrievalResult]:
    import json

    data = json.loads(Path(path).read_text())
    try:
        return [RetrievalResult(r["query"], [(x[0], float(x[1])) for x in r["ranked"]], int(data.get("k", 0)))
                for r in data["results"]]
    except (KeyError, TypeError, IndexError) as e:
        raise io.FormatError(f"{path}: not a retrieval result file") from e


def _ids_of_type(query_type: str, manifest, ids) -> set[str]:
    """Query ids of a camera type (``pinhole`` or ``pinhole/night``); without a
    manifest, ids containing the type string."""
    cam, _, tag = query_type.partition("/")
    if manifest is None:
        return {i for i in ids if cam in i}
    return {f.id for (c, t), frames in manifest.queries.items() if c == cam and (not tag or t == tag) for f in frames}


def cmd_eval_ir(a, out: Path) -> None:
    from .retrieval import eval_retrieval

    results = load_results(a.results)
    if a.manifest:
        m = load_manifest(a.manifest)
        qp, rp = m.query_poses(), m.ref_poses()
        thr = a.threshold if a.threshold is not None else m.threshold_m
    else:
        if not (a.query_poses and a.ref_poses):
            raise UsageError("need --manifest or both --query-poses and --ref-poses")
        qp, rp = io.read_poses(a.query_poses), io.read_poses(a.ref_poses)
        thr = a.threshold if a.threshold is not None else 5.0
    if a.query_type != "all":
        keep = _ids_of_type(a.query_type, load_manifest(a.manifest) if a.manifest else None, [r.query_id for r in results])
        results = [r for r in results if r.query_id in keep]
        if not results:
            raise RetrievalError(f"no results for query type {a.query_type!r}")
    report = RunReport()
    report.add_ir(a.query_type, a.mode, eval_retrieval(results, qp, rp, thr, parse_ks(a.ks)))
    d = report.as_dict()
    write_text(out / "ir.csv", report.ir_csv())
    write_text(out / "ir.json", to_json({"threshold_m": thr, "rows": d["ir"]}))


def _match_files(path: Path) -> dict[str, list[tuple[dict, np.ndarray]]]:
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    if not files:
        raise io.FormatError(f"no match files under {path}")
    by_query: dict[str, list] = {}
    for f in files:
        header, m = io.read_matches(f)
        by_query.setdefault(header["query"], []).append((header, m))
    return dict(sorted(by_query.items()))


def localize_one(qid, sets, ref_poses, depth_for, ref_model_for, camera, cfg: RansacConfig):
    """Pool correspondences from every matched reference, then RANSAC + refinement."""
    corrs, dropped = [], 0
    for header, m in sorted(sets, key=lambda s: s[0]["ref"]):
        ref = header["ref"]
        if ref not in ref_poses:
            raise LocalizationError(f"query {qid}: no pose for reference {ref!r}")
        model = camera or parse_camera(header.get("model", ""))
        c, dr = build_correspondences(m, model, depth_for(ref), ref_poses[ref], ref_model_for(ref))
        corrs += c
        dropped += dr
    seed = (cfg.seed * 1_000_003 + zlib.crc32(qid.encode())) % (2**32)
    diag = {"query": qid, "correspondences": len(corrs), "dropped": dropped}
    try:
        res = ransac_pnp(corrs, RansacConfig(cfg.angular_threshold_rad, cfg.max_iters, cfg.confidence,
                                             cfg.min_inliers, seed))
    except LocalizationError as e:
        diag.update(status="failed", reason=str(e), inliers=0, iterations=0)
        return None, diag
    diag.update(status="ok", inliers=int(len(res.inliers)), iterations=int(res.iterations))
    return res.pose, diag


def cmd_localize(a, out: Path) -> None:
    ref_poses = io.read_poses(a.ref_poses)
    depth_dir = Path(a.depth_dir)
    cache: dict[str, np.ndarray] = {}

    def depth_for(ref):
        if ref not in cache:
            cache[ref] = io.read_pfm(depth_dir / f"{ref}.pfm")
        return cache[ref]

    def ref_model_for(ref):
        if a.ref_width:
            return EquirectModel(a.ref_width, a.ref_width // 2)
        h, w = depth_for(ref).shape
        return EquirectModel(w, h)

    by_query = _match_files(Path(a.matches))
    for ref in sorted({h["ref"] for sets in by_query.values() for h, _ in sets}):
        depth_for(ref)  # load up front so workers only read the cache
    camera = parse_camera(a.camera) if a.camera else None
    cfg = RansacConfig(math.radians(a.threshold_deg), a.max_iters, a.confidence, 4, a.seed)
    items = list(by_query.items())
    results = pmap(lambda it: localize_one(it[0], it[1], ref_poses, depth_for, ref_model_for, camera, cfg),
                   items, a.threads)
    poses = {qid: pose for (qid, _), (pose, _) in zip(items, results) if pose is not None}
    io.write_poses(out / "poses.txt", poses)
    diags = [d for _, d in results]
    cols = ["query", "status", "correspondences", "dropped", "inliers", "iterations"]
    write_text(out / "localize.csv", to_csv(cols, [[d[c] for c in cols] for d in diags]))
    write_text(out / "localize.json", to_json({"queries": diags}))


def cmd_eval_pose(a, out: Path) -> None:
    est = io.read_poses(a.est)
    if a.manifest:
        gt = load_manifest(a.manifest).query_poses()
    elif a.gt:
        gt = io.read_poses(a.gt)
    else:
        raise UsageError("need --gt or --manifest")
    if a.query_type != "all":
        keep = _ids_of_type(a.query_type, load_manifest(a.manifest) if a.manifest else None, list(gt))
        gt = {k: v for k, v in gt.items() if k in keep}
    if not gt:
        raise LocalizationError("no ground-truth queries to evaluate")
    errors = [pose_errors(est[k], gt[k]) if k in est else None for k in sorted(gt)]
    report = RunReport()
    report.add_pose(a.query_type, a.mode, errors)
    write_text(out / "pose.csv", report.pose_csv())
    per = [{"query": k, "trans_err_m": e[0] if e else None, "rot_err_deg": e[1] if e else None}
           for k, e in zip(sorted(gt), errors)]
    write_text(out / "pose.json", to_json({"rows": report.as_dict()["localization"], "queries": per}))


def cmd_augment(a, out: Path) -> None:
    m = load_manifest(a.manifest)
    presets = tuple(p for p in a.presets.split(",") if p) if a.presets else ()
    cfg = VC2Config(cube_faces=a.cube_faces, cube_face_px=a.face_px, crop_presets=presets,
                    crops_per_preset=a.crops_per_preset, seed=a.seed, preset_scale=a.preset_scale)
    inv = emit_augmented_set(m, cfg, out, a.threads)
    rows = [["originals", inv["originals"]], ["crops", inv["crops"]], ["labels", inv["labels"]]]
    rows += [[f"camera:{k}", v] for k, v in inv["by_camera"].items()]
    write_text(out / "inventory.csv", to_csv(["item", "count"], rows))
    write_text(out / "inventory.json", to_json(inv))


def run_ba(sc: Scenario) -> dict:
    scene = simulate(sc)
    feats = scene.plane_features()
    res = optimize_poses(scene.init_poses, feats, scene.clouds, BAOptions())
    t0, r0 = pose_rmse(scene.init_poses, scene.gt_poses)
    t1, r1 = pose_rmse(res.poses, scene.gt_poses)
    return {
        "seed": sc.seed, "cost_initial": res.cost_trace[0], "cost_final": res.cost_trace[-1],
        "iterations": res.iterations, "converged": bool(res.converged),
        "trans_rmse_initial_m": t0, "trans_rmse_final_m": t1,
        "rot_rmse_initial_deg": r0, "rot_rmse_final_deg": r1,
    }


def cmd_ba_sim(a, out: Path) -> None:
    sc = load_scenario(a.scenario) if a.scenario else Scenario()
    for key in ("planes", "poses", "noise_rot_deg", "noise_t_m"):
        v = getattr(a, key)
        if v is not None:
            setattr(sc, key, v)
    from dataclasses import replace

    scs = [replace(sc, seed=sc.seed + a.seed + i) for i in range(a.runs)]
    runs = pmap(run_ba, scs, a.threads)
    cols = list(runs[0])
    write_text(out / "ba.csv", to_csv(cols, [[r[c] for c in cols] for r in runs]))
    write_text(out / "ba.json", to_json({"scenario": {k: getattr(sc, k) for k in sc.__dataclass_fields__},
                                         "runs": runs}))


def cmd_icp(a, out: Path) -> None:
    src, dst = io.read_cloud(a.source), io.read_cloud(a.target)
    res = icp_align(src, dst, max_iters=a.max_iters, max_corr_dist_m=a.max_corr_dist)
    io.write_poses(out / "transform.txt", {"source_to_target": res.transform})
    rows = [[i + 1, float(r)] for i, r in enumerate(res.rms_trace)]
    write_text(out / "icp.csv", to_csv(["iteration", "rms_m"], rows))
    write_text(out / "icp.json", to_json({
        "success": res.success, "iterations": res.iterations, "pairs": res.n_pairs, "message": res.message,
        "rotation": matrix_list(res.transform.rotation),
        "translation": [float(x) for x in res.transform.translation],
        "rms_trace": [float(x) for x in res.rms_trace],
    }))


# --- parser ------------------------------------------------------------------


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("OMNILOC_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads())
    common.add_argument("--out", required=True, help="output directory")

    p = argparse.ArgumentParser(prog="omniloc", description="Cross-device omnidirectional localization toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("remap", cmd_remap, "paint a camera image onto a 2:1 canvas (VC1)")
    sp.add_argument("--image", required=True)
    sp.add_argument("--camera", required=True, help="preset, preset@scale, or camera file")
    sp.add_argument("--rotation", help="yaw,pitch,roll in degrees")
    sp.add_argument("--canvas-width", type=int, default=1024)
    sp.add_argument("--sampler", choices=("bilinear", "nearest"), default="bilinear")

    sp = add("rectify", cmd_rectify, "render a virtual camera from a panorama (VC2)")
    sp.add_argument("--pano", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--rotation")
    sp.add_argument("--random", action="store_true", help="draw the rotation from --seed")
    sp.add_argument("--sampler", choices=("bilinear", "nearest"), default="bilinear")

    sp = add("cubemap", cmd_cubemap, "split a panorama into cube faces")
    sp.add_argument("--pano", required=True)
    sp.add_argument("--face-px", type=int, default=512)
    sp.add_argument("--include-bottom", action="store_true")
    sp.add_argument("--sampler", choices=("bilinear", "nearest"), default="bilinear")

    sp = add("retrieve", cmd_retrieve, "rank references for each query descriptor")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--db", required=True)
    sp.add_argument("--mode", choices=("direct", "vc1", "vc2"), default="direct")
    sp.add_argument("--k", type=int, default=10)

    sp = add("eval-ir", cmd_eval_ir, "recall/precision at k")
    sp.add_argument("--results", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--query-poses")
    sp.add_argument("--ref-poses")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--ks", default="1,5,10")
    sp.add_argument("--query-type", default="all")
    sp.add_argument("--mode", default="direct")

    sp = add("localize", cmd_localize, "absolute pose from 2D-2D matches and reference depth")
    sp.add_argument("--matches", required=True, help="match file or directory of them")
    sp.add_argument("--ref-poses", required=True)
    sp.add_argument("--depth-dir", required=True)
    sp.add_argument("--camera", help="query camera; default from the match header")
    sp.add_argument("--ref-width", type=int, help="panorama width the ref pixels refer to")
    sp.add_argument("--threshold-deg", type=float, default=0.5)
    sp.add_argument("--max-iters", type=int, default=10_000)
    sp.add_argument("--confidence", type=float, default=0.999)

    sp = add("eval-pose", cmd_eval_pose, "accuracy buckets of estimated poses")
    sp.add_argument("--est", required=True)
    sp.add_argument("--gt")
    sp.add_argument("--manifest")
    sp.add_argument("--query-type", default="all")
    sp.add_argument("--mode", default="direct")

    sp = add("augment", cmd_augment, "write 360 references plus VC2 crops and labels")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--cube-faces", type=int, default=5)
    sp.add_argument("--face-px", type=int, default=512)
    sp.add_argument("--presets", default="fisheye1,fisheye2,fisheye3")
    sp.add_argument("--crops-per-preset", type=int, default=1)
    sp.add_argument("--preset-scale", type=float, default=1.0)

    sp = add("ba-sim", cmd_ba_sim, "plane bundle adjustment on simulated scans")
    sp.add_argument("--scenario")
    sp.add_argument("--planes", type=int)
    sp.add_argument("--poses", type=int)
    sp.add_argument("--noise-rot-deg", type=float)
    sp.add_argument("--noise-t-m", type=float)
    sp.add_argument("--runs", type=int, default=1)

    sp = add("icp", cmd_icp, "rigidly align two point clouds")
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--max-iters", type=int, default=50)
    sp.add_argument("--max-corr-dist", type=float, default=1.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # argparse exits with status 2 on bad flags
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        args.func(args, out)
        print(f"{args.command}: wrote {out} in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
        return 0
    except Exception as e:  # noqa: BLE001 - every failure maps to one machine-readable line
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"error: {error_code(e)}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
