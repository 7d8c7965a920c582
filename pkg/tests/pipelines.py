"""Every CLI subcommand run against the synthetic fixture, shared by the CLI and acceptance tests."""

from pathlib import Path

import numpy as np

from omniloc import io
from omniloc.cli import main
from omniloc.geometry import RigidTransform, so3_exp


def make_clouds(root: Path):
    rng = np.random.default_rng(0)
    src = rng.uniform(-2, 2, (300, 3))
    G = RigidTransform(so3_exp([0.01, 0.02, -0.015]), [0.05, 0.0, -0.03])
    io.write_cloud(root / "src.xyz", src)
    io.write_cloud(root / "dst.olpc", G.apply(src), binary=True)
    return G


def run_all(fx: Path, out: Path, threads: int, seed: int = 0) -> None:
    make_clouds(fx)
    common = ["--threads", str(threads), "--seed", str(seed)]
    loc = out / "loc"
    cmds = [
        ["localize", "--matches", fx / "matches", "--ref-poses", fx / "scene.reference.poses.txt",
         "--depth-dir", fx / "ref", "--out", loc],
        ["eval-pose", "--est", loc / "poses.txt", "--manifest", fx / "scene.manifest", "--out", out / "pose"],
        ["retrieve", "--queries", fx / "query_desc.bin", "--db", fx / "ref_desc.bin", "--k", "5",
         "--out", out / "ret"],
        ["eval-ir", "--results", out / "ret" / "retrieval.json", "--manifest", fx / "scene.manifest",
         "--ks", "1,5", "--out", out / "ir"],
        ["ba-sim", "--runs", "2", "--poses", "6", "--out", out / "ba"],
        ["icp", "--source", fx / "src.xyz", "--target", fx / "dst.olpc", "--out", out / "icp"],
        ["augment", "--manifest", fx / "scene.manifest", "--face-px", "32", "--preset-scale", "0.05",
         "--out", out / "aug"],
        ["cubemap", "--pano", fx / "ref" / "r000.png", "--face-px", "32", "--out", out / "cube"],
        ["rectify", "--pano", fx / "ref" / "r000.png", "--camera", "fisheye2@0.1", "--random",
         "--out", out / "rect"],
        ["remap", "--image", out / "rect" / "r000.fisheye2_0.1.png", "--camera", "fisheye2@0.1",
         "--canvas-width", "256", "--out", out / "remap"],
    ]
    for c in cmds:
        rc = main([str(x) for x in c] + common)
        assert rc == 0, c


def report_bytes(out: Path) -> dict[str, bytes]:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
