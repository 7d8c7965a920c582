"""VC1 black-border coverage and extract/remap round-trip error per camera preset.

    python scripts/vc_coverage.py --pano-width 2048 --save-dir /tmp/vc
"""

import argparse
import math
from pathlib import Path

import numpy as np

from omniloc import io
from omniloc.cameras import preset
from omniloc.synth import gradient_panorama
from omniloc.virtual_camera import extract_virtual, remap_to_equirect, sample_rotation, solid_angle_fraction


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pano-width", type=int, default=2048)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--save-dir", type=Path)
    a = ap.parse_args()

    W = a.pano_width
    pano = gradient_panorama(W, W // 2)
    R = sample_rotation(a.seed)
    print(f"{'camera':>9} {'hfov°':>6} {'sphere cov':>10} {'pixel cov':>9} {'MAE':>6}")
    for name in ("pinhole", "fisheye1", "fisheye2", "fisheye3"):
        m = preset(name)
        crop = extract_virtual(pano, m, R, threads=a.threads)
        back = remap_to_equirect(crop, m, R, canvas=(W, W // 2), threads=a.threads)
        mae = np.abs(back.image.astype(float) - pano)[back.mask].mean()
        d, _ = m.unproject(np.array([[1e-9, m.cy]]))
        hfov = 2 * math.degrees(math.atan2(abs(d[0, 0]), d[0, 2]))
        print(f"{name:>9} {hfov:6.1f} {solid_angle_fraction(back.mask):10.4f} {back.mask.mean():9.4f} {mae:6.3f}")
        if a.save_dir:
            a.save_dir.mkdir(parents=True, exist_ok=True)
            io.save_image(a.save_dir / f"{name}.png", crop)
            io.save_image(a.save_dir / f"{name}.vc1.png", back.image)
            io.save_image(io.mask_path(a.save_dir / f"{name}.vc1.png"), back.mask)


if __name__ == "__main__":
    main()
