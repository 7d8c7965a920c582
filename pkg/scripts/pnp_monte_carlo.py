"""Spherical PnP robustness sweep over outlier ratio and bearing noise.

    python scripts/pnp_monte_carlo.py --trials 100 --outliers 0 0.3 0.5 --noise 0 0.1 0.5
"""

import argparse
import time

import numpy as np

from omniloc.pose import pose_errors, ransac_pnp
from omniloc.synth import pnp_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--points", type=int, default=50)
    ap.add_argument("--outliers", type=float, nargs="+", default=[0.0, 0.3, 0.5])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.1, 0.5])
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    print(f"{'outliers':>8} {'noise°':>7} {'success':>8} {'med rot°':>10} {'med t/diam':>11} {'iters':>6} {'s':>6}")
    for out in a.outliers:
        for noise in a.noise:
            rng = np.random.default_rng(a.seed)
            rot, rel, iters, ok = [], [], [], 0
            t0 = time.perf_counter()
            for s in range(a.trials):
                T, b, X, diam, _ = pnp_scene(rng, a.points, out, noise)
                try:
                    res = ransac_pnp((b, X), seed=s)
                except Exception:
                    continue
                te, re = pose_errors(res.pose, T)
                rot.append(re)
                rel.append(te / diam)
                iters.append(res.iterations)
                ok += re < max(0.1, 2 * noise) and te < 0.01 * diam
            dt = time.perf_counter() - t0
            print(f"{out:8.2f} {noise:7.2f} {ok:5d}/{a.trials:<3d} {np.median(rot):10.4f} "
                  f"{np.median(rel):11.2e} {int(np.median(iters)):6d} {dt:6.1f}")


if __name__ == "__main__":
    main()
