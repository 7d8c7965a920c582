"""Plane bundle adjustment on simulated scans: cost and pose error before/after, per noise level.

    python scripts/ba_convergence.py --seeds 20 --rot 0.5 1 2 --trans 0.02 0.05 0.1
"""

import argparse
import time

import numpy as np

from omniloc.lidar.ba import optimize_poses
from omniloc.lidar.sim import Scenario, pose_rmse, simulate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--planes", type=int, default=5)
    ap.add_argument("--poses", type=int, default=10)
    ap.add_argument("--rot", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--trans", type=float, nargs="+", default=[0.02, 0.05, 0.1])
    a = ap.parse_args()

    print(f"{'rot°':>5} {'t m':>5} {'ok':>6} {'cost ratio':>11} {'t rmse m':>17} {'r rmse°':>15} {'iters':>5} {'s':>5}")
    for r in a.rot:
        for t in a.trans:
            ratios, t0s, t1s, r0s, r1s, its, ok = [], [], [], [], [], [], 0
            start = time.perf_counter()
            for seed in range(a.seeds):
                s = simulate(Scenario(a.planes, a.poses, r, t, seed))
                res = optimize_poses(s.init_poses, s.plane_features(), s.clouds)
                (ta, ra), (tb, rb) = pose_rmse(s.init_poses, s.gt_poses), pose_rmse(res.poses, s.gt_poses)
                ratios.append(res.cost_trace[-1] / res.cost_trace[0])
                t0s.append(ta), t1s.append(tb), r0s.append(ra), r1s.append(rb), its.append(res.iterations)
                ok += ratios[-1] <= 0.1 and tb < ta
            dt = time.perf_counter() - start
            print(f"{r:5.2f} {t:5.2f} {ok:3d}/{a.seeds:<2d} {np.median(ratios):11.2e} "
                  f"{np.median(t0s):7.4f}->{np.median(t1s):7.4f} {np.median(r0s):6.3f}->{np.median(r1s):6.3f} "
                  f"{int(np.median(its)):5d} {dt:5.1f}")


if __name__ == "__main__":
    main()
