"""Point-to-point ICP for aligning reconstructions of different runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import RigidTransform, kabsch


@dataclass
class ICPResult:
    transform: RigidTransform
    success: bool
    rms_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    n_pairs: int = 0
    message: str = ""


def icp_align(
    source,
    target,
    init: RigidTransform | None = None,
    max_iters: int = 50,
    max_corr_dist_m: float = 1.0,
    tol: float = 1e-12,
) -> ICPResult:
    """Transform T with T.apply(source) ≈ target.

    Each iteration pairs every transformed source point with its nearest
    target point (pairs beyond ``max_corr_dist_m`` are ignored) and re-fits T
    in closed form by SVD.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3 or len(dst) < 3:
        raise ValueError("ICP needs at least 3 points in each cloud")
    T = init or RigidTransform.identity()
    tree = cKDTree(dst)
    trace: list[float] = []
    n_pairs = 0
    it = 0
    for it in range(1, max_iters + 1):
        dist, j = tree.query(T.apply(src), distance_upper_bound=max_corr_dist_m)
        ok = np.isfinite(dist)
        n_pairs = int(ok.sum())
        if n_pairs < 3:
            return ICPResult(T, False, trace, it, n_pairs, "no correspondences within max_corr_dist")
        rms = float(np.sqrt(np.mean(dist[ok] ** 2)))
        trace.append(rms)
        if rms == 0.0:
            break
        T_new = kabsch(src[ok], dst[j[ok]])
        moved = max(
            np.abs(T_new.rotation - T.rotation).max(), np.abs(T_new.translation - T.translation).max()
        )
        T = T_new
        if moved < tol:
            break
    dist, _ = tree.query(T.apply(src), distance_upper_bound=max_corr_dist_m)
    ok = np.isfinite(dist)
    if ok.sum() >= 3:
        trace.append(float(np.sqrt(np.mean(dist[ok] ** 2))))
    return ICPResult(T, True, trace, it, int(ok.sum()))
