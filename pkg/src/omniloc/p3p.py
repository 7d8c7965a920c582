"""Minimal absolute-pose solver on bearing vectors (Lambda-Twist formulation).

Depths Λ = (λ1, λ2, λ3) along the unit bearings y_i satisfy
    |λi yi − λj yj|² = |xi − xj|²   for the three pairs,
i.e. three quadrics ΛᵀMijΛ = aij. Two homogeneous combinations D1, D2 are
formed; a real root γ of det(D1 + γD2) = 0 yields a degenerate conic that
factors into two planes through the origin, each reducing the problem to a
quadratic. Bearings are never assumed to point forward, so the solver works
for fisheye and 360° cameras alike.
"""

from __future__ import annotations

import numpy as np

from .geometry import RigidTransform, kabsch

_EPS = 1e-12


def _quadric_mats(b12: float, b13: float, b23: float):
    M12 = np.array([[1.0, -b12, 0.0], [-b12, 1.0, 0.0], [0.0, 0.0, 0.0]])
    M13 = np.array([[1.0, 0.0, -b13], [0.0, 0.0, 0.0], [-b13, 0.0, 1.0]])
    M23 = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, -b23], [0.0, -b23, 1.0]])
    return M12, M13, M23


def _det_cubic(D1: np.ndarray, D2: np.ndarray) -> np.ndarray:
    """Coefficients (highest first) of γ ↦ det(D1 + γ D2), by multilinearity in columns."""

    def det3(a, b, c):
        return float(np.dot(a, np.cross(b, c)))

    a0, a1, a2 = D1.T
    b0, b1, b2 = D2.T
    c0 = det3(a0, a1, a2)
    c1 = det3(b0, a1, a2) + det3(a0, b1, a2) + det3(a0, a1, b2)
    c2 = det3(b0, b1, a2) + det3(b0, a1, b2) + det3(a0, b1, b2)
    c3 = det3(b0, b1, b2)
    return np.array([c3, c2, c1, c0])


def _conic_lines(Q: np.ndarray) -> list[np.ndarray]:
    """Normals n of the planes nᵀΛ = 0 whose union is {Λ : ΛᵀQΛ = 0} for rank-2 Q."""
    w, V = np.linalg.eigh(Q)
    i_null = int(np.argmin(np.abs(w)))
    rest = [i for i in range(3) if i != i_null]
    s1, s2 = w[rest[0]], w[rest[1]]
    e1, e2 = V[:, rest[0]], V[:, rest[1]]
    if s1 * s2 > 0:
        return []
    if abs(s1) < _EPS and abs(s2) < _EPS:
        return []
    if abs(s1) < abs(s2):
        s1, s2, e1, e2 = s2, s1, e2, e1
    s = np.sqrt(-s2 / s1)
    return [e1 + s * e2, e1 - s * e2]


def _depths_on_plane(n: np.ndarray, D: np.ndarray) -> list[np.ndarray]:
    """Directions Λ with nᵀΛ = 0 and ΛᵀDΛ = 0."""
    # orthonormal basis of the plane ⊥ n
    _, _, Vt = np.linalg.svd(n.reshape(1, 3))
    B = Vt[1:].T  # 3x2
    Q = B.T @ D @ B
    q11, q12, q22 = Q[0, 0], Q[0, 1], Q[1, 1]
    dirs = []
    # q11 a² + 2 q12 a b + q22 b² = 0; solve for the ratio with the larger pivot
    if abs(q11) >= abs(q22):
        if abs(q11) < _EPS:
            return []
        disc = q12 * q12 - q11 * q22
        if disc < 0:
            return []
        r = np.sqrt(disc)
        for a in ((-q12 + r) / q11, (-q12 - r) / q11):
            dirs.append(B @ np.array([a, 1.0]))
    else:
        disc = q12 * q12 - q11 * q22
        if disc < 0:
            return []
        r = np.sqrt(disc)
        for b in ((-q12 + r) / q22, (-q12 - r) / q22):
            dirs.append(B @ np.array([1.0, b]))
    return dirs


def _refine_depths(L, mats, dists, iters: int = 5):
    """Gauss-Newton polish of Λ on the three distance quadrics."""
    for _ in range(iters):
        r = np.array([L @ M @ L - a for M, a in zip(mats, dists)])
        J = np.stack([2.0 * M @ L for M in mats])
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        L = L - step
        if np.abs(step).max() < 1e-15 * max(1.0, np.abs(L).max()):
            break
    return L


def solve_p3p_bearings(bearings, points, max_residual: float = 1e-6) -> list[RigidTransform]:
    """Camera-to-world poses mapping three world points onto three bearings.

    Returns up to four candidates; an empty list signals a degenerate triple
    (collinear points, coincident bearings, no real solution).
    """
    y = np.asarray(bearings, dtype=np.float64).reshape(3, 3)
    x = np.asarray(points, dtype=np.float64).reshape(3, 3)
    ny = np.linalg.norm(y, axis=1)
    if np.any(ny < _EPS):
        return []
    y = y / ny[:, None]

    scale = max(np.abs(x - x.mean(axis=0)).max(), _EPS)
    xs = (x - x.mean(axis=0)) / scale
    a12 = float(np.sum((xs[0] - xs[1]) ** 2))
    a13 = float(np.sum((xs[0] - xs[2]) ** 2))
    a23 = float(np.sum((xs[1] - xs[2]) ** 2))
    area = np.linalg.norm(np.cross(xs[1] - xs[0], xs[2] - xs[0]))
    if min(a12, a13, a23) < 1e-12 or area < 1e-9 * max(a12, a13, a23):
        return []
    b12, b13, b23 = float(y[0] @ y[1]), float(y[0] @ y[2]), float(y[1] @ y[2])
    if max(b12, b13, b23) > 1.0 - 1e-14:
        return []

    M12, M13, M23 = _quadric_mats(b12, b13, b23)
    mats, dists = (M12, M13, M23), (a12, a13, a23)
    D1 = M12 * a23 - M23 * a12
    D2 = M13 * a23 - M23 * a13

    coeffs = _det_cubic(D1, D2)
    gammas = []
    if abs(coeffs[0]) > _EPS * np.abs(coeffs).max():
        roots = np.roots(coeffs)
        gammas = [r.real for r in roots if abs(r.imag) < 1e-8 * max(1.0, abs(r))]
    else:
        # D2 already singular: γ → ∞ corresponds to D0 = D2
        gammas = [np.inf]
        roots = np.roots(coeffs[1:]) if abs(coeffs[1]) > 0 else []
        gammas += [r.real for r in roots if abs(r.imag) < 1e-8 * max(1.0, abs(r))]

    raw = []
    for g in gammas:
        if np.isinf(g):
            D0, Dsub = D2, D1
        else:
            D0 = D1 + g * D2
            Dsub = D2 if abs(g) < 1.0 else D1
        for n in _conic_lines(D0):
            for d in _depths_on_plane(n, Dsub):
                if np.all(d < 0):
                    d = -d
                if np.any(d <= 0):
                    continue
                den = d @ M23 @ d
                if den <= 0:
                    continue
                L = d * np.sqrt(a23 / den)
                raw.append(_refine_depths(L, mats, dists))

    cands: list[RigidTransform] = []
    for L in raw:
        if np.any(~np.isfinite(L)) or np.any(L <= 0):
            continue
        res = max(abs(L @ M @ L - a) for M, a in zip(mats, dists))
        if res > 1e-6:
            continue
        T = kabsch((scale * L)[:, None] * y, x)
        if bearing_residuals(T, y, x).max() > max_residual:
            continue
        if any(
            np.abs(T.rotation - c.rotation).max() < 1e-7
            and np.abs(T.translation - c.translation).max() < 1e-7 * scale
            for c in cands
        ):
            continue
        cands.append(T)
    return cands


def bearing_residuals(pose: RigidTransform, bearings, points) -> np.ndarray:
    """Angle (rad) between each bearing and the direction to its point in the camera frame."""
    b = np.asarray(bearings, dtype=np.float64)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    p = (np.asarray(points, dtype=np.float64) - pose.translation) @ pose.rotation
    cross = np.linalg.norm(np.cross(b, p), axis=-1)
    dot = np.einsum("ij,ij->i", b, p)
    return np.arctan2(cross, dot)
