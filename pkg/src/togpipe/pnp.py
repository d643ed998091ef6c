"""Camera pose from 2D-3D correspondences.

Minimizes the reprojection objective sum_i ||px_i - proj(R X_i + t)||
with a RANSAC loop (EPnP-style minimal solves for hypotheses) followed by
Levenberg-Marquardt refinement over the consensus set. Planar point sets
are handled with the 3-control-point variant; only rank-deficient
(collinear) configurations are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateConfiguration, InsufficientCorrespondences, NoConsensus
from .geometry import CameraIntrinsics, RigidTransform, rotation_from_axis_angle

DEFAULT_RANSAC_THRESHOLD_PX = 8.0
DEFAULT_RANSAC_ITERS = 1000
DEFAULT_RANSAC_SEED = 0
DEFAULT_RANSAC_CONFIDENCE = 0.99

_LM_LAMBDA0 = 1e-3
_LM_MAX_ITERS = 100
_LM_STEP_TOL = 1e-10


@dataclass
class PnPResult:
    transform: RigidTransform
    inlier_indices: list[int]
    mean_reprojection_error: float


def _reprojection_errors(R, t, world, pix, K: CameraIntrinsics) -> np.ndarray:
    """Per-point pixel error; points behind the camera get +inf."""
    pc = world @ R.T + t
    err = np.full(len(world), np.inf)
    front = pc[:, 2] > 1e-12
    u = K.fx * pc[front, 0] / pc[front, 2] + K.cx
    v = K.fy * pc[front, 1] / pc[front, 2] + K.cy
    err[front] = np.hypot(u - pix[front, 0], v - pix[front, 1])
    return err


def _procrustes(world: np.ndarray, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid fit cam ~ R @ world + t (Kabsch)."""
    wc = world.mean(axis=0)
    cc = cam.mean(axis=0)
    H = (world - wc).T @ (cam - cc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cc - R @ wc
    return R, t


def _control_points(world: np.ndarray) -> tuple[np.ndarray, bool]:
    """Centroid + principal-axis control points; 3 of them for planar sets."""
    n = len(world)
    c0 = world.mean(axis=0)
    centered = world - c0
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = s / math.sqrt(n)
    if s[0] < 1e-12 or s[1] < 1e-9 * s[0]:
        raise DegenerateConfiguration("points are (near-)collinear")
    planar = s[2] < 1e-7 * s[0]
    if planar:
        cw = np.vstack([c0, c0 + scale[0] * vt[0], c0 + scale[1] * vt[1]])
    else:
        cw = np.vstack(
            [c0, c0 + scale[0] * vt[0], c0 + scale[1] * vt[1], c0 + scale[2] * vt[2]]
        )
    return cw, planar


def _barycentric(world: np.ndarray, cw: np.ndarray) -> np.ndarray:
    """Coordinates of each point in the control-point basis (rows sum to 1)."""
    m = len(cw)
    A = np.vstack([cw.T, np.ones(m)])  # 4 x m
    B = np.vstack([world.T, np.ones(len(world))])  # 4 x N
    alphas, *_ = np.linalg.lstsq(A, B, rcond=None)
    return alphas.T  # N x m


def _build_M(alphas: np.ndarray, pix: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    n, m = alphas.shape
    M = np.zeros((2 * n, 3 * m))
    for j in range(m):
        a = alphas[:, j]
        M[0::2, 3 * j + 0] = a * K.fx
        M[0::2, 3 * j + 2] = a * (K.cx - pix[:, 0])
        M[1::2, 3 * j + 1] = a * K.fy
        M[1::2, 3 * j + 2] = a * (K.cy - pix[:, 1])
    return M


def _kernel_diffs(kernel: np.ndarray, m: int) -> tuple[list, np.ndarray]:
    pairs = list(combinations(range(m), 2))
    # diffs[k][p] = v_k restricted to control point i minus control point j
    diffs = np.empty((kernel.shape[0], len(pairs), 3))
    for k, v in enumerate(kernel):
        cc = v.reshape(m, 3)
        for p, (i, j) in enumerate(pairs):
            diffs[k, p] = cc[i] - cc[j]
    return pairs, diffs


def _gauss_newton_betas(betas: np.ndarray, diffs: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Refine betas so inter-control-point distances match the world frame."""
    betas = betas.copy()
    for _ in range(10):
        dx = np.einsum("k,kpc->pc", betas, diffs)  # P x 3
        r = rho - np.einsum("pc,pc->p", dx, dx)
        J = 2.0 * np.einsum("pc,kpc->pk", dx, diffs)
        JTJ = J.T @ J
        try:
            step = np.linalg.solve(JTJ + 1e-12 * np.eye(len(betas)), J.T @ r)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if np.linalg.norm(step) < 1e-12:
            break
    return betas


def _beta_candidates(diffs: np.ndarray, rho: np.ndarray, kdim: int) -> list[np.ndarray]:
    """Closed-form beta initializations for kernel dimensions 1..3."""
    cands = []

    # case 1: x = b1 * v1
    n1 = np.einsum("pc,pc->p", diffs[0], diffs[0])
    denom = float(n1.sum())
    if denom > 0:
        b1 = float(np.sqrt(rho).dot(np.sqrt(n1))) / denom
        c = np.zeros(kdim)
        c[0] = b1
        cands.append(c)

    if kdim >= 2:
        # case 2: unknowns b11, b12, b22
        L = np.stack(
            [
                np.einsum("pc,pc->p", diffs[0], diffs[0]),
                2.0 * np.einsum("pc,pc->p", diffs[0], diffs[1]),
                np.einsum("pc,pc->p", diffs[1], diffs[1]),
            ],
            axis=1,
        )
        sol, *_ = np.linalg.lstsq(L, rho, rcond=None)
        b11, b12, b22 = sol
        beta1 = math.sqrt(abs(b11))
        beta2 = math.sqrt(abs(b22)) if b11 * b22 >= 0 else 0.0
        if b12 < 0:
            beta2 = -beta2
        c = np.zeros(kdim)
        c[0], c[1] = beta1, beta2
        cands.append(c)

    if kdim >= 3 and len(rho) >= 6:
        # case 3: unknowns b11, b12, b22, b13, b23, b33
        L = np.stack(
            [
                np.einsum("pc,pc->p", diffs[0], diffs[0]),
                2.0 * np.einsum("pc,pc->p", diffs[0], diffs[1]),
                np.einsum("pc,pc->p", diffs[1], diffs[1]),
                2.0 * np.einsum("pc,pc->p", diffs[0], diffs[2]),
                2.0 * np.einsum("pc,pc->p", diffs[1], diffs[2]),
                np.einsum("pc,pc->p", diffs[2], diffs[2]),
            ],
            axis=1,
        )
        sol, *_ = np.linalg.lstsq(L, rho, rcond=None)
        b11, b12, b22, b13, b23, b33 = sol
        beta1 = math.sqrt(abs(b11))
        beta2 = math.sqrt(abs(b22)) if b11 * b22 >= 0 else 0.0
        if b12 < 0:
            beta2 = -beta2
        beta3 = math.sqrt(abs(b33)) if b11 * b33 >= 0 else 0.0
        if b13 < 0:
            beta3 = -beta3
        c = np.zeros(kdim)
        c[0], c[1], c[2] = beta1, beta2, beta3
        cands.append(c)

    return cands


def epnp(world: np.ndarray, pix: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """EPnP pose estimate (R, t) from >=4 correspondences.

    Follows the standard recipe: express points in a control-point basis,
    find the camera-frame control points in the null space of the
    projection constraints, resolve the null-space combination from
    inter-control-point distances (Gauss-Newton refined), then a rigid
    Procrustes fit. Several null-space dimensionalities are tried; the one
    with the lowest reprojection error wins.
    """
    world = np.asarray(world, dtype=np.float64)
    pix = np.asarray(pix, dtype=np.float64)
    n = len(world)
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n}")
    cw, planar = _control_points(world)
    m = len(cw)
    alphas = _barycentric(world, cw)
    M = _build_M(alphas, pix, K)
    # kernel of M via the 3m x 3m normal matrix (M may have fewer than 3m rows)
    _, evecs = np.linalg.eigh(M.T @ M)
    kdim = min(4, 3 * m - 1) if not planar else 3
    kernel = evecs[:, :kdim].T  # kernel[0] has the smallest eigenvalue

    pairs, diffs = _kernel_diffs(kernel, m)
    rho = np.array([np.sum((cw[i] - cw[j]) ** 2) for i, j in pairs])

    best = None
    for betas in _beta_candidates(diffs, rho, kdim):
        betas = _gauss_newton_betas(betas, diffs, rho)
        cc = np.einsum("k,kc->c", betas, kernel.reshape(kdim, -1)).reshape(m, 3)
        pc = alphas @ cc
        if np.sum(pc[:, 2] < 0) > n / 2:
            pc = -pc
        R, t = _procrustes(world, pc)
        err = _reprojection_errors(R, t, world, pix, K)
        score = float(np.mean(err)) if np.all(np.isfinite(err)) else np.inf
        if best is None or score < best[0]:
            best = (score, R, t)
    if best is None or not np.isfinite(best[0]):
        raise DegenerateConfiguration("EPnP produced no usable pose")
    return best[1], best[2]


def refine_lm(
    R0: np.ndarray,
    t0: np.ndarray,
    world: np.ndarray,
    pix: np.ndarray,
    K: CameraIntrinsics,
    max_iters: int = _LM_MAX_ITERS,
    lambda0: float = _LM_LAMBDA0,
    step_tol: float = _LM_STEP_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Levenberg-Marquardt polish of the reprojection objective.

    Damped normal equations with lambda starting at 1e-3, divided by 10 on
    accepted steps and multiplied by 10 on rejected ones; rotation updates
    are left-multiplied axis-angle increments. The objective never
    increases (rejected steps are discarded).
    """
    R = np.asarray(R0, dtype=np.float64).copy()
    t = np.asarray(t0, dtype=np.float64).copy()

    def cost(Rc, tc) -> float:
        pc = world @ Rc.T + tc
        if np.any(pc[:, 2] <= 1e-12):
            return np.inf
        u = K.fx * pc[:, 0] / pc[:, 2] + K.cx
        v = K.fy * pc[:, 1] / pc[:, 2] + K.cy
        return float(np.sum((u - pix[:, 0]) ** 2 + (v - pix[:, 1]) ** 2))

    lam = lambda0
    current = cost(R, t)
    if not np.isfinite(current):
        return R, t
    for _ in range(max_iters):
        pc = world @ R.T + t
        z = pc[:, 2]
        u = K.fx * pc[:, 0] / z + K.cx
        v = K.fy * pc[:, 1] / z + K.cy
        r = np.concatenate([pix[:, 0] - u, pix[:, 1] - v])

        n = len(world)
        # d(proj)/d(camera point)
        du_dp = np.zeros((n, 3))
        du_dp[:, 0] = K.fx / z
        du_dp[:, 2] = -K.fx * pc[:, 0] / z**2
        dv_dp = np.zeros((n, 3))
        dv_dp[:, 1] = K.fy / z
        dv_dp[:, 2] = -K.fy * pc[:, 1] / z**2
        # d(camera point)/d(rotation increment) = -[p]x ; d/dt = I
        dp_dw = np.zeros((n, 3, 3))
        dp_dw[:, 0, 1] = pc[:, 2]
        dp_dw[:, 0, 2] = -pc[:, 1]
        dp_dw[:, 1, 0] = -pc[:, 2]
        dp_dw[:, 1, 2] = pc[:, 0]
        dp_dw[:, 2, 0] = pc[:, 1]
        dp_dw[:, 2, 1] = -pc[:, 0]
        J = np.zeros((2 * n, 6))
        J[:n, :3] = np.einsum("nc,ncw->nw", du_dp, dp_dw)
        J[:n, 3:] = du_dp
        J[n:, :3] = np.einsum("nc,ncw->nw", dv_dp, dp_dw)
        J[n:, 3:] = dv_dp

        A = J.T @ J
        g = J.T @ r
        try:
            step = np.linalg.solve(A + lam * np.eye(6), g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        w = step[:3]
        angle = np.linalg.norm(w)
        dR = rotation_from_axis_angle(w, angle) if angle > 1e-18 else np.eye(3)
        R_new = dR @ R
        t_new = t + step[3:]
        new_cost = cost(R_new, t_new)
        if new_cost < current:
            R, t, current = R_new, t_new, new_cost
            lam = max(lam / 10.0, 1e-15)
        else:
            lam *= 10.0
        if np.linalg.norm(step) < step_tol:
            break
    # re-orthonormalize against accumulated drift
    U, _, Vt = np.linalg.svd(R)
    R = U @ np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))]) @ Vt
    return R, t


def solve_pnp_arrays(
    world: np.ndarray,
    pix: np.ndarray,
    K: CameraIntrinsics,
    threshold_px: float = DEFAULT_RANSAC_THRESHOLD_PX,
    max_iters: int = DEFAULT_RANSAC_ITERS,
    seed: int = DEFAULT_RANSAC_SEED,
    confidence: float = DEFAULT_RANSAC_CONFIDENCE,
) -> PnPResult:
    """RANSAC + LM pose estimation on raw (N,3)/(N,2) arrays.

    Hypotheses come from minimal 4-point EPnP solves; the best hypothesis
    is chosen by (inlier count, lower mean inlier error, lower hypothesis
    index) and polished with EPnP + LM over its inliers. Deterministic for
    a fixed seed.
    """
    world = np.asarray(world, dtype=np.float64)
    pix = np.asarray(pix, dtype=np.float64)
    n = len(world)
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n}")
    if n == 4:
        # minimal problem: no consensus loop possible, solve directly
        R, t = epnp(world, pix, K)
        R, t = refine_lm(R, t, world, pix, K)
        err = _reprojection_errors(R, t, world, pix, K)
        inliers = np.nonzero(err < threshold_px)[0]
        if len(inliers) < 4:
            raise NoConsensus("minimal solve does not fit its own points")
        return PnPResult(
            RigidTransform(R, t), inliers.tolist(), float(err[inliers].mean())
        )

    # guard against globally degenerate input before sampling
    _control_points(world)

    rng = np.random.default_rng(seed)
    best_count = -1
    best_err = np.inf
    best_inliers: np.ndarray | None = None
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        sample = rng.choice(n, size=4, replace=False)
        it += 1
        try:
            R, t = epnp(world[sample], pix[sample], K)
        except DegenerateConfiguration:
            continue
        err = _reprojection_errors(R, t, world, pix, K)
        inliers = err < threshold_px
        count = int(inliers.sum())
        if count < 4:
            continue
        mean_err = float(err[inliers].mean())
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count = count
            best_err = mean_err
            best_inliers = np.nonzero(inliers)[0]
            w = count / n
            if w >= 1.0:
                break
            denom = math.log(max(1.0 - w**4, 1e-16))
            needed = min(max_iters, math.ceil(math.log(1.0 - confidence) / denom))
    if best_inliers is None or best_count < 4:
        raise NoConsensus("no hypothesis reached 4 inliers")

    wi = world[best_inliers]
    pi = pix[best_inliers]
    try:
        R, t = epnp(wi, pi, K)
    except DegenerateConfiguration:
        # inlier set may be near-collinear even when a 4-sample was not
        raise NoConsensus("consensus set is degenerate")
    R, t = refine_lm(R, t, wi, pi, K)
    err = _reprojection_errors(R, t, world, pix, K)
    final_inliers = np.nonzero(err < threshold_px)[0]
    if len(final_inliers) < 4:
        final_inliers = best_inliers
    return PnPResult(
        RigidTransform(R, t),
        final_inliers.tolist(),
        float(err[final_inliers].mean()),
    )
