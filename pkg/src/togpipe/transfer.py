"""Transfer of grasp constraints onto the target object.

The 2D grasp point moves via dense-feature matching with soft-argmax
subpixel refinement; the 3D direction moves via mutual nearest-neighbour
(best-buddies) matching, depth lifting, and a PnP solve for the relative
pose between the memory camera frame and the target camera frame.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyMask,
    LowConfidenceMatch,
    MissingDepthAtGraspPoint,
    TooFewLifted,
    TruncatedFile,
)
from .features import FeatureMap, sample_feature
from .geometry import (
    CameraIntrinsics,
    Pixel,
    Point3,
    UnitVector3,
    backproject,
    rotate_direction_inverse,
)
from .memory import MemoryInstance
from .pnp import PnPResult, solve_pnp_arrays

DEPTH_MAGIC = b"RTAD"

DEFAULT_MATCH_CONFIDENCE_MIN = 0.3
DEFAULT_SOFTARGMAX_TAU = 0.05
DEFAULT_DEPTH_WINDOW = 5


@dataclass(frozen=True)
class Correspondence2D2D:
    source_px: Pixel
    target_px: Pixel
    similarity: float


@dataclass(frozen=True)
class Correspondence2D3D:
    source_px: Pixel
    target_point: Point3

    def __post_init__(self):
        if self.target_point.z <= 0:
            raise ValueError("lifted point must have positive depth")


@dataclass
class DepthMap:
    height: int
    width: int
    depth: np.ndarray  # (H, W) float32 meters; 0 = missing

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32).reshape(
            self.height, self.width
        )
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depth values must be finite and >= 0")


@dataclass
class TOGConstraint3D:
    position: Point3
    direction: UnitVector3
    position_px: Pixel
    pnp: PnPResult | None = None

    def __post_init__(self):
        if self.position.z <= 0:
            raise ValueError("constraint position must have positive depth")


def write_depth_map(dm: DepthMap, path) -> None:
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", dm.height, dm.width))
        f.write(np.ascontiguousarray(dm.depth, dtype="<f4").tobytes())


def load_depth_map(path) -> DepthMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DEPTH_MAGIC:
            raise BadMagic(f"{path}: expected {DEPTH_MAGIC!r}, got {magic!r}")
        header = f.read(8)
        if len(header) != 8:
            raise TruncatedFile(f"{path}: truncated header")
        h, w = struct.unpack("<II", header)
        if h == 0 or w == 0:
            raise DimensionMismatch(f"{path}: zero dimension")
        raw = f.read(h * w * 4)
        if len(raw) != h * w * 4:
            raise TruncatedFile(f"{path}: truncated depth tensor")
        depth = np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()
    return DepthMap(h, w, depth)


def transfer_point(
    src_fm: FeatureMap,
    p_A: Pixel,
    tgt_fm: FeatureMap,
    tau: float = DEFAULT_SOFTARGMAX_TAU,
    min_confidence: float = DEFAULT_MATCH_CONFIDENCE_MIN,
) -> tuple[Pixel, float]:
    """Best match of the source grasp pixel inside the target mask.

    Hard argmax over masked target pixels, then soft-argmax over the
    masked pixels of the 3x3 neighbourhood (softmax temperature ``tau``)
    for subpixel position. Returns (target image pixel, peak cosine).
    """
    idx = tgt_fm.masked_indices()
    if len(idx) == 0:
        raise EmptyMask("target feature map has no masked pixels")
    query = sample_feature(src_fm, p_A).astype(np.float64)
    feats = tgt_fm.masked_features().astype(np.float64)
    sims = feats @ query
    best = int(np.argmax(sims))
    peak = float(sims[best])
    if peak < min_confidence:
        raise LowConfidenceMatch(
            f"peak cosine {peak:.3f} below threshold {min_confidence}"
        )
    bv, bu = int(idx[best, 0]), int(idx[best, 1])

    # soft-argmax over the masked 3x3 neighbourhood of the peak
    neigh = []
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            v, u = bv + dv, bu + du
            if 0 <= v < tgt_fm.height and 0 <= u < tgt_fm.width:
                if tgt_fm.mask is None or tgt_fm.mask[v, u]:
                    s = float(tgt_fm.data[v, u].astype(np.float64) @ query)
                    neigh.append((u, v, s))
    weights = np.array([np.exp((s - peak) / tau) for _, _, s in neigh])
    us = np.array([u for u, _, _ in neigh], dtype=np.float64)
    vs = np.array([v for _, v, _ in neigh], dtype=np.float64)
    wsum = weights.sum()
    gu = float((weights * us).sum() / wsum)
    gv = float((weights * vs).sum() / wsum)
    return tgt_fm.to_image(gu, gv), peak


def match_bbnn(src_fm: FeatureMap, tgt_fm: FeatureMap) -> list[Correspondence2D2D]:
    """Mutual nearest-neighbour (best buddies) pairs between two masked maps.

    A pair survives only if each pixel is the other's cosine nearest
    neighbour; pairs are returned sorted by descending similarity. Pixel
    coordinates are reported in image space.
    """
    sidx = src_fm.masked_indices()
    tidx = tgt_fm.masked_indices()
    if len(sidx) == 0 or len(tidx) == 0:
        raise EmptyMask("both feature maps need non-empty masks")
    fs = src_fm.masked_features().astype(np.float64)
    ft = tgt_fm.masked_features().astype(np.float64)
    sims = fs @ ft.T
    nn_t = np.argmax(sims, axis=1)  # per source pixel
    nn_s = np.argmax(sims, axis=0)  # per target pixel
    mutual = np.nonzero(nn_s[nn_t] == np.arange(len(sidx)))[0]
    pairs = []
    for i in mutual:
        j = nn_t[i]
        pairs.append(
            Correspondence2D2D(
                source_px=src_fm.to_image(float(sidx[i, 1]), float(sidx[i, 0])),
                target_px=tgt_fm.to_image(float(tidx[j, 1]), float(tidx[j, 0])),
                similarity=float(sims[i, j]),
            )
        )
    pairs.sort(key=lambda c: -c.similarity)
    return pairs


def _window_median_depth(
    depth: DepthMap, px: Pixel, window: int = DEFAULT_DEPTH_WINDOW
) -> float | None:
    """Median of valid depths in the window around the pixel; None if empty."""
    half = window // 2
    cu = int(round(px.u))
    cv = int(round(px.v))
    v0 = max(0, cv - half)
    v1 = min(depth.height, cv + half + 1)
    u0 = max(0, cu - half)
    u1 = min(depth.width, cu + half + 1)
    if v0 >= v1 or u0 >= u1:
        return None
    patch = depth.depth[v0:v1, u0:u1]
    valid = patch[patch > 0]
    if valid.size == 0:
        return None
    return float(np.median(valid))


def lift_correspondences(
    m2d: list[Correspondence2D2D],
    depth: DepthMap,
    K_B: CameraIntrinsics,
    window: int = DEFAULT_DEPTH_WINDOW,
) -> list[Correspondence2D3D]:
    """Lift the target pixels to 3D using windowed median depth.

    Pairs whose window holds no valid depth are dropped; fewer than 4
    survivors is an error.
    """
    lifted = []
    for c in m2d:
        d = _window_median_depth(depth, c.target_px, window)
        if d is None:
            continue
        lifted.append(
            Correspondence2D3D(
                source_px=c.source_px,
                target_point=backproject(K_B, c.target_px, d),
            )
        )
    if len(lifted) < 4:
        raise TooFewLifted(f"only {len(lifted)} correspondences survived lifting")
    return lifted


def solve_pnp(
    m3d: list[Correspondence2D3D],
    K_A: CameraIntrinsics,
    threshold_px: float = 8.0,
    max_iters: int = 1000,
    seed: int = 0,
) -> PnPResult:
    """Relative pose (target camera frame -> memory camera frame) from 2D-3D pairs."""
    world = np.array([c.target_point.to_array() for c in m3d])
    pix = np.array([c.source_px.to_array() for c in m3d])
    return solve_pnp_arrays(
        world, pix, K_A, threshold_px=threshold_px, max_iters=max_iters, seed=seed
    )


def transfer_direction(pnp: PnPResult, v_A: UnitVector3) -> UnitVector3:
    """Carry the memory-frame grasp direction into the target camera frame."""
    return rotate_direction_inverse(pnp.transform, v_A)


def transfer_constraints(
    instance: MemoryInstance,
    src_fm: FeatureMap,
    tgt_fm: FeatureMap,
    depth: DepthMap,
    K_B: CameraIntrinsics,
    tau: float = DEFAULT_SOFTARGMAX_TAU,
    min_confidence: float = DEFAULT_MATCH_CONFIDENCE_MIN,
    depth_window: int = DEFAULT_DEPTH_WINDOW,
    ransac_threshold_px: float = 8.0,
    ransac_iters: int = 1000,
    ransac_seed: int = 0,
) -> TOGConstraint3D:
    """Full constraint transfer: 2D point, lifted 3D position, 3D direction."""
    p_B_px, _conf = transfer_point(
        src_fm, instance.tog_position, tgt_fm, tau=tau, min_confidence=min_confidence
    )
    d = _window_median_depth(depth, p_B_px, depth_window)
    if d is None:
        raise MissingDepthAtGraspPoint(
            f"no valid depth around transferred pixel ({p_B_px.u:.1f},{p_B_px.v:.1f})"
        )
    p_B = backproject(K_B, p_B_px, d)

    m2d = match_bbnn(src_fm, tgt_fm)
    m3d = lift_correspondences(m2d, depth, K_B, window=depth_window)
    pnp = solve_pnp(
        m3d,
        instance.intrinsics,
        threshold_px=ransac_threshold_px,
        max_iters=ransac_iters,
        seed=ransac_seed,
    )
    v_B = transfer_direction(pnp, instance.tog_direction)
    return TOGConstraint3D(position=p_B, direction=v_B, position_px=p_B_px, pnp=pnp)


def constraint_to_json(c: TOGConstraint3D) -> dict:
    doc = {
        "p_B": [c.position.x, c.position.y, c.position.z],
        "v_B": [c.direction.x, c.direction.y, c.direction.z],
        "p_B_px": [c.position_px.u, c.position_px.v],
    }
    if c.pnp is not None:
        doc["pnp"] = {
            "R": c.pnp.transform.rotation.reshape(-1).tolist(),
            "t": c.pnp.transform.translation.tolist(),
            "inliers": len(c.pnp.inlier_indices),
            "mean_reproj_px": c.pnp.mean_reprojection_error,
        }
    return doc


def constraint_from_json(doc: dict) -> TOGConstraint3D:
    from .geometry import RigidTransform

    pnp = None
    if "pnp" in doc:
        pnp = PnPResult(
            transform=RigidTransform(
                np.array(doc["pnp"]["R"]).reshape(3, 3), np.array(doc["pnp"]["t"])
            ),
            inlier_indices=list(range(int(doc["pnp"]["inliers"]))),
            mean_reprojection_error=float(doc["pnp"]["mean_reproj_px"]),
        )
    return TOGConstraint3D(
        position=Point3(*[float(x) for x in doc["p_B"]]),
        direction=UnitVector3.from_array(doc["v_B"]),
        position_px=Pixel(float(doc["p_B_px"][0]), float(doc["p_B_px"][1])),
        pnp=pnp,
    )
