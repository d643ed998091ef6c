"""Ground-truth synthetic scenes for desk-scale verification.

Two generators:

* :func:`generate_pnp_problem` builds raw 2D-3D correspondences through a
  fully general planted pose (noise and outliers optional) for exercising
  the pose solver on its own.
* :func:`generate_scene` emits a complete on-disk scene (memory store,
  target inputs, grasp candidates, ground truth) in exactly the file
  formats the real pipeline consumes. Grid scenes plant poses from the
  quantization-free family (optical-axis rotations in 90-degree
  multiples, zero translation) so that feature-grid pixel coordinates stay
  exactly consistent with the planted geometry; noise and outliers then
  perturb on top of that exact base.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .features import (
    EmbeddingVector,
    FeatureMap,
    write_embedding,
    write_feature_map,
)
from .geometry import (
    CameraIntrinsics,
    Pixel,
    Point3,
    UnitVector3,
    backproject,
    project_array,
    rotation_from_axis_angle,
    rotation_geodesic_error,
    save_intrinsics,
)
from .memory import MemoryInstance, MemoryStore, save_store
from .transfer import DepthMap, write_depth_map
from .alignment import GraspCandidate, save_candidates

_MIN_FEATURE_ANGLE_DEG = 15.0

# exact 90-degree optical-axis rotations (no trig roundoff)
_RZ_QUARTER = [
    np.eye(3),
    np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
    np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]),
    np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
]


@dataclass(frozen=True)
class SceneSpec:
    n_points: int = 50
    noise_px: float = 0.0
    outlier_fraction: float = 0.0
    pose_magnitude: float = math.pi
    feature_dim: int = 12
    grid_size: int = 64
    n_distractors: int = 2

    def __post_init__(self):
        if self.n_points < 8:
            raise InvalidSpec("n_points must be >= 8")
        if self.noise_px < 0 or self.outlier_fraction < 0 or self.pose_magnitude < 0:
            raise InvalidSpec("noise, outlier fraction and pose magnitude must be >= 0")
        if self.outlier_fraction > 1:
            raise InvalidSpec("outlier_fraction must be <= 1")
        if self.feature_dim < 2:
            raise InvalidSpec("feature_dim must be >= 2")
        slots = len(range(3, self.grid_size - 3, 6)) ** 2
        if self.n_points + 1 > slots:
            raise InvalidSpec(
                f"n_points {self.n_points} exceeds {slots - 1} grid slots"
            )


@dataclass
class SyntheticScene:
    root: Path
    seed: int
    spec: SceneSpec
    memory_index: Path
    query_manifest: Path
    ground_truth: dict


def _distinct_unit_features(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Random unit features with a minimum pairwise angle (rejection sampling)."""
    min_cos = math.cos(math.radians(_MIN_FEATURE_ANGLE_DEG))
    feats: list[np.ndarray] = []
    while len(feats) < count:
        f = rng.normal(size=dim)
        f /= np.linalg.norm(f)
        if all(abs(np.dot(f, g)) < min_cos for g in feats):
            feats.append(f)
    return np.array(feats, dtype=np.float64)


def _random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle) if max_angle > 0 else 0.0
    return rotation_from_axis_angle(axis, angle)


def _basis_with_z(z: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal basis whose third column is z."""
    z = z / np.linalg.norm(z)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, z)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def generate_pnp_problem(
    seed: int,
    n_points: int = 50,
    noise_px: float = 0.0,
    outlier_fraction: float = 0.0,
    pose_magnitude: float = math.pi / 3,
    K: CameraIntrinsics | None = None,
) -> dict:
    """2D-3D correspondences through a general planted pose.

    Pixels are exact projections of the planted geometry plus optional
    Gaussian noise; outlier pixels are replaced by uniform random image
    positions. Returns world points (target frame), observed pixels,
    intrinsics, the planted pose, and the mean camera-frame depth.
    """
    if K is None:
        K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    rng = np.random.default_rng(seed)
    R = _random_rotation(rng, pose_magnitude)
    t = rng.uniform(-0.25, 0.25, size=3)

    # sample in the observing camera's frustum, then carry into the target frame
    pix_true = np.stack(
        [
            rng.uniform(20, K.width - 20, size=n_points),
            rng.uniform(20, K.height - 20, size=n_points),
        ],
        axis=1,
    )
    depths = rng.uniform(0.5, 1.5, size=n_points)
    cam = np.stack(
        [
            (pix_true[:, 0] - K.cx) * depths / K.fx,
            (pix_true[:, 1] - K.cy) * depths / K.fy,
            depths,
        ],
        axis=1,
    )
    world = (cam - t) @ R  # R^T (cam - t)

    pix = pix_true.copy()
    if noise_px > 0:
        pix += rng.normal(0.0, noise_px, size=pix.shape)
    n_out = int(round(outlier_fraction * n_points))
    if n_out > 0:
        out_idx = rng.choice(n_points, size=n_out, replace=False)
        pix[out_idx, 0] = rng.uniform(0, K.width - 1, size=n_out)
        pix[out_idx, 1] = rng.uniform(0, K.height - 1, size=n_out)
    return {
        "world": world,
        "pix": pix,
        "K": K,
        "R_gt": R,
        "t_gt": t,
        "mean_depth": float(depths.mean()),
        "outlier_indices": sorted(int(i) for i in (out_idx if n_out else [])),
    }


def _derangement(rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 1:
        return np.array([0])
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


def generate_scene(seed: int, spec: SceneSpec, out_dir) -> SyntheticScene:
    """Write a complete matched memory/target scene with known ground truth."""
    out = Path(out_dir)
    (out / "memory").mkdir(parents=True, exist_ok=True)
    (out / "target").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    g = spec.grid_size
    K = CameraIntrinsics(
        fx=float(2 * g), fy=float(2 * g), cx=g / 2.0, cy=g / 2.0, width=g, height=g
    )

    # planted pose: optical-axis quarter-turn (keeps integer pixels integer)
    feasible = [k for k in range(4) if k * math.pi / 2 <= spec.pose_magnitude + 1e-12]
    nontrivial = [k for k in feasible if k > 0]
    k_turn = int(rng.choice(nontrivial)) if nontrivial else 0
    R_gt = _RZ_QUARTER[k_turn]
    t_gt = np.zeros(3)

    # well-separated integer target pixels (disjoint 5x5 depth windows)
    lattice = [
        (u, v) for v in range(3, g - 3, 6) for u in range(3, g - 3, 6)
    ]
    order = rng.permutation(len(lattice))
    chosen = [lattice[i] for i in order[: spec.n_points + 1]]
    grasp_uv = chosen[-1]
    point_uv = chosen[:-1]

    depths = rng.uniform(0.5, 1.5, size=spec.n_points + 1)
    tgt_pix = np.array(chosen, dtype=np.float64)
    world = np.stack(
        [
            (tgt_pix[:, 0] - K.cx) * depths / K.fx,
            (tgt_pix[:, 1] - K.cy) * depths / K.fy,
            depths,
        ],
        axis=1,
    )
    src_pix = project_array(K, world @ R_gt.T + t_gt)
    src_int = np.rint(src_pix).astype(int)
    if np.max(np.abs(src_pix - src_int)) > 1e-9 or np.any(
        (src_int < 0) | (src_int >= g)
    ):
        raise InvalidSpec("planted pose broke grid exactness; adjust grid/pose spec")

    feats = _distinct_unit_features(rng, spec.n_points + 1, spec.feature_dim)
    v_A = UnitVector3.from_array(rng.normal(size=3))
    v_B = UnitVector3.from_array(R_gt.T @ v_A.to_array())
    p_A = Pixel(float(src_int[-1, 0]), float(src_int[-1, 1]))
    p_B_px = Pixel(float(grasp_uv[0]), float(grasp_uv[1]))
    p_B_3d = backproject(K, p_B_px, float(depths[-1]))

    # optional corruption of the correspondence points (never the grasp point)
    src_place = src_int[:-1].copy()
    tgt_place = np.array(point_uv, dtype=int)
    if spec.noise_px > 0:
        jitter = np.rint(
            rng.normal(0.0, spec.noise_px, size=src_place.shape)
        ).astype(int)
        src_place = np.clip(src_place + jitter, 0, g - 1)
    n_out = int(round(spec.outlier_fraction * spec.n_points))
    if n_out > 0:
        out_idx = rng.choice(spec.n_points, size=n_out, replace=False)
        perm = _derangement(rng, n_out)
        tgt_place[out_idx] = tgt_place[out_idx[perm]]

    # memory-side feature map
    src_data = np.zeros((g, g, spec.feature_dim), dtype=np.float32)
    src_mask = np.zeros((g, g), dtype=bool)
    for i in range(spec.n_points):
        u, v = src_place[i]
        src_data[v, u] = feats[i]
        src_mask[v, u] = True
    gu, gv = src_int[-1]
    src_data[gv, gu] = feats[-1]
    src_mask[gv, gu] = True
    src_fm = FeatureMap(g, g, spec.feature_dim, src_data, src_mask)

    # target-side feature map and depth
    tgt_data = np.zeros((g, g, spec.feature_dim), dtype=np.float32)
    tgt_mask = np.zeros((g, g), dtype=bool)
    depth = np.zeros((g, g), dtype=np.float32)
    for i in range(spec.n_points):
        u, v = tgt_place[i]
        tgt_data[v, u] = feats[i]
        tgt_mask[v, u] = True
        depth[point_uv[i][1], point_uv[i][0]] = depths[i]
    tgt_data[grasp_uv[1], grasp_uv[0]] = feats[-1]
    tgt_mask[grasp_uv[1], grasp_uv[0]] = True
    depth[grasp_uv[1], grasp_uv[0]] = depths[-1]
    tgt_fm = FeatureMap(g, g, spec.feature_dim, tgt_data, tgt_mask)

    # embeddings: query copies the true instance's exactly
    emb_dim = 32
    img_emb = EmbeddingVector(rng.normal(size=emb_dim), "image")
    txt_emb = EmbeddingVector(rng.normal(size=emb_dim), "text")

    # write memory side
    mem = out / "memory"
    write_feature_map(src_fm, mem / "instance0.rtaf")
    write_embedding(img_emb, mem / "instance0.image.rtae")
    write_embedding(txt_emb, mem / "instance0.text.rtae")
    save_intrinsics(K, mem / "instance0.intrinsics.txt")
    task_text = f"synthetic task {seed}"
    instances = [
        MemoryInstance(
            instance_id="instance0",
            image_ref="instance0.png",
            tog_position=p_A,
            tog_direction=v_A,
            task_text=task_text,
            image_embedding_ref="instance0.image.rtae",
            text_embedding_ref="instance0.text.rtae",
            feature_map_ref="instance0.rtaf",
            intrinsics=K,
            intrinsics_ref="instance0.intrinsics.txt",
        )
    ]
    for d in range(spec.n_distractors):
        did = f"distractor{d}"
        dk = CameraIntrinsics(fx=16.0, fy=16.0, cx=4.0, cy=4.0, width=8, height=8)
        dfeat = rng.normal(size=(8, 8, spec.feature_dim)).astype(np.float32)
        dmask = np.ones((8, 8), dtype=bool)
        write_feature_map(FeatureMap(8, 8, spec.feature_dim, dfeat, dmask), mem / f"{did}.rtaf")
        write_embedding(EmbeddingVector(rng.normal(size=emb_dim), "image"), mem / f"{did}.image.rtae")
        write_embedding(EmbeddingVector(rng.normal(size=emb_dim), "text"), mem / f"{did}.text.rtae")
        save_intrinsics(dk, mem / f"{did}.intrinsics.txt")
        instances.append(
            MemoryInstance(
                instance_id=did,
                image_ref=f"{did}.png",
                tog_position=Pixel(4.0, 4.0),
                tog_direction=UnitVector3(0.0, 0.0, 1.0),
                task_text=f"distractor task {d}",
                image_embedding_ref=f"{did}.image.rtae",
                text_embedding_ref=f"{did}.text.rtae",
                feature_map_ref=f"{did}.rtaf",
                intrinsics=dk,
                intrinsics_ref=f"{did}.intrinsics.txt",
            )
        )
    index_path = mem / "index.json"
    save_store(MemoryStore(instances=instances), index_path)

    # write target side
    tgt = out / "target"
    write_feature_map(tgt_fm, tgt / "features.rtaf")
    write_depth_map(DepthMap(g, g, depth), tgt / "depth.rtad")
    save_intrinsics(K, tgt / "intrinsics.txt")
    write_embedding(img_emb, tgt / "query.image.rtae")
    write_embedding(txt_emb, tgt / "query.text.rtae")

    # grasp candidates: one planted optimum plus decoys
    planted = GraspCandidate(
        rotation=_basis_with_z(v_B.to_array()),
        translation=p_B_3d,
        stability=1.0,
    )
    candidates: list[GraspCandidate] = []
    n_decoys = 9
    planted_index = int(rng.integers(0, n_decoys + 1))
    for i in range(n_decoys + 1):
        if i == planted_index:
            candidates.append(planted)
            continue
        offset = rng.normal(size=3)
        offset = offset / np.linalg.norm(offset) * rng.uniform(0.3, 0.6)
        candidates.append(
            GraspCandidate(
                rotation=_random_rotation(rng, math.pi),
                translation=Point3.from_array(p_B_3d.to_array() + offset),
                stability=float(rng.uniform(0.0, 1.0)),
            )
        )
    cand_path = tgt / "candidates.json"
    save_candidates(candidates, cand_path)

    query_manifest = tgt / "query.json"
    query_manifest.write_text(
        json.dumps(
            {
                "image_embedding_ref": "query.image.rtae",
                "text_embedding_ref": "query.text.rtae",
                "target_feature_map_ref": "features.rtaf",
                "depth_ref": "depth.rtad",
                "intrinsics_ref": "intrinsics.txt",
                "candidates_ref": "candidates.json",
                "task_text": task_text,
                "target_image_ref": "target.png",
            },
            indent=2,
            sort_keys=True,
        )
    )

    ground_truth = {
        "seed": seed,
        "R_gt": R_gt.reshape(-1).tolist(),
        "t_gt": t_gt.tolist(),
        "p_A_px": [p_A.u, p_A.v],
        "p_B_px": [p_B_px.u, p_B_px.v],
        "p_B_3d": p_B_3d.to_array().tolist(),
        "v_A": v_A.to_array().tolist(),
        "v_B": v_B.to_array().tolist(),
        "best_candidate_index": planted_index,
        "expected_instance_id": "instance0",
    }
    (out / "ground_truth.json").write_text(
        json.dumps(ground_truth, indent=2, sort_keys=True)
    )
    return SyntheticScene(
        root=out,
        seed=seed,
        spec=spec,
        memory_index=index_path,
        query_manifest=query_manifest,
        ground_truth=ground_truth,
    )


def verify_scene(scene_dir, pipeline_output: dict) -> dict:
    """Compare a pipeline run against a scene's planted ground truth.

    Missing output fields are marked unevaluated rather than failing.
    """
    gt = json.loads((Path(scene_dir) / "ground_truth.json").read_text())
    report: dict = {"seed": gt["seed"], "unevaluated": []}

    pnp = pipeline_output.get("pnp")
    if pnp and "R" in pnp:
        R = np.array(pnp["R"], dtype=float).reshape(3, 3)
        t = np.array(pnp["t"], dtype=float)
        report["rotation_error_rad"] = rotation_geodesic_error(
            np.array(gt["R_gt"]).reshape(3, 3), R
        )
        report["translation_error_m"] = float(
            np.linalg.norm(t - np.array(gt["t_gt"]))
        )
    else:
        report["unevaluated"].append("pnp")

    if "p_B_px" in pipeline_output:
        report["p_B_px_error"] = float(
            np.linalg.norm(
                np.array(pipeline_output["p_B_px"], dtype=float)
                - np.array(gt["p_B_px"])
            )
        )
    else:
        report["unevaluated"].append("p_B_px")

    if "p_B" in pipeline_output:
        report["p_B_3d_error_m"] = float(
            np.linalg.norm(
                np.array(pipeline_output["p_B"], dtype=float) - np.array(gt["p_B_3d"])
            )
        )
    else:
        report["unevaluated"].append("p_B")

    if "v_B" in pipeline_output:
        v = np.array(pipeline_output["v_B"], dtype=float)
        v = v / np.linalg.norm(v)
        cosang = np.clip(np.dot(v, np.array(gt["v_B"])), -1.0, 1.0)
        report["direction_error_rad"] = float(np.arccos(cosang))
    else:
        report["unevaluated"].append("v_B")

    if "selected_index" in pipeline_output:
        report["selected_candidate_correct"] = (
            int(pipeline_output["selected_index"]) == gt["best_candidate_index"]
        )
    else:
        report["unevaluated"].append("selected_index")
    return report
