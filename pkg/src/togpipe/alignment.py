"""Task-compatibility scoring of grasp candidates against transferred constraints.

A candidate scores cos(v_B, o_z) + exp(-||t - p_B||^2 / (2 sigma^2)),
fused with the sampler's stability score as w_task * S_task + w_geo * S_geo.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoCandidates
from .geometry import Point3
from .transfer import TOGConstraint3D

DEFAULT_SIGMA = 0.1
DEFAULT_W_TASK = 0.95
DEFAULT_W_GEO = 0.05


@dataclass
class GraspCandidate:
    """6-DOF gripper pose; the third rotation column o_z is the approach axis."""

    rotation: np.ndarray  # (3,3) orthonormal
    translation: Point3
    stability: float

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise ValueError("candidate rotation not orthonormal")
        self.rotation = R
        if not (0.0 <= self.stability <= 1.0):
            raise ValueError("stability must lie in [0, 1]")

    @property
    def approach_axis(self) -> np.ndarray:
        return self.rotation[:, 2]


@dataclass(frozen=True)
class ScoringParams:
    sigma: float = DEFAULT_SIGMA
    w_task: float = DEFAULT_W_TASK
    w_geo: float = DEFAULT_W_GEO

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if abs(self.w_task + self.w_geo - 1.0) > 1e-9:
            raise ValueError("fusion weights must sum to 1")


def score_task(c: GraspCandidate, k: TOGConstraint3D, p: ScoringParams) -> float:
    v = k.direction.to_array()
    oz = c.approach_axis
    cos = float(np.dot(v, oz) / (np.linalg.norm(v) * np.linalg.norm(oz)))
    d2 = float(np.sum((c.translation.to_array() - k.position.to_array()) ** 2))
    return cos + math.exp(-d2 / (2.0 * p.sigma**2))


def score_final(c: GraspCandidate, k: TOGConstraint3D, p: ScoringParams) -> float:
    return p.w_task * score_task(c, k, p) + p.w_geo * c.stability


def select_grasp(
    cands: list[GraspCandidate], k: TOGConstraint3D, p: ScoringParams
) -> tuple[GraspCandidate, float, int]:
    """Highest-scoring candidate; ties break by lowest list index.

    Returns (candidate, final score, index).
    """
    if not cands:
        raise NoCandidates("candidate list is empty")
    best_i = 0
    best_s = -math.inf
    for i, c in enumerate(cands):
        s = score_final(c, k, p)
        if s > best_s:
            best_s = s
            best_i = i
    return cands[best_i], best_s, best_i


def load_candidates(path) -> list[GraspCandidate]:
    """Read a JSON list of {R:[9 row-major], t:[3], score}.

    Sampler scores outside [0,1] are clamped at ingestion.
    """
    doc = json.loads(Path(path).read_text())
    cands = []
    for entry in doc:
        cands.append(
            GraspCandidate(
                rotation=np.array(entry["R"], dtype=np.float64).reshape(3, 3),
                translation=Point3(*[float(x) for x in entry["t"]]),
                stability=float(min(1.0, max(0.0, entry["score"]))),
            )
        )
    return cands


def save_candidates(cands: list[GraspCandidate], path) -> None:
    doc = [
        {
            "R": c.rotation.reshape(-1).tolist(),
            "t": c.translation.to_array().tolist(),
            "score": c.stability,
        }
        for c in cands
    ]
    Path(path).write_text(json.dumps(doc, indent=2))


def selection_to_json(
    c: GraspCandidate, index: int, k: TOGConstraint3D, p: ScoringParams
) -> dict:
    s_task = score_task(c, k, p)
    return {
        "index": index,
        "R": c.rotation.reshape(-1).tolist(),
        "t": c.translation.to_array().tolist(),
        "S_task": s_task,
        "S_geo": c.stability,
        "S": p.w_task * s_task + p.w_geo * c.stability,
    }
