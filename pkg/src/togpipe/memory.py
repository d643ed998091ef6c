"""Memory of grasp experiences built from pre-extracted demonstration records.

A record arrives with hand-object contact pixels at the contact frame and
the wrist trajectory over the preceding frames; the grasp position is the
mean of the contact pixels and the approach direction is a principal-
component line fit through the wrist positions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AlreadyAugmented,
    DegenerateTrajectory,
    EmptyInput,
    SchemaVersionMismatch,
)
from .features import EmbeddingVector
from .geometry import CameraIntrinsics, Pixel, Point3, UnitVector3, load_intrinsics

STORE_SCHEMA_VERSION = 1

AUGMENTATIONS = ("original", "hflip", "vflip")


@dataclass
class DemonstrationRecord:
    image_ref: str
    contact_points: list[Pixel]
    contact_frame_index: int
    wrist_trajectory: list[Point3]
    task_text: str
    intrinsics: CameraIntrinsics
    intrinsics_ref: str = ""

    def __post_init__(self):
        if not self.contact_points:
            raise EmptyInput("record has no contact points")
        if len(self.wrist_trajectory) < 2:
            raise ValueError("wrist trajectory needs at least 2 points")


@dataclass
class MemoryInstance:
    instance_id: str
    image_ref: str
    tog_position: Pixel
    tog_direction: UnitVector3
    task_text: str
    image_embedding_ref: str
    text_embedding_ref: str
    feature_map_ref: str
    intrinsics: CameraIntrinsics
    intrinsics_ref: str = ""
    augmentation: str = "original"
    image_embedding: EmbeddingVector | None = None
    text_embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        K = self.intrinsics
        p = self.tog_position
        if not (0 <= p.u < K.width and 0 <= p.v < K.height):
            raise ValueError(f"grasp pixel {p} outside {K.width}x{K.height} image")


@dataclass
class MemoryStore:
    instances: list[MemoryInstance] = field(default_factory=list)
    index_path: str = ""

    def __post_init__(self):
        ids = [i.instance_id for i in self.instances]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate instance ids in store")

    def add(self, inst: MemoryInstance) -> None:
        if any(i.instance_id == inst.instance_id for i in self.instances):
            raise ValueError(f"duplicate instance id {inst.instance_id}")
        self.instances.append(inst)

    def get(self, instance_id: str) -> MemoryInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)

    def __len__(self) -> int:
        return len(self.instances)


def fit_contact_mean(points: list[Pixel]) -> Pixel:
    """Component-wise mean of the contact pixels (the Gaussian-fit center)."""
    if not points:
        raise EmptyInput("no contact points")
    arr = np.array([[p.u, p.v] for p in points], dtype=np.float64)
    m = arr.mean(axis=0)
    return Pixel(float(m[0]), float(m[1]))


def contact_covariance(points: list[Pixel]) -> np.ndarray:
    """2×2 covariance of the contact pixels; diagnostic only."""
    if not points:
        raise EmptyInput("no contact points")
    arr = np.array([[p.u, p.v] for p in points], dtype=np.float64)
    if len(points) == 1:
        return np.zeros((2, 2))
    return np.cov(arr.T)


def estimate_approach_direction(traj: list[Point3]) -> UnitVector3:
    """Direction of hand approach from the wrist trajectory.

    First principal component of the mean-centered positions, with the sign
    chosen so it points from the first toward the last position. A line fit
    is robust to per-frame reconstruction jitter.
    """
    if len(traj) < 2:
        raise EmptyInput("trajectory needs at least 2 points")
    pts = np.array([p.to_array() for p in traj], dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    if np.max(np.linalg.norm(centered, axis=1)) < 1e-6:
        raise DegenerateTrajectory("all wrist positions coincide")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    disp = pts[-1] - pts[0]
    if np.dot(d, disp) < 0:
        d = -d
    return UnitVector3.from_array(d)


def _flip_ref(ref: str, tag: str) -> str:
    """foo.rtaf -> foo.hflip.rtaf (pre-flipped files supplied by the exporter)."""
    if not ref:
        return ref
    p = Path(ref)
    return str(p.with_name(p.stem + f".{tag}" + p.suffix))


def augment_flips(inst: MemoryInstance) -> list[MemoryInstance]:
    """Horizontal- and vertical-flip copies of an original instance.

    The flips mirror the grasp pixel, direction, and principal point;
    feature maps and embeddings are referenced from pre-flipped files.
    """
    if inst.augmentation != "original":
        raise AlreadyAugmented(f"{inst.instance_id} is already {inst.augmentation}")
    K = inst.intrinsics
    p = inst.tog_position
    v = inst.tog_direction

    hflip = replace(
        inst,
        instance_id=inst.instance_id + "_hflip",
        tog_position=Pixel(K.width - 1 - p.u, p.v),
        tog_direction=UnitVector3(-v.x, v.y, v.z),
        intrinsics=replace(K, cx=K.width - 1 - K.cx),
        intrinsics_ref=_flip_ref(inst.intrinsics_ref, "hflip"),
        image_ref=_flip_ref(inst.image_ref, "hflip"),
        feature_map_ref=_flip_ref(inst.feature_map_ref, "hflip"),
        image_embedding_ref=_flip_ref(inst.image_embedding_ref, "hflip"),
        text_embedding_ref=inst.text_embedding_ref,
        augmentation="hflip",
    )
    vflip = replace(
        inst,
        instance_id=inst.instance_id + "_vflip",
        tog_position=Pixel(p.u, K.height - 1 - p.v),
        tog_direction=UnitVector3(v.x, -v.y, v.z),
        intrinsics=replace(K, cy=K.height - 1 - K.cy),
        intrinsics_ref=_flip_ref(inst.intrinsics_ref, "vflip"),
        image_ref=_flip_ref(inst.image_ref, "vflip"),
        feature_map_ref=_flip_ref(inst.feature_map_ref, "vflip"),
        image_embedding_ref=_flip_ref(inst.image_embedding_ref, "vflip"),
        text_embedding_ref=inst.text_embedding_ref,
        augmentation="vflip",
    )
    return [hflip, vflip]


def build_instance(
    rec: DemonstrationRecord,
    instance_id: str,
    image_embedding_ref: str,
    text_embedding_ref: str,
    feature_map_ref: str,
) -> MemoryInstance:
    return MemoryInstance(
        instance_id=instance_id,
        image_ref=rec.image_ref,
        tog_position=fit_contact_mean(rec.contact_points),
        tog_direction=estimate_approach_direction(rec.wrist_trajectory),
        task_text=rec.task_text,
        image_embedding_ref=image_embedding_ref,
        text_embedding_ref=text_embedding_ref,
        feature_map_ref=feature_map_ref,
        intrinsics=rec.intrinsics,
        intrinsics_ref=rec.intrinsics_ref,
    )


def load_record(path) -> DemonstrationRecord:
    """Parse a demonstration record JSON file.

    Schema: {image_ref, contact_points:[[u,v]...], contact_frame_index,
    wrist_trajectory:[[x,y,z]...], task_text, intrinsics_ref}. The
    intrinsics ref is resolved relative to the record file.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    intr_ref = doc["intrinsics_ref"]
    intr_path = Path(intr_ref)
    if not intr_path.is_absolute():
        intr_path = path.parent / intr_path
    return DemonstrationRecord(
        image_ref=doc["image_ref"],
        contact_points=[Pixel(float(u), float(v)) for u, v in doc["contact_points"]],
        contact_frame_index=int(doc["contact_frame_index"]),
        wrist_trajectory=[
            Point3(float(x), float(y), float(z)) for x, y, z in doc["wrist_trajectory"]
        ],
        task_text=doc["task_text"],
        intrinsics=load_intrinsics(intr_path),
        intrinsics_ref=str(intr_ref),
    )


def _instance_to_json(inst: MemoryInstance) -> dict:
    return {
        "id": inst.instance_id,
        "image_ref": inst.image_ref,
        "p_A": [inst.tog_position.u, inst.tog_position.v],
        "v_A": [inst.tog_direction.x, inst.tog_direction.y, inst.tog_direction.z],
        "task_text": inst.task_text,
        "image_embedding_ref": inst.image_embedding_ref,
        "text_embedding_ref": inst.text_embedding_ref,
        "feature_map_ref": inst.feature_map_ref,
        "intrinsics_ref": inst.intrinsics_ref,
        "intrinsics": {
            "fx": inst.intrinsics.fx,
            "fy": inst.intrinsics.fy,
            "cx": inst.intrinsics.cx,
            "cy": inst.intrinsics.cy,
            "width": inst.intrinsics.width,
            "height": inst.intrinsics.height,
        },
        "augmentation": inst.augmentation,
    }


def _instance_from_json(doc: dict) -> MemoryInstance:
    intr = doc["intrinsics"]
    return MemoryInstance(
        instance_id=doc["id"],
        image_ref=doc["image_ref"],
        tog_position=Pixel(float(doc["p_A"][0]), float(doc["p_A"][1])),
        tog_direction=UnitVector3.from_array(doc["v_A"]),
        task_text=doc["task_text"],
        image_embedding_ref=doc["image_embedding_ref"],
        text_embedding_ref=doc["text_embedding_ref"],
        feature_map_ref=doc["feature_map_ref"],
        intrinsics=CameraIntrinsics(
            fx=float(intr["fx"]),
            fy=float(intr["fy"]),
            cx=float(intr["cx"]),
            cy=float(intr["cy"]),
            width=int(intr["width"]),
            height=int(intr["height"]),
        ),
        intrinsics_ref=doc.get("intrinsics_ref", ""),
        augmentation=doc["augmentation"],
    )


def save_store(store: MemoryStore, path) -> None:
    doc = {
        "schema_version": STORE_SCHEMA_VERSION,
        "instances": [_instance_to_json(i) for i in store.instances],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_store(path) -> MemoryStore:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise IOError(f"cannot read store index {path}: {e}") from e
    version = doc.get("schema_version")
    if version != STORE_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"store schema version {version}, expected {STORE_SCHEMA_VERSION}"
        )
    return MemoryStore(
        instances=[_instance_from_json(d) for d in doc["instances"]],
        index_path=str(path),
    )
