"""Pinhole camera model and rigid transforms.

Conventions: camera frame is x-right, y-down, z-forward; pixel u grows
rightward, v downward. All distances in meters, pixels in pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonPositiveDepth

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pixel:
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")

    def to_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError("point coordinates must be finite")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @staticmethod
    def from_array(a) -> "Point3":
        return Point3(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class UnitVector3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"direction not unit-norm (|v|={n})")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @staticmethod
    def from_array(a) -> "UnitVector3":
        a = np.asarray(a, dtype=float)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("cannot normalize zero vector")
        a = a / n
        return UnitVector3(float(a[0]), float(a[1]), float(a[2]))


class RigidTransform:
    """Rotation + translation; maps points of one camera frame into another."""

    def __init__(self, rotation, translation):
        R = np.asarray(rotation, dtype=float).reshape(3, 3)
        t = np.asarray(translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant != +1")
        self.rotation = R
        self.translation = t
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def project(K: CameraIntrinsics, p: Point3) -> Pixel:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    if p.z <= 0:
        raise NonPositiveDepth(f"cannot project point with z={p.z}")
    return Pixel(K.fx * p.x / p.z + K.cx, K.fy * p.y / p.z + K.cy)


def backproject(K: CameraIntrinsics, px: Pixel, depth: float) -> Point3:
    """Lift a pixel at the given metric depth back to the camera frame."""
    if depth <= 0:
        raise NonPositiveDepth(f"cannot backproject with depth={depth}")
    return Point3(
        (px.u - K.cx) * depth / K.fx,
        (px.v - K.cy) * depth / K.fy,
        depth,
    )


def transform_point(T: RigidTransform, p: Point3) -> Point3:
    return Point3.from_array(T.rotation @ p.to_array() + T.translation)


def rotate_direction_inverse(T: RigidTransform, v: UnitVector3) -> UnitVector3:
    """Carry a direction backwards through T (rotation only, re-normalized)."""
    return UnitVector3.from_array(T.rotation.T @ v.to_array())


def project_array(K: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of an (N,3) array; all z must be positive."""
    pts = np.asarray(pts, dtype=float)
    if np.any(pts[:, 2] <= 0):
        raise NonPositiveDepth("point with non-positive depth in batch")
    u = K.fx * pts[:, 0] / pts[:, 2] + K.cx
    v = K.fy * pts[:, 1] / pts[:, 2] + K.cy
    return np.stack([u, v], axis=1)


def rotation_geodesic_error(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle in radians between two rotation matrices."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_about_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues formula."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1 - math.cos(angle_rad)) * (K @ K)


def load_intrinsics(path) -> CameraIntrinsics:
    """Read a plain-text key-value intrinsics file (fx= fy= cx= cy= width= height=)."""
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        return CameraIntrinsics(
            fx=float(fields["fx"]),
            fy=float(fields["fy"]),
            cx=float(fields["cx"]),
            cy=float(fields["cy"]),
            width=int(fields["width"]),
            height=int(fields["height"]),
        )
    except KeyError as e:
        raise ValueError(f"intrinsics file {path} missing key {e}") from e


def save_intrinsics(K: CameraIntrinsics, path) -> None:
    Path(path).write_text(
        f"fx={K.fx!r}\nfy={K.fy!r}\ncx={K.cx!r}\ncy={K.cy!r}\n"
        f"width={K.width}\nheight={K.height}\n"
    )
