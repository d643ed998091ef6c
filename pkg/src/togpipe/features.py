"""Dense feature maps and embedding vectors.

Binary formats (little-endian):
  feature map: magic ``RTAF``, u32 version=1, u32 height, u32 width,
    u32 channels, u8 has_mask, H*W*C float32 row-major, then H*W bytes of
    {0,1} if has_mask.
  embedding:   magic ``RTAE``, u32 length, u8 modality (0=image, 1=text),
    float32 values.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimensionMismatch, OutOfBounds, TruncatedFile, ZeroVector
from .geometry import Pixel

FEATURE_MAGIC = b"RTAF"
EMBEDDING_MAGIC = b"RTAE"
FORMAT_VERSION = 1

_MODALITY_TAGS = {"image": 0, "text": 1}
_MODALITY_NAMES = {v: k for k, v in _MODALITY_TAGS.items()}


@dataclass
class FeatureMap:
    """H×W×C dense feature grid with an optional boolean object mask.

    Per-pixel vectors are L2-normalized at load. The grid may be coarser
    than the source image; ``image_width``/``image_height`` record the
    image resolution so subpixel sampling can rescale coordinates
    (defaults: same as the grid, i.e. scale 1).
    """

    height: int
    width: int
    channels: int
    data: np.ndarray  # (H, W, C) float32
    mask: np.ndarray | None = None  # (H, W) bool
    image_width: int | None = None
    image_height: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32).reshape(
            self.height, self.width, self.channels
        )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (self.height, self.width):
                raise DimensionMismatch(
                    f"mask shape {self.mask.shape} != {(self.height, self.width)}"
                )
        if self.image_width is None:
            self.image_width = self.width
        if self.image_height is None:
            self.image_height = self.height

    # image-pixel <-> feature-grid coordinate scaling
    def to_grid(self, px: Pixel) -> tuple[float, float]:
        return (
            px.u * (self.width / self.image_width),
            px.v * (self.height / self.image_height),
        )

    def to_image(self, gu: float, gv: float) -> Pixel:
        return Pixel(
            gu * (self.image_width / self.width),
            gv * (self.image_height / self.height),
        )

    def masked_indices(self) -> np.ndarray:
        """(N,2) array of (v,u) grid indices inside the mask (all pixels if no mask)."""
        if self.mask is None:
            vv, uu = np.meshgrid(
                np.arange(self.height), np.arange(self.width), indexing="ij"
            )
            return np.stack([vv.ravel(), uu.ravel()], axis=1)
        vv, uu = np.nonzero(self.mask)
        return np.stack([vv, uu], axis=1)

    def masked_features(self) -> np.ndarray:
        """(N,C) feature rows matching masked_indices order."""
        idx = self.masked_indices()
        return self.data[idx[:, 0], idx[:, 1], :]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize along the last axis; zero vectors are left untouched."""
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    return (x / safe).astype(np.float32)


@dataclass
class EmbeddingVector:
    values: np.ndarray
    modality: str  # "image" | "text"

    def __post_init__(self):
        if self.modality not in _MODALITY_TAGS:
            raise ValueError(f"unknown modality {self.modality!r}")
        v = np.asarray(self.values, dtype=np.float32).reshape(-1)
        n = np.linalg.norm(v)
        if n == 0:
            raise ZeroVector("embedding is all zeros")
        self.values = (v / n).astype(np.float32)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"file ended while reading {what}")
    return buf


def write_feature_map(fm: FeatureMap, path) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(
            struct.pack(
                "<IIIIB",
                FORMAT_VERSION,
                fm.height,
                fm.width,
                fm.channels,
                1 if fm.mask is not None else 0,
            )
        )
        f.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())
        if fm.mask is not None:
            f.write(fm.mask.astype(np.uint8).tobytes())


def load_feature_map(path) -> FeatureMap:
    """Load an RTAF file; per-pixel vectors are L2-normalized on the way in."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != FEATURE_MAGIC:
            raise BadMagic(f"{path}: expected {FEATURE_MAGIC!r}, got {magic!r}")
        version, h, w, c, has_mask = struct.unpack(
            "<IIIIB", _read_exact(f, 17, "header")
        )
        if version != FORMAT_VERSION:
            raise BadMagic(f"{path}: unsupported format version {version}")
        if h == 0 or w == 0 or c == 0:
            raise DimensionMismatch(f"{path}: zero dimension in header")
        raw = _read_exact(f, h * w * c * 4, "feature tensor")
        data = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
        mask = None
        if has_mask:
            mraw = _read_exact(f, h * w, "mask")
            mask = np.frombuffer(mraw, dtype=np.uint8).reshape(h, w).astype(bool)
    return FeatureMap(h, w, c, normalize_rows(data), mask)


def write_embedding(emb: EmbeddingVector, path) -> None:
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<IB", emb.values.size, _MODALITY_TAGS[emb.modality]))
        f.write(np.ascontiguousarray(emb.values, dtype="<f4").tobytes())


def load_embedding(path) -> EmbeddingVector:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != EMBEDDING_MAGIC:
            raise BadMagic(f"{path}: expected {EMBEDDING_MAGIC!r}, got {magic!r}")
        length, tag = struct.unpack("<IB", _read_exact(f, 5, "header"))
        if tag not in _MODALITY_NAMES:
            raise BadMagic(f"{path}: unknown modality tag {tag}")
        raw = _read_exact(f, length * 4, "values")
        values = np.frombuffer(raw, dtype="<f4").copy()
    return EmbeddingVector(values, _MODALITY_NAMES[tag])


def sample_feature(fm: FeatureMap, px: Pixel) -> np.ndarray:
    """Bilinearly interpolated, re-normalized feature at an image pixel.

    The pixel is given in image coordinates and rescaled onto the feature
    grid first.
    """
    gu, gv = fm.to_grid(px)
    if not (0 <= gu <= fm.width - 1 and 0 <= gv <= fm.height - 1):
        raise OutOfBounds(f"pixel {px} maps outside feature grid ({gu:.2f},{gv:.2f})")
    u0 = int(np.floor(gu))
    v0 = int(np.floor(gv))
    u0 = min(u0, fm.width - 2) if fm.width > 1 else 0
    v0 = min(v0, fm.height - 2) if fm.height > 1 else 0
    du = gu - u0
    dv = gv - v0
    if fm.width == 1:
        du = 0.0
    if fm.height == 1:
        dv = 0.0
    d = fm.data.astype(np.float64)
    f = (
        (1 - du) * (1 - dv) * d[v0, u0]
        + du * (1 - dv) * d[v0, min(u0 + 1, fm.width - 1)]
        + (1 - du) * dv * d[min(v0 + 1, fm.height - 1), u0]
        + du * dv * d[min(v0 + 1, fm.height - 1), min(u0 + 1, fm.width - 1)]
    )
    n = np.linalg.norm(f)
    if n == 0:
        return f.astype(np.float32)
    return (f / n).astype(np.float32)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity undefined for zero vector")
    return float(np.dot(a, b) / (na * nb))
