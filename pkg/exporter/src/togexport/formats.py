"""Writers for the engine's little-endian binary tensor formats.

These mirror the consumer-side format exactly so the exporter has no code
dependency on the engine package:

* RTAE embedding: magic ``RTAE``, u32 length, u8 modality (0=image,
  1=text), f32 values.
* RTAF feature map: magic ``RTAF``, u32 version (1), u32 height, u32
  width, u32 channels, u8 has_mask, f32 data (H*W*C), then H*W mask
  bytes if has_mask.
"""
from __future__ import annotations

import struct

import numpy as np

EMBEDDING_MAGIC = b"RTAE"
FEATURE_MAGIC = b"RTAF"
FORMAT_VERSION = 1
MODALITY_TAGS = {"image": 0, "text": 1}


def write_embedding(values: np.ndarray, modality: str, path) -> None:
    if modality not in MODALITY_TAGS:
        raise ValueError(f"unknown modality {modality!r}")
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("embedding is all zeros")
    v = (v / n).astype("<f4")
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<IB", v.size, MODALITY_TAGS[modality]))
        f.write(v.tobytes())


def write_feature_map(data: np.ndarray, mask: np.ndarray | None, path) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError("feature map must be (H, W, C)")
    h, w, c = data.shape
    if mask is not None and mask.shape != (h, w):
        raise ValueError("mask shape must match feature map")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IIIIB", FORMAT_VERSION, h, w, c, 1 if mask is not None else 0))
        f.write(np.ascontiguousarray(data).tobytes())
        if mask is not None:
            f.write(mask.astype(np.uint8).tobytes())
