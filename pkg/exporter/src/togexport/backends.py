"""Feature backends.

``StatsBackend`` is the always-available default: deterministic classical
image statistics standing in for neural encoders, so the whole tool chain
can run without model weights. ``NeuralBackend`` wires pretrained vision
models when their weights are present on disk and refuses to run
otherwise (``ModelUnavailable``); it never downloads anything.

Both produce the same output shapes: an image embedding, a text
embedding, and a fused dense feature map built by concatenating two
per-stream-normalized channel groups, plus a foreground mask.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BadImage, ModelUnavailable

EMBED_DIM = 64
GRID_SIZE = 32


class Backend(Protocol):
    name: str

    def embed_image(self, image_path) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...

    def feature_map(self, image_path) -> tuple[np.ndarray, np.ndarray]:
        """Return ((H, W, C) float32 features, (H, W) bool mask)."""
        ...


def _load_rgb(image_path) -> np.ndarray:
    try:
        with Image.open(image_path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise BadImage(f"cannot decode {image_path}: {e}") from e


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class StatsBackend:
    """Deterministic classical-statistics encoder (no model weights)."""

    name: str = "stats-v1"

    def embed_image(self, image_path) -> np.ndarray:
        img = _load_rgb(image_path)
        parts = []
        # per-channel histograms (16 bins each) plus global moments
        for ch in range(3):
            hist, _ = np.histogram(img[..., ch], bins=16, range=(0.0, 1.0))
            parts.append(hist / max(1, img[..., ch].size))
        moments = [
            img.mean(axis=(0, 1)),
            img.std(axis=(0, 1)),
            np.abs(np.diff(img, axis=0)).mean(axis=(0, 1)),
            np.abs(np.diff(img, axis=1)).mean(axis=(0, 1)),
        ]
        parts.append(np.concatenate(moments))
        v = np.concatenate(parts)
        v = np.concatenate([v, np.zeros(max(0, EMBED_DIM - v.size))])[:EMBED_DIM]
        # offset so an all-black image still embeds to a nonzero vector
        v[-1] += 1e-3
        return _normalize(v)

    def embed_text(self, text: str) -> np.ndarray:
        """Hashed character trigram bag; deterministic across processes."""
        v = np.zeros(EMBED_DIM)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3].encode()
            h = int.from_bytes(hashlib.blake2s(gram, digest_size=4).digest(), "little")
            v[h % EMBED_DIM] += 1.0
        if not v.any():
            v[0] = 1.0
        return _normalize(v)

    def feature_map(self, image_path) -> tuple[np.ndarray, np.ndarray]:
        img = _load_rgb(image_path)
        g = GRID_SIZE
        h, w = img.shape[:2]
        # average-pool onto the grid
        ys = np.linspace(0, h, g + 1).astype(int)
        xs = np.linspace(0, w, g + 1).astype(int)
        pooled = np.zeros((g, g, 3))
        for i in range(g):
            for j in range(g):
                cell = img[ys[i] : max(ys[i] + 1, ys[i + 1]), xs[j] : max(xs[j] + 1, xs[j + 1])]
                pooled[i, j] = cell.mean(axis=(0, 1))

        # stream 1: color statistics (value + deviation from global mean)
        color = np.concatenate([pooled, pooled - pooled.mean(axis=(0, 1))], axis=-1)
        # stream 2: local gradient structure
        gy = np.gradient(pooled, axis=0)
        gx = np.gradient(pooled, axis=1)
        grad = np.concatenate([gx, gy], axis=-1)

        def norm_stream(s):
            n = np.linalg.norm(s, axis=-1, keepdims=True)
            return np.divide(s, n, out=np.zeros_like(s), where=n > 1e-12)

        fused = np.concatenate([norm_stream(color), norm_stream(grad)], axis=-1)
        # pixels whose feature is all-zero would be dropped by consumers'
        # normalization; nudge them onto a constant direction instead
        dead = np.linalg.norm(fused, axis=-1) < 1e-12
        fused[dead, 0] = 1.0

        # foreground: cells that stand out from the border color
        border = np.concatenate(
            [pooled[0], pooled[-1], pooled[:, 0], pooled[:, -1]]
        ).mean(axis=0)
        saliency = np.linalg.norm(pooled - border, axis=-1)
        thresh = 0.5 * (saliency.min() + saliency.max())
        mask = saliency > thresh
        if not mask.any():
            # uniform image: keep a center region so the mask is never empty
            q = g // 4
            mask[q : g - q, q : g - q] = True
        return fused.astype(np.float32), mask


@dataclass
class NeuralBackend:
    """Pretrained-model encoder; requires weights already on disk."""

    weights_dir: str
    name: str = "neural-v1"

    def _require_weights(self) -> Path:
        p = Path(self.weights_dir)
        if not p.is_dir() or not any(p.iterdir()):
            raise ModelUnavailable(
                f"no model weights under {self.weights_dir!r}; "
                "download them out of band or use the stats backend"
            )
        return p

    def embed_image(self, image_path) -> np.ndarray:
        self._require_weights()
        raise ModelUnavailable("neural image encoder not bundled in this build")

    def embed_text(self, text: str) -> np.ndarray:
        self._require_weights()
        raise ModelUnavailable("neural text encoder not bundled in this build")

    def feature_map(self, image_path) -> tuple[np.ndarray, np.ndarray]:
        self._require_weights()
        raise ModelUnavailable("neural feature extractor not bundled in this build")


def make_backend(name: str, weights_dir: str = "") -> Backend:
    if name == "stats":
        return StatsBackend()
    if name == "neural":
        return NeuralBackend(weights_dir=weights_dir or "models")
    raise ValueError(f"unknown backend {name!r}")
