import numpy as np
import pytest
from PIL import Image


def _checker(rng, size=48):
    img = np.zeros((size, size, 3), dtype=np.uint8)
    tile = 8
    for i in range(0, size, tile):
        for j in range(0, size, tile):
            if (i // tile + j // tile) % 2 == 0:
                img[i : i + tile, j : j + tile] = rng.integers(100, 255, size=3)
    return img


def _blob(rng, size=48):
    img = np.full((size, size, 3), 40, dtype=np.uint8)
    yy, xx = np.mgrid[:size, :size]
    cy, cx = rng.integers(size // 3, 2 * size // 3, size=2)
    r = rng.integers(size // 6, size // 3)
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
    img[inside] = rng.integers(150, 255, size=3)
    return img


def _gradient(rng, size=48):
    ramp = np.linspace(0, 255, size, dtype=np.uint8)
    img = np.stack(np.broadcast_arrays(ramp[None, :], ramp[:, None], ramp[None, :]), axis=-1)
    return np.ascontiguousarray(img.astype(np.uint8))


def _noise(rng, size=48):
    return rng.integers(0, 255, size=(size, size, 3), dtype=np.uint8)


def _flat(rng, size=48):
    return np.full((size, size, 3), 128, dtype=np.uint8)


@pytest.fixture(scope="session")
def fixture_images(tmp_path_factory):
    """Five deterministic test images covering distinct content types."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    paths = []
    for name, maker in [
        ("checker", _checker),
        ("blob", _blob),
        ("gradient", _gradient),
        ("noise", _noise),
        ("flat", _flat),
    ]:
        path = root / f"{name}.png"
        Image.fromarray(maker(rng)).save(path)
        paths.append(path)
    return paths
