import numpy as np
import pytest

from togpipe.features import FeatureMap, normalize_rows
from togpipe.geometry import CameraIntrinsics


@pytest.fixture
def K():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def random_feature_map(rng, h=8, w=8, c=8, full_mask=True) -> FeatureMap:
    data = normalize_rows(rng.normal(size=(h, w, c)).astype(np.float32))
    mask = np.ones((h, w), dtype=bool) if full_mask else rng.random((h, w)) < 0.5
    if not mask.any():
        mask[0, 0] = True
    return FeatureMap(h, w, c, data, mask)
