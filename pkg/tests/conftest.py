from __future__ import annotations

import numpy as np
import pytest

from measground.capture import CameraMetadata, RawCapture
from measground.measxyz import MeasXyzImage


def make_metadata(seed: int = 0, **overrides) -> CameraMetadata:
    rng = np.random.default_rng(seed)
    fields = dict(
        iso=float(rng.uniform(50, 6400)),
        exposure_time=float(rng.uniform(1 / 8000, 1.0)),
        aperture=float(rng.uniform(1.0, 22.0)),
        device_id=f"device-{seed % 7}",
        scene_id=f"scene-{seed % 5}",
        session_id=f"session-{seed % 3}",
    )
    fields.update(overrides)
    return CameraMetadata(**fields)


def make_capture(seed: int = 0, height: int | None = None, width: int | None = None, **overrides) -> RawCapture:
    rng = np.random.default_rng(seed)
    h = height if height is not None else 2 * int(rng.integers(1, 5))
    w = width if width is not None else 2 * int(rng.integers(1, 5))
    black = tuple(float(b) for b in rng.uniform(0.0, 200.0, 4))
    matrix = rng.normal(0.0, 0.4, (3, 3)) + np.eye(3)
    while abs(np.linalg.det(matrix)) < 1e-3:
        matrix = rng.normal(0.0, 0.4, (3, 3)) + np.eye(3)
    fields = dict(
        capture_id=f"cap-{seed:06d}",
        mosaic=rng.integers(0, 65536, (h, w)).astype(np.uint16),
        cfa_pattern=("RGGB", "BGGR", "GRBG", "GBRG")[seed % 4],
        black_level=black,
        white_level=float(rng.uniform(max(black) + 1.0, 65535.0)),
        wb_gains=tuple(float(g) for g in rng.uniform(0.5, 2.5, 3)),
        cam_to_xyz=matrix,
        metadata=make_metadata(seed),
        raw_path=f"/raw/{seed:06d}.dng",
    )
    fields.update(overrides)
    return RawCapture(**fields)


def make_image(data: np.ndarray, capture_id: str = "img-0", seed: int = 0) -> MeasXyzImage:
    return MeasXyzImage(data=data, capture_id=capture_id, metadata=make_metadata(seed))


@pytest.fixture
def metadata():
    return make_metadata(0)
