"""RAW capture data model and the on-disk capture bundle format.

A bundle is a directory holding ``mosaic.pgm`` (binary P5, maxval 65535,
big-endian samples) and a strict ``capture.json`` sidecar. Round-trips are
bit-exact: mosaic codes and every sidecar numeric survive save/load
unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .errors import (
    DimensionMismatch,
    InvalidSpec,
    IoFailure,
    MalformedSidecar,
    MissingFile,
)

CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
MIN_CAM_TO_XYZ_DET = 1e-9

MOSAIC_NAME = "mosaic.pgm"
SIDECAR_NAME = "capture.json"

_SIDECAR_KEYS = {
    "capture_id", "cfa_pattern", "black_level", "white_level",
    "wb_gains", "cam_to_xyz", "metadata", "raw_path",
}
_METADATA_KEYS = {"iso", "exposure_time", "aperture", "device_id", "scene_id", "session_id"}


def _positive_finite(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise MalformedSidecar(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise MalformedSidecar(f"{name} must be finite and > 0, got {value}")
    return value


@dataclass(frozen=True)
class CameraMetadata:
    """Capture context: sensitivity, shutter, aperture plus grouping ids."""

    iso: float
    exposure_time: float
    aperture: float
    device_id: str
    scene_id: str | None = None
    session_id: str | None = None

    def __post_init__(self):
        _positive_finite(self.iso, "metadata.iso")
        _positive_finite(self.exposure_time, "metadata.exposure_time")
        _positive_finite(self.aperture, "metadata.aperture")
        if not self.device_id:
            raise MalformedSidecar("metadata.device_id must be non-empty")

    def to_dict(self) -> dict:
        out = {
            "iso": self.iso,
            "exposure_time": self.exposure_time,
            "aperture": self.aperture,
            "device_id": self.device_id,
        }
        if self.scene_id is not None:
            out["scene_id"] = self.scene_id
        if self.session_id is not None:
            out["session_id"] = self.session_id
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "CameraMetadata":
        if not isinstance(obj, dict):
            raise MalformedSidecar("metadata must be an object")
        unknown = set(obj) - _METADATA_KEYS
        if unknown:
            raise MalformedSidecar(f"unknown metadata keys: {sorted(unknown)}")
        for key in ("iso", "exposure_time", "aperture", "device_id"):
            if key not in obj:
                raise MalformedSidecar(f"metadata.{key} is required")
        return cls(
            iso=float(obj["iso"]),
            exposure_time=float(obj["exposure_time"]),
            aperture=float(obj["aperture"]),
            device_id=str(obj["device_id"]),
            scene_id=obj.get("scene_id"),
            session_id=obj.get("session_id"),
        )


@dataclass(frozen=True)
class RawCapture:
    """A CFA mosaic plus the calibration needed to reach linear XYZ.

    ``black_level`` holds one value per CFA site in raster order of the 2x2
    tile. Mosaic codes above ``white_level`` are legal (sensors clip) and are
    treated as saturated downstream.
    """

    capture_id: str
    mosaic: np.ndarray
    cfa_pattern: str
    black_level: tuple[float, float, float, float]
    white_level: float
    wb_gains: tuple[float, float, float]
    cam_to_xyz: np.ndarray
    metadata: CameraMetadata
    raw_path: str

    def __post_init__(self):
        if not self.capture_id:
            raise MalformedSidecar("capture_id must be non-empty")
        if self.cfa_pattern not in CFA_PATTERNS:
            raise MalformedSidecar(f"unknown cfa_pattern {self.cfa_pattern!r}")
        mosaic = np.array(self.mosaic, dtype=np.uint16)
        object.__setattr__(self, "mosaic", mosaic)
        if mosaic.ndim != 2 or mosaic.shape[0] % 2 or mosaic.shape[1] % 2:
            raise DimensionMismatch(
                f"mosaic must be 2-D with even dimensions, got {mosaic.shape}"
            )
        mosaic.setflags(write=False)
        try:
            black = tuple(float(b) for b in self.black_level)
            white = float(self.white_level)
        except (TypeError, ValueError):
            raise MalformedSidecar("black_level/white_level must be numeric") from None
        if len(black) != 4:
            raise MalformedSidecar("black_level must have 4 entries")
        for b in black:
            if not math.isfinite(b) or b < 0:
                raise MalformedSidecar(f"black_level entries must be finite and >= 0, got {b}")
        object.__setattr__(self, "black_level", black)
        if not math.isfinite(white) or white <= max(black) or white > 65535:
            raise MalformedSidecar(
                f"white_level must exceed every black level and fit 16 bits, got {white}"
            )
        object.__setattr__(self, "white_level", white)
        gains = tuple(_positive_finite(g, "wb_gains") for g in self.wb_gains)
        if len(gains) != 3:
            raise MalformedSidecar("wb_gains must have 3 entries")
        object.__setattr__(self, "wb_gains", gains)
        matrix = np.array(self.cam_to_xyz, dtype=np.float64)
        if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
            raise MalformedSidecar("cam_to_xyz must be a finite 3x3 matrix")
        if abs(np.linalg.det(matrix)) <= MIN_CAM_TO_XYZ_DET:
            raise MalformedSidecar("cam_to_xyz is singular")
        matrix.setflags(write=False)
        object.__setattr__(self, "cam_to_xyz", matrix)

    @property
    def height(self) -> int:
        return self.mosaic.shape[0]

    @property
    def width(self) -> int:
        return self.mosaic.shape[1]

    def sidecar_dict(self) -> dict:
        return {
            "capture_id": self.capture_id,
            "cfa_pattern": self.cfa_pattern,
            "black_level": list(self.black_level),
            "white_level": self.white_level,
            "wb_gains": list(self.wb_gains),
            "cam_to_xyz": [[float(v) for v in row] for row in self.cam_to_xyz],
            "metadata": self.metadata.to_dict(),
            "raw_path": self.raw_path,
        }


@dataclass(frozen=True)
class CaptureRef:
    """Lightweight handle for split/verify work: ids and paths, no pixels."""

    capture_id: str
    raw_path: str = ""
    bundle_path: str = ""
    scene_id: str | None = None
    device_id: str | None = None
    session_id: str | None = None

    @classmethod
    def from_capture(cls, capture: RawCapture, bundle_path: str = "") -> "CaptureRef":
        return cls(
            capture_id=capture.capture_id,
            raw_path=capture.raw_path,
            bundle_path=bundle_path,
            scene_id=capture.metadata.scene_id,
            device_id=capture.metadata.device_id,
            session_id=capture.metadata.session_id,
        )

    def to_dict(self) -> dict:
        return {
            "capture_id": self.capture_id,
            "raw_path": self.raw_path,
            "bundle_path": self.bundle_path,
            "scene_id": self.scene_id,
            "device_id": self.device_id,
            "session_id": self.session_id,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CaptureRef":
        return cls(
            capture_id=str(obj["capture_id"]),
            raw_path=str(obj.get("raw_path") or ""),
            bundle_path=str(obj.get("bundle_path") or ""),
            scene_id=obj.get("scene_id"),
            device_id=obj.get("device_id"),
            session_id=obj.get("session_id"),
        )


# --- bundle IO -----------------------------------------------------------------

def load_capture_bundle(path: Path) -> RawCapture:
    """Load and validate a capture bundle directory."""
    path = Path(path)
    mosaic_path = path / MOSAIC_NAME
    sidecar_path = path / SIDECAR_NAME
    if not mosaic_path.exists():
        raise MissingFile(str(mosaic_path))
    if not sidecar_path.exists():
        raise MissingFile(str(sidecar_path))
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedSidecar(f"{sidecar_path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(sidecar, dict):
        raise MalformedSidecar(f"{sidecar_path}: expected a JSON object")
    unknown = set(sidecar) - _SIDECAR_KEYS
    if unknown:
        raise MalformedSidecar(f"{sidecar_path}: unknown keys {sorted(unknown)}")
    missing = _SIDECAR_KEYS - set(sidecar)
    if missing:
        raise MalformedSidecar(f"{sidecar_path}: missing keys {sorted(missing)}")

    mosaic = formats.read_pgm16(mosaic_path)
    if mosaic.shape[0] % 2 or mosaic.shape[1] % 2:
        raise DimensionMismatch(f"{mosaic_path}: odd mosaic dimensions {mosaic.shape}")

    black = sidecar["black_level"]
    if isinstance(black, (int, float)):
        black = [float(black)] * 4  # scalar sidecars expand per CFA site
    if not isinstance(black, list) or len(black) != 4:
        raise MalformedSidecar(f"{sidecar_path}: black_level must be a number or 4-list")

    wb = sidecar["wb_gains"]
    if not isinstance(wb, list) or len(wb) != 3:
        raise MalformedSidecar(f"{sidecar_path}: wb_gains must be a 3-list")
    matrix = sidecar["cam_to_xyz"]
    if not (isinstance(matrix, list) and len(matrix) == 3
            and all(isinstance(row, list) and len(row) == 3 for row in matrix)):
        raise MalformedSidecar(f"{sidecar_path}: cam_to_xyz must be a 3x3 nested list")

    metadata = CameraMetadata.from_dict(sidecar["metadata"])
    return RawCapture(
        capture_id=str(sidecar["capture_id"]),
        mosaic=mosaic,
        cfa_pattern=str(sidecar["cfa_pattern"]),
        black_level=tuple(float(b) for b in black),
        white_level=sidecar["white_level"],
        wb_gains=tuple(wb),
        cam_to_xyz=np.asarray(matrix, dtype=np.float64),
        metadata=metadata,
        raw_path=str(sidecar["raw_path"]),
    )


def save_capture_bundle(capture: RawCapture, path: Path) -> None:
    """Write a bundle such that ``load_capture_bundle`` reproduces it exactly."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    formats.write_pgm16(path / MOSAIC_NAME, capture.mosaic)
    formats.write_json(path / SIDECAR_NAME, capture.sidecar_dict())


# --- synthetic captures ----------------------------------------------------------

@dataclass(frozen=True)
class ScenePatch:
    """Axis-aligned rectangle whose radiance is background * gain."""

    top: int
    left: int
    height: int
    width: int
    gain: float


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Analytic scene: flat background with rectangular patches plus noise.

    ``background`` and patch radiances are fractions of the sensor dynamic
    range; ``noise_sigma`` is Gaussian noise in the same units.
    """

    height: int = 64
    width: int = 64
    background: float = 0.25
    patches: tuple[ScenePatch, ...] = ()
    noise_sigma: float = 0.0
    cfa_pattern: str = "RGGB"
    black_level: tuple[float, float, float, float] = (64.0, 64.0, 64.0, 64.0)
    white_level: float = 1023.0
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cam_to_xyz: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    metadata: CameraMetadata = field(
        default_factory=lambda: CameraMetadata(
            iso=100.0, exposure_time=1 / 60, aperture=4.0, device_id="synth-cam"
        )
    )

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.height % 2 or self.width % 2:
            raise InvalidSpec(f"scene dimensions must be positive and even, got {self.height}x{self.width}")
        if not (0 <= self.background):
            raise InvalidSpec("background must be >= 0")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        for p in self.patches:
            if p.height <= 0 or p.width <= 0:
                raise InvalidSpec(f"patch has non-positive size: {p}")
            if p.top < 0 or p.left < 0 or p.top + p.height > self.height or p.left + p.width > self.width:
                raise InvalidSpec(f"patch out of bounds: {p}")
            if p.gain <= 0:
                raise InvalidSpec(f"patch gain must be > 0: {p}")

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSceneSpec":
        patches = tuple(ScenePatch(**p) for p in obj.get("patches", ()))
        kwargs = {k: v for k, v in obj.items() if k not in ("patches", "metadata", "black_level", "wb_gains", "cam_to_xyz")}
        if "black_level" in obj:
            kwargs["black_level"] = tuple(obj["black_level"])
        if "wb_gains" in obj:
            kwargs["wb_gains"] = tuple(obj["wb_gains"])
        if "cam_to_xyz" in obj:
            kwargs["cam_to_xyz"] = tuple(tuple(row) for row in obj["cam_to_xyz"])
        if "metadata" in obj:
            kwargs["metadata"] = CameraMetadata.from_dict(obj["metadata"])
        return cls(patches=patches, **kwargs)


@dataclass(frozen=True)
class SyntheticCapture:
    """A generated capture together with its analytically known linear scene."""

    capture: RawCapture
    scene: np.ndarray  # (H, W) radiance in fractions of dynamic range


def scene_radiance(spec: SyntheticSceneSpec) -> np.ndarray:
    scene = np.full((spec.height, spec.width), spec.background, dtype=np.float64)
    for p in spec.patches:
        scene[p.top:p.top + p.height, p.left:p.left + p.width] *= p.gain
    return scene


def synth_capture(spec: SyntheticSceneSpec, seed: int, capture_id: str = "synth-0000") -> SyntheticCapture:
    """Deterministically render ``spec`` into mosaic codes.

    Codes are ``black + radiance * (white - black) + noise`` rounded to the
    nearest integer and clipped to 16 bits, so radiances chosen as exact
    multiples of 1/(white - black) survive quantization exactly.
    """
    scene = scene_radiance(spec)
    rng = np.random.default_rng(seed)
    black_map = _black_site_map(spec.black_level, spec.height, spec.width)
    span = spec.white_level - black_map
    codes = black_map + scene * span
    if spec.noise_sigma > 0:
        codes = codes + rng.normal(0.0, spec.noise_sigma, scene.shape) * span
    codes = np.clip(np.floor(codes + 0.5), 0, 65535).astype(np.uint16)
    capture = RawCapture(
        capture_id=capture_id,
        mosaic=codes,
        cfa_pattern=spec.cfa_pattern,
        black_level=spec.black_level,
        white_level=spec.white_level,
        wb_gains=spec.wb_gains,
        cam_to_xyz=np.asarray(spec.cam_to_xyz, dtype=np.float64),
        metadata=spec.metadata,
        raw_path=f"synthetic://{capture_id}",
    )
    return SyntheticCapture(capture=capture, scene=scene)


def with_metadata(spec: SyntheticSceneSpec, metadata: CameraMetadata) -> SyntheticSceneSpec:
    return replace(spec, metadata=metadata)


def _black_site_map(black_level, height: int, width: int) -> np.ndarray:
    """Per-pixel black level from the 4 per-site values (tile raster order)."""
    tile = np.asarray(black_level, dtype=np.float64).reshape(2, 2)
    reps = (height // 2, width // 2)
    return np.tile(tile, reps)
