"""Inverse rendering and the unrecoverable residual.

Rendering with exposure gain e clips every linear value above 1, so the best
possible inverse recovers at most 1/e on clipped channels; the residual map
and its statistics quantify exactly that loss, separated from quantization
noise by a threshold tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .errors import DomainError, ShapeMismatch
from .isp import IDENTITY, RenderedRgb, RenderParams, clip_mask, render_proxy, srgb_eotf
from .measxyz import MeasXyzImage

DEFAULT_TAU = 2.0 / 255.0


@dataclass(frozen=True)
class LostSignalReport:
    """Per-pixel luminance residual plus summary statistics.

    ``histogram`` rows are (bin_lo, bin_hi, count) over the residual with
    equal-width bins on [0, max residual]; counts sum to the pixel count.
    A zero-residual image degenerates to a single (0, 0, N) bin.
    """

    residual_map: np.ndarray
    lost_mask: np.ndarray
    clipped_fraction: float
    p99_original: float
    p99_recovered: float
    histogram: tuple[tuple[float, float, int], ...]
    tau: float
    capture_id: str = ""
    exposure_gain: float = 1.0
    bits: int = 8

    def __post_init__(self):
        residual = np.array(self.residual_map, dtype=np.float64)
        mask = np.array(self.lost_mask, dtype=bool)
        if residual.shape != mask.shape:
            raise ShapeMismatch("residual_map and lost_mask shapes differ")
        if not 0.0 <= self.clipped_fraction <= 1.0:
            raise DomainError(f"clipped_fraction outside [0, 1]: {self.clipped_fraction}")
        if sum(count for _, _, count in self.histogram) != residual.size:
            raise DomainError("histogram counts must sum to the pixel count")
        residual.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "residual_map", residual)
        object.__setattr__(self, "lost_mask", mask)

    def summary_dict(self) -> dict:
        return {
            "capture_id": self.capture_id,
            "exposure_gain": self.exposure_gain,
            "clipped_fraction": self.clipped_fraction,
            "p99_original": self.p99_original,
            "p99_recovered": self.p99_recovered,
            "tau": self.tau,
            "bits": self.bits,
        }


def invert_render(rendered: RenderedRgb) -> np.ndarray:
    """Best-effort inverse of render_proxy; values may leave [0, 1].

    Dequantize, invert the transfer, undo the color matrix, divide by the
    exposure gain. Clipping is the one stage with no inverse, so recovered
    values floor out at 1/gain wherever the forward pass clipped.
    """
    params = rendered.params
    if params.quantize:
        encoded = rendered.codes.astype(np.float64) / params.max_code
    else:
        encoded = rendered.codes.astype(np.float64)
    linear = srgb_eotf(encoded) if params.transfer != IDENTITY else encoded
    inverse = np.linalg.inv(params.matrix)
    xyz = np.einsum("ij,hwj->hwi", inverse, linear)
    return xyz / params.exposure_gain


def luminance(xyz: np.ndarray) -> np.ndarray:
    """Y is the second XYZ channel."""
    return np.asarray(xyz, dtype=np.float64)[..., 1]


def nearest_rank_percentile(values: np.ndarray, percent: float) -> float:
    """Nearest-rank percentile (no interpolation) for cross-platform stability."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if flat.size == 0:
        raise DomainError("percentile of empty array")
    rank = max(1, int(np.ceil(percent / 100.0 * flat.size)))
    return float(flat[rank - 1])


def residual_histogram(residual: np.ndarray, bins: int) -> tuple[tuple[float, float, int], ...]:
    flat = np.asarray(residual, dtype=np.float64).ravel()
    top = float(flat.max()) if flat.size else 0.0
    if top == 0.0:
        return ((0.0, 0.0, int(flat.size)),)
    width = top / bins
    idx = np.minimum((flat / width).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return tuple(
        (float(i * width), float((i + 1) * width), int(counts[i])) for i in range(bins)
    )


def lost_signal_residual(
    z: MeasXyzImage,
    recovered: np.ndarray,
    forward_clip_mask: np.ndarray,
    tau: float = DEFAULT_TAU,
    bins: int = 32,
    *,
    capture_id: str | None = None,
    exposure_gain: float = 1.0,
    bits: int = 8,
) -> LostSignalReport:
    """Compare the original observation with its recovery after rendering."""
    recovered = np.asarray(recovered, dtype=np.float64)
    if recovered.shape != z.data.shape:
        raise ShapeMismatch(
            f"recovered shape {recovered.shape} != original {z.data.shape}"
        )
    forward_clip_mask = np.asarray(forward_clip_mask, dtype=bool)
    if forward_clip_mask.shape != z.data.shape[:2]:
        raise ShapeMismatch("clip mask shape does not match the image")
    if tau <= 0:
        raise DomainError("tau must be > 0")
    if bins < 2:
        raise DomainError("bins must be >= 2")

    y_orig = luminance(z.data)
    y_rec = luminance(recovered)
    residual = np.abs(y_orig - y_rec)
    return LostSignalReport(
        residual_map=residual,
        lost_mask=residual > tau,
        clipped_fraction=float(np.count_nonzero(forward_clip_mask)) / forward_clip_mask.size,
        p99_original=nearest_rank_percentile(y_orig, 99.0),
        p99_recovered=nearest_rank_percentile(y_rec, 99.0),
        histogram=residual_histogram(residual, bins),
        tau=float(tau),
        capture_id=capture_id if capture_id is not None else z.capture_id,
        exposure_gain=float(exposure_gain),
        bits=int(bits),
    )


def analyze_render(
    z: MeasXyzImage, params: RenderParams, tau: float = DEFAULT_TAU, bins: int = 32
) -> LostSignalReport:
    """Render, invert, and measure the residual in one step."""
    rendered = render_proxy(z, params)
    recovered = invert_render(rendered)
    return lost_signal_residual(
        z,
        recovered,
        clip_mask(z, params),
        tau=tau,
        bins=bins,
        exposure_gain=params.exposure_gain,
        bits=params.bit_depth,
    )


def emit_report(report: LostSignalReport, out_dir: Path) -> None:
    """Materialize the report: residual plane, mask PGM, histogram CSV, summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = report.capture_id or "report"
    formats.write_plane(
        out_dir / f"{name}_residual",
        report.residual_map,
        {"capture_id": report.capture_id, "range": [0, float(report.residual_map.max()) if report.residual_map.size else 0.0]},
    )
    formats.write_pgm8(out_dir / f"{name}_lost_mask.pgm", report.lost_mask.astype(np.uint8) * 255)
    lines = ["bin_lo,bin_hi,count"]
    lines += [f"{lo!r},{hi!r},{count}" for lo, hi, count in report.histogram]
    (out_dir / f"{name}_histogram.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    formats.write_json(out_dir / f"{name}_summary.json", report.summary_dict())
