"""Low-level file formats: binary PGM/PPM, float32 plane files, JSONL.

All writers are deterministic byte-for-byte for identical inputs; JSON is
emitted with sorted keys and no whitespace surprises so manifests can be
compared byte-wise across runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedMosaic, SchemaViolation

PGM_MAXVAL = 65535


def _read_pnm_header(raw: bytes, magic: bytes, path: Path) -> tuple[int, int, int, int]:
    """Parse a binary PNM header; returns (width, height, maxval, data_offset)."""
    if not raw.startswith(magic):
        raise MalformedMosaic(f"{path}: expected {magic.decode()} magic")
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise MalformedMosaic(f"{path}: truncated header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise MalformedMosaic(f"{path}: unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            token = raw[pos:end]
            if not token.isdigit():
                raise MalformedMosaic(f"{path}: non-numeric header token {token!r}")
            fields.append(int(token))
            pos = end
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise MalformedMosaic(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    return width, height, maxval, pos


def read_pgm16(path: Path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 65535 into a uint16 (H, W) array."""
    raw = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(raw, b"P5", Path(path))
    if maxval != PGM_MAXVAL:
        raise MalformedMosaic(f"{path}: maxval {maxval}, expected {PGM_MAXVAL}")
    expected = width * height * 2
    payload = raw[offset:]
    if len(payload) != expected:
        raise MalformedMosaic(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return data.astype(np.uint16)


def write_pgm16(path: Path, data: np.ndarray) -> None:
    """Write a uint16 (H, W) array as binary P5 with maxval 65535."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise IoFailure(f"{path}: PGM data must be 2-D, got shape {data.shape}")
    height, width = data.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    try:
        Path(path).write_bytes(header + data.astype(">u2").tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def write_pgm8(path: Path, data: np.ndarray) -> None:
    """Write a uint8 (H, W) array as binary P5 with maxval 255 (masks)."""
    data = np.asarray(data, dtype=np.uint8)
    height, width = data.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + data.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_ppm(path: Path) -> tuple[np.ndarray, int]:
    """Read a binary P6 PPM; returns (uint16 (H, W, 3) array, maxval).

    Samples are one byte for maxval < 256, two big-endian bytes otherwise,
    per the PPM convention.
    """
    raw = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(raw, b"P6", Path(path))
    wide = maxval > 255
    expected = width * height * 3 * (2 if wide else 1)
    payload = raw[offset:]
    if len(payload) != expected:
        raise MalformedMosaic(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    dtype = ">u2" if wide else np.uint8
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return data.astype(np.uint16), maxval


def encode_ppm(codes: np.ndarray, maxval: int) -> bytes:
    """Encode integer (H, W, 3) codes as binary P6 bytes with the given maxval."""
    codes = np.asarray(codes)
    if codes.ndim != 3 or codes.shape[2] != 3:
        raise IoFailure(f"PPM data must be (H, W, 3), got {codes.shape}")
    height, width = codes.shape[:2]
    header = f"P6\n{width} {height}\n{maxval}\n".encode("ascii")
    return header + codes.astype(">u2" if maxval > 255 else np.uint8).tobytes()


def write_ppm(path: Path, codes: np.ndarray, maxval: int) -> None:
    try:
        Path(path).write_bytes(encode_ppm(codes, maxval))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# --- float planes -------------------------------------------------------------
#
# A "plane file" is a pair: <stem>.f32 holding little-endian float32 samples in
# C order, and <stem>.json describing it. Values are stored at float32
# precision; loading is exact with respect to the stored bytes.

def write_plane(stem: Path, data: np.ndarray, header: dict) -> None:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        channels = 1
    elif data.ndim == 3:
        channels = data.shape[2]
    else:
        raise IoFailure(f"{stem}: plane data must be 2-D or 3-D")
    full = dict(header)
    full.update(height=int(data.shape[0]), width=int(data.shape[1]), channels=channels)
    try:
        Path(str(stem) + ".f32").write_bytes(data.astype("<f4").tobytes())
        write_json(Path(str(stem) + ".json"), full)
    except OSError as exc:
        raise IoFailure(f"{stem}: {exc}") from exc


def read_plane(stem: Path) -> tuple[np.ndarray, dict]:
    header_path = Path(str(stem) + ".json")
    data_path = Path(str(stem) + ".f32")
    if not header_path.exists() or not data_path.exists():
        raise IoFailure(f"{stem}: missing .f32/.json plane pair")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    height, width, channels = header["height"], header["width"], header["channels"]
    raw = np.frombuffer(data_path.read_bytes(), dtype="<f4")
    if raw.size != height * width * channels:
        raise IoFailure(f"{stem}: plane payload does not match header dimensions")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return raw.reshape(shape).astype(np.float64), header


# --- JSON / JSONL --------------------------------------------------------------

def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_json(path: Path, obj) -> None:
    try:
        Path(path).write_text(dump_json(obj) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def write_jsonl(path: Path, rows) -> int:
    n = 0
    try:
        with Path(path).open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(dump_json(row) + "\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return n


def read_jsonl(path: Path) -> list[dict]:
    """Read a JSONL file; raises SchemaViolation naming the offending line."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise SchemaViolation(f"{path}:{lineno}: expected a JSON object")
            rows.append(row)
    return rows
