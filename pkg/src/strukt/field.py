"""Measurement fields on regular 2-D grids.

A field stores ``channels`` planes of ``height x width`` float32 samples.
On disk the container is a single text header line followed by the raw
little-endian payload::

    MFLD1 <height> <width> <channels> <field_hash>\\n<payload>

``field_hash`` is the SHA-256 of the canonical header prefix
``MFLD1 <height> <width> <channels>\\n`` concatenated with the payload
bytes, so it depends on the shape and the exact sample bits only.
"""

from dataclasses import dataclass, field as dc_field
from pathlib import Path
import re

import numpy as np

from ._canon import sha256_hex
from .errors import FormatError, IntegrityError

MAGIC = "MFLD1"
_DTYPE = np.dtype("<f4")
_HEADER_RE = re.compile(rb"^MFLD1 (\d+) (\d+) (\d+) ([0-9a-f]{64})$")


def _header_prefix(height, width, channels):
    return f"{MAGIC} {height} {width} {channels}\n".encode("ascii")


@dataclass(frozen=True, eq=False)
class MeasurementField:
    """Immutable multi-channel sample grid.

    ``values`` has shape ``(channels, height, width)`` and dtype float32; it
    is made read-only on construction.
    """

    values: np.ndarray
    provenance_note: str = ""
    field_hash: str = dc_field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"field values must be 2-D or 3-D, got shape {arr.shape}")
        k, h, w = arr.shape
        if min(k, h, w) < 1:
            raise ValueError(f"field dimensions must be positive, got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite samples")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "field_hash",
                           sha256_hex(_header_prefix(h, w, k) + arr.tobytes()))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return (self.height, self.width)

    def payload(self) -> bytes:
        return self.values.tobytes()

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, MeasurementField):
            return NotImplemented
        return self.field_hash == other.field_hash

    def __hash__(self):
        return hash(self.field_hash)

    def __repr__(self):
        return (f"MeasurementField({self.height}x{self.width}x{self.channels}, "
                f"hash={self.field_hash[:12]})")


def field_to_bytes(f: MeasurementField) -> bytes:
    header = f"{MAGIC} {f.height} {f.width} {f.channels} {f.field_hash}\n"
    return header.encode("ascii") + f.payload()


def field_from_bytes(data: bytes, note="") -> MeasurementField:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("field container has no header line")
    m = _HEADER_RE.match(data[:nl])
    if m is None:
        raise FormatError(f"malformed field header: {data[:nl][:80]!r}")
    h, w, k = (int(g) for g in m.group(1, 2, 3))
    stored = m.group(4).decode("ascii")
    if min(h, w, k) < 1:
        raise FormatError("field dimensions must be positive")
    payload = data[nl + 1:]
    expected = h * w * k
    if len(payload) % _DTYPE.itemsize:
        raise FormatError("payload length is not a whole number of float32 samples")
    got = len(payload) // _DTYPE.itemsize
    if got != expected:
        raise FormatError(
            f"sample count mismatch: header declares {h}x{w}x{k}={expected}, payload has {got}")
    arr = np.frombuffer(payload, dtype=_DTYPE).reshape(k, h, w)
    if not np.all(np.isfinite(arr)):
        raise FormatError("field payload contains non-finite samples")
    recomputed = sha256_hex(_header_prefix(h, w, k) + payload)
    if recomputed != stored:
        raise IntegrityError(
            f"field hash mismatch: stored {stored[:12]}..., recomputed {recomputed[:12]}...")
    return MeasurementField(arr, provenance_note=note)


def save_field(f: MeasurementField, path) -> Path:
    path = Path(path)
    path.write_bytes(field_to_bytes(f))
    return path


def load_field(path) -> MeasurementField:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such field file: {path}")
    return field_from_bytes(path.read_bytes(), note=f"loaded from {path.name}")


def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def import_pgm(path) -> MeasurementField:
    """Read a binary (P5) or ASCII (P2) PGM as a single-channel field in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"not a PGM file (magic {magic!r})")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}") from None
    if w < 1 or h < 1:
        raise FormatError("PGM dimensions must be positive")
    if not 0 < maxval <= 65535:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte before raster
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        nbytes = w * h * dtype.itemsize
        raster = data[pos:pos + nbytes]
        if len(raster) != nbytes:
            raise FormatError("truncated PGM raster")
        raw = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        try:
            vals, _ = _pgm_tokens(data, w * h, pos)
            raw = np.array([int(v) for v in vals], dtype=np.float64)
        except ValueError:
            raise FormatError("malformed ASCII PGM raster") from None
    if np.any(raw > maxval):
        raise FormatError("PGM sample exceeds maxval")
    return MeasurementField((raw / maxval).reshape(1, h, w),
                            provenance_note=f"imported from {path.name}")


def resample_box(f: MeasurementField, factor: int) -> MeasurementField:
    """Downsample by averaging non-overlapping ``factor x factor`` blocks."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"resample factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return MeasurementField(f.values, provenance_note=f.provenance_note)
    if f.height % factor or f.width % factor:
        raise ValueError(
            f"factor {factor} does not divide field dimensions {f.height}x{f.width}")
    k, h, w = f.values.shape
    blocks = f.as_float64().reshape(k, h // factor, factor, w // factor, factor)
    out = blocks.mean(axis=(2, 4))
    return MeasurementField(out, provenance_note=f"box-resampled by {factor}")
