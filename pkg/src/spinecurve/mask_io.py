"""Scan grids, soft segmentation masks and their on-disk formats.

Three formats are understood:

* ``.pgm``  -- Netpbm greymap, ASCII (P2) or binary (P5), maxval up to 65535.
* ``.csv``  -- one grid row per line, comma separated, LF line endings.
* ``.smask`` -- multi-channel float container (see ``docs/smask.md``).

The module also implements the height normalization that brings a scan
into the canonical 416 x 128 frame used by every geometric operation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError, EmptyScanError, FormatError, StructureError

CHANNEL_NAMES = ("head", "spine", "pelvic_cavity", "pelvis", "right_leg", "left_leg")
CANONICAL_ROWS = 416
CANONICAL_COLS = 128

SMASK_MAGIC = "SMASK"
SMASK_VERSION = 1
_SMASK_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
_RANGE_TOL = 1e-6


def _frozen(array, dtype=None):
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """A single-channel grid of non-negative intensities.

    ``values`` is a read-only ``(rows, cols)`` float64 array.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise StructureError(f"scan grid must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise StructureError(f"scan grid must have rows >= 1 and cols >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("scan grid contains non-finite values")
        if np.any(values < 0):
            raise DomainError("scan grid contains negative values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_flat(cls, rows: int, cols: int, values) -> "ScanGrid":
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != rows * cols:
            raise StructureError(f"expected {rows * cols} values for a {rows}x{cols} grid, got {flat.size}")
        return cls(flat.reshape(rows, cols))


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Per-scanline probability maps, one channel per body part.

    ``channels`` has shape ``(6, rows, cols)`` and follows ``CHANNEL_NAMES``.
    """

    channels: np.ndarray

    def __post_init__(self):
        channels = np.asarray(self.channels)
        if channels.dtype not in (np.float32, np.float64):
            channels = channels.astype(np.float64)
        if channels.ndim != 3:
            raise StructureError(f"soft mask must be (channels, rows, cols), got shape {channels.shape}")
        if channels.shape[0] != len(CHANNEL_NAMES):
            raise StructureError(f"expected {len(CHANNEL_NAMES)} channels, got {channels.shape[0]}")
        if channels.shape[1] < 1 or channels.shape[2] < 1:
            raise StructureError(f"soft mask has empty dimensions {channels.shape[1:]}")
        for name, grid in zip(CHANNEL_NAMES, channels):
            if not np.all(np.isfinite(grid)):
                raise DomainError(f"channel {name!r} contains non-finite values")
            lo, hi = float(grid.min()), float(grid.max())
            if lo < -_RANGE_TOL or hi > 1 + _RANGE_TOL:
                raise DomainError(f"channel {name!r} has value out of range [0, 1]: min={lo}, max={hi}")
        object.__setattr__(self, "channels", _frozen(channels))

    @property
    def rows(self) -> int:
        return self.channels.shape[1]

    @property
    def cols(self) -> int:
        return self.channels.shape[2]

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[CHANNEL_NAMES.index(name)]
        except ValueError:
            raise StructureError(f"unknown channel {name!r}; expected one of {CHANNEL_NAMES}") from None


@dataclass(frozen=True)
class CanonicalFrame:
    """Records how a scan was mapped into the canonical frame.

    Offsets count pixels removed from the source; a negative column offset
    means zero padding was added on that side instead.
    """

    scale_factor: float
    trim_top: int = 0
    trim_bottom: int = 0
    crop_left: int = 0
    crop_right: int = 0
    rows: int = CANONICAL_ROWS
    cols: int = CANONICAL_COLS

    def to_canonical(self, row, col):
        """Map source pixel coordinates (pre-trim frame) into the canonical frame."""
        f = self.scale_factor
        row = np.asarray(row, dtype=np.float64)
        col = np.asarray(col, dtype=np.float64)
        return (row - self.trim_top + 0.5) * f - 0.5, (col + 0.5) * f - 0.5 - self.crop_left

    def to_source(self, row, col):
        f = self.scale_factor
        row = np.asarray(row, dtype=np.float64)
        col = np.asarray(col, dtype=np.float64)
        return (row + 0.5) / f - 0.5 + self.trim_top, (col + self.crop_left + 0.5) / f - 0.5


# ---------------------------------------------------------------------------
# PGM


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens as ``(text, offset)`` pairs and the offset just past
    the single whitespace byte that terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise FormatError("truncated PGM header", offset=pos)
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos].decode("ascii", errors="replace"), start))
    return tokens, pos + 1


def _parse_pgm(data: bytes) -> ScanGrid:
    [(magic, _)], _ = _pgm_tokens(data, 1)
    if magic not in ("P2", "P5"):
        raise FormatError(f"bad PGM magic {magic!r}", offset=0)
    tokens, body = _pgm_tokens(data, 4)
    header = []
    for text, offset in tokens[1:]:
        if not text.isdigit():
            raise FormatError(f"expected an unsigned integer in PGM header, got {text!r}", offset=offset)
        header.append(int(text))
    width, height, maxval = header
    if width < 1 or height < 1:
        raise FormatError(f"PGM dimensions must be positive, got {width}x{height}", offset=tokens[1][1])
    if not 1 <= maxval <= 65535:
        raise FormatError(f"PGM maxval must be in [1, 65535], got {maxval}", offset=tokens[3][1])

    if magic == "P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        expected = width * height * dtype.itemsize
        payload = data[body : body + expected]
        if len(payload) != expected:
            raise StructureError(f"PGM payload holds {len(payload)} bytes, expected {expected}")
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        fields = data[body:].split()
        if len(fields) != width * height:
            raise StructureError(f"PGM body holds {len(fields)} samples, expected {width * height}")
        try:
            values = np.array([int(f) for f in fields], dtype=np.float64)
        except ValueError:
            raise FormatError("non-integer sample in P2 body", offset=body) from None
    if values.size and values.max() > maxval:
        raise StructureError(f"PGM sample exceeds maxval {maxval}")
    return ScanGrid(values.reshape(height, width))


def _pgm_bytes(grid: ScanGrid, binary: bool, maxval: int | None) -> bytes:
    values = grid.values
    if not np.array_equal(values, np.rint(values)):
        raise DomainError("PGM stores integers only; round the grid first")
    top = int(values.max())
    if maxval is None:
        maxval = 255 if top <= 255 else 65535
    if top > maxval or maxval > 65535:
        raise DomainError(f"grid maximum {top} does not fit maxval {maxval}")
    header = f"{'P5' if binary else 'P2'}\n{grid.cols} {grid.rows}\n{maxval}\n".encode("ascii")
    ints = values.astype(np.int64)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + ints.astype(dtype).tobytes()
    lines = "\n".join(" ".join(str(v) for v in row) for row in ints)
    return header + lines.encode("ascii") + b"\n"


# ---------------------------------------------------------------------------
# CSV


def _parse_csv(data: bytes) -> ScanGrid:
    rows = []
    offset = 0
    for line in data.split(b"\n"):
        line_start = offset
        offset += len(line) + 1
        if not line.strip():
            continue
        row = []
        field_start = line_start
        for field in line.split(b","):
            try:
                row.append(float(field))
            except ValueError:
                raise FormatError(f"non-numeric CSV field {field!r}", offset=field_start) from None
            field_start += len(field) + 1
        if rows and len(row) != len(rows[0]):
            raise StructureError(f"CSV row {len(rows)} has {len(row)} fields, expected {len(rows[0])}")
        rows.append(row)
    if not rows:
        raise FormatError("empty CSV", offset=0)
    return ScanGrid(np.array(rows, dtype=np.float64))


def _csv_bytes(values: np.ndarray) -> bytes:
    lines = [",".join(repr(float(v)) for v in row) for row in values]
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# .smask container


def _smask_bytes(names, channels: np.ndarray, dtype: str) -> bytes:
    rows, cols = channels.shape[1:]
    header = {
        "magic": SMASK_MAGIC,
        "version": SMASK_VERSION,
        "rows": int(rows),
        "cols": int(cols),
        "channels": list(names),
        "dtype": dtype,
    }
    body = np.ascontiguousarray(channels, dtype=_SMASK_DTYPES[dtype]).tobytes()
    return json.dumps(header).encode("utf-8") + b"\n" + body


def _parse_smask(data: bytes):
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError("missing .smask header line", offset=0)
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed .smask header: {exc}", offset=getattr(exc, "pos", 0)) from None
    if not isinstance(header, dict) or header.get("magic") != SMASK_MAGIC:
        raise FormatError("not an .smask container (bad magic)", offset=0)
    if header.get("version") != SMASK_VERSION:
        raise FormatError(f"unsupported .smask version {header.get('version')!r}", offset=0)
    try:
        rows, cols = int(header["rows"]), int(header["cols"])
        names = [str(n) for n in header["channels"]]
        dtype = _SMASK_DTYPES[header.get("dtype", "<f4")]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"incomplete .smask header: {exc!r}", offset=0) from None
    if rows < 1 or cols < 1:
        raise StructureError(f".smask dimensions must be positive, got {rows}x{cols}")
    payload = data[newline + 1 :]
    expected = len(names) * rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise StructureError(
            f".smask payload holds {len(payload)} bytes, expected {expected} "
            f"for {len(names)} channels of {rows}x{cols}"
        )
    channels = np.frombuffer(payload, dtype=dtype).reshape(len(names), rows, cols)
    return names, channels.astype(dtype.newbyteorder("="))


# ---------------------------------------------------------------------------
# public I/O


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("pgm", "csv", "smask"):
        raise FormatError(f"unsupported format {fmt!r}")
    return fmt


def load_scan(path, format: str | None = None, channel: str | None = None) -> ScanGrid:
    """Read a single-channel grid.

    ``format`` is one of ``pgm``, ``csv`` or ``smask`` and defaults to the
    file extension. An ``.smask`` container must hold exactly one channel
    unless ``channel`` names the one to read.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    data = path.read_bytes()
    if fmt == "pgm":
        return _parse_pgm(data)
    if fmt == "csv":
        return _parse_csv(data)
    names, channels = _parse_smask(data)
    if channel is None:
        if len(names) != 1:
            raise StructureError(f"container holds {len(names)} channels; pass channel=")
        index = 0
    elif channel in names:
        index = names.index(channel)
    else:
        raise StructureError(f"channel {channel!r} not in container {names}")
    return ScanGrid(channels[index].astype(np.float64))


def save_scan(grid: ScanGrid, path, format: str | None = None, *, binary: bool = True, maxval: int | None = None):
    """Write a grid. PGM output requires integer values; ``.smask`` stores float64."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "pgm":
        data = _pgm_bytes(grid, binary, maxval)
    elif fmt == "csv":
        data = _csv_bytes(grid.values)
    else:
        data = _smask_bytes(["scan"], grid.values[None], "<f8")
    path.write_bytes(data)


def load_softmask(path) -> SoftMask:
    names, channels = _parse_smask(Path(path).read_bytes())
    if len(names) != len(CHANNEL_NAMES):
        raise StructureError(f"expected {len(CHANNEL_NAMES)} channels, got {len(names)}")
    if sorted(names) != sorted(CHANNEL_NAMES):
        raise StructureError(f"channel names {names} do not match {list(CHANNEL_NAMES)}")
    order = [names.index(n) for n in CHANNEL_NAMES]
    return SoftMask(channels[order])


def save_softmask(mask: SoftMask, path, dtype: str = "<f4"):
    """Write ``mask`` as an ``.smask`` container (float32 by default)."""
    channels = mask.channels
    if dtype == "<f4" and channels.dtype != np.float32:
        cast = channels.astype(np.float32)
        if not np.array_equal(cast.astype(channels.dtype), channels):
            raise DomainError("mask values are not float32-representable; save with dtype='<f8'")
        channels = cast
    Path(path).write_bytes(_smask_bytes(CHANNEL_NAMES, channels, dtype))


def write_ppm(rgb: np.ndarray, path):
    """Write an ``(rows, cols, 3)`` uint8 image as binary PPM (P6)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise StructureError("PPM output needs a (rows, cols, 3) uint8 array")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(rgb).tobytes())


# ---------------------------------------------------------------------------
# normalization


def trim_empty_rows(scan: ScanGrid, threshold: float = 0.0):
    """Drop leading and trailing rows whose maximum is ``<= threshold``.

    Returns the trimmed grid and ``(top, bottom)`` row counts removed.
    """
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    occupied = np.flatnonzero(scan.values.max(axis=1) > threshold)
    if occupied.size == 0:
        raise EmptyScanError(f"empty scan: no row exceeds intensity {threshold}")
    top, last = int(occupied[0]), int(occupied[-1])
    bottom = scan.rows - 1 - last
    if top == 0 and bottom == 0:
        return scan, (0, 0)
    return ScanGrid(scan.values[top : last + 1]), (top, bottom)


def normalize_height(scan: ScanGrid, trim_offsets=(0, 0)):
    """Resample a trimmed scan into the 416 x 128 canonical frame.

    The scan is scaled isotropically by ``416 / rows`` with bilinear
    interpolation (pixel-centre convention), then columns are centre-cropped
    or zero-padded to 128. ``trim_offsets`` is recorded in the frame so that
    coordinates can be mapped back to the untrimmed scan.
    """
    if scan.rows < 2 or scan.cols < 2:
        raise StructureError(f"cannot normalize a {scan.rows}x{scan.cols} scan; need at least 2x2")
    f = CANONICAL_ROWS / scan.rows
    scaled_cols = int(round(scan.cols * f))
    excess = scaled_cols - CANONICAL_COLS
    crop_left = excess // 2 if excess >= 0 else -((-excess) // 2)
    crop_right = excess - crop_left
    frame = CanonicalFrame(
        scale_factor=f,
        trim_top=int(trim_offsets[0]),
        trim_bottom=int(trim_offsets[1]),
        crop_left=crop_left,
        crop_right=crop_right,
    )
    if scan.rows == CANONICAL_ROWS and scan.cols == CANONICAL_COLS:
        return scan, frame

    out_rows = np.arange(CANONICAL_ROWS, dtype=np.float64)
    out_cols = np.arange(CANONICAL_COLS, dtype=np.float64)
    src_rows = np.clip((out_rows + 0.5) / f - 0.5, 0, scan.rows - 1)
    scaled = out_cols + crop_left
    inside = (scaled >= 0) & (scaled < scaled_cols)
    src_cols = np.clip((scaled + 0.5) / f - 0.5, 0, scan.cols - 1)
    rr, cc = np.meshgrid(src_rows, src_cols, indexing="ij")
    values = ndimage.map_coordinates(scan.values, [rr, cc], order=1, mode="nearest")
    values[:, ~inside] = 0.0
    return ScanGrid(np.maximum(values, 0.0)), frame

