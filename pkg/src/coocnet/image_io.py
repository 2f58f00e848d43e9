"""Image decoding/encoding and dataset manifests.

Images are held as ``uint8`` arrays of shape ``(height, width, channels)``,
channel-interleaved and row-major, with ``channels`` either 1 (gray) or 3
(RGB). Decoders understand PNG (bit depths 1/2/4/8, every color type,
Adam7 interlacing) and binary netpbm (P5 gray, P6 RGB, maxval <= 255).
Alpha channels are dropped; 16-bit inputs are rejected.

Decoding is written on top of :mod:`zlib` instead of delegating to Pillow
because the error contract matters here: a truncated stream must be reported
as corrupt, and 16-bit data must be refused rather than silently reduced.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import _rng
from .errors import (
    CorruptImageError,
    ImageReadError,
    ManifestError,
    UnsupportedFormatError,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Image:
    """An 8-bit raster, ``pixels[row, column, channel]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got {px.shape[:2]}")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
                raise ValueError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, order="C", copy=True)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major, channel-interleaved view of the raster."""
        return self.pixels.reshape(-1)

    def to_rgb(self) -> "Image":
        if self.channels == 3:
            return self
        return Image(np.repeat(self.pixels, 3, axis=2))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __repr__(self):
        return f"Image(w={self.width}, h={self.height}, ch={self.channels})"


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def load_image(path) -> Image:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return decode_image(raw)
    except (CorruptImageError, UnsupportedFormatError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


def decode_image(raw: bytes) -> Image:
    if raw.startswith(PNG_SIGNATURE):
        return decode_png(raw)
    if raw[:2] in (b"P5", b"P6"):
        return decode_pnm(raw)
    if raw[:2] in (b"P1", b"P2", b"P3", b"P4", b"P7"):
        raise UnsupportedFormatError(f"netpbm variant {raw[:2].decode()} is not supported")
    if len(raw) < len(PNG_SIGNATURE) and PNG_SIGNATURE.startswith(raw) and raw:
        raise CorruptImageError("truncated PNG signature")
    raise UnsupportedFormatError("unrecognised image format")


def _pnm_token(raw: bytes, pos: int):
    n = len(raw)
    while pos < n:
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CorruptImageError("truncated netpbm header")
    return raw[start:pos], pos


def decode_pnm(raw: bytes) -> Image:
    magic = raw[:2]
    pos = 2
    values = []
    for _ in range(3):
        tok, pos = _pnm_token(raw, pos)
        if not tok.isdigit():
            raise CorruptImageError(f"bad netpbm header field {tok!r}")
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise CorruptImageError(f"invalid netpbm dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise CorruptImageError(f"invalid netpbm maxval {maxval}")
    if maxval > 255:
        raise UnsupportedFormatError("16-bit netpbm images are not supported")
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise CorruptImageError("missing separator after netpbm header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    body = raw[pos : pos + size]
    if len(body) < size:
        raise CorruptImageError(f"netpbm raster truncated: {len(body)} of {size} bytes")
    px = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    if maxval < 255 and px.max() > maxval:
        raise CorruptImageError("netpbm sample exceeds maxval")
    return Image(px)


_CHANNELS_BY_COLOR_TYPE = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}
_ALLOWED_DEPTHS = {0: (1, 2, 4, 8, 16), 2: (8, 16), 3: (1, 2, 4, 8), 4: (8, 16), 6: (8, 16)}
# (row start, column start, row step, column step)
_ADAM7 = (
    (0, 0, 8, 8),
    (0, 4, 8, 8),
    (4, 0, 8, 4),
    (0, 2, 4, 4),
    (2, 0, 4, 2),
    (0, 1, 2, 2),
    (1, 0, 2, 1),
)


def _png_chunks(raw: bytes) -> Iterator[tuple]:
    pos = len(PNG_SIGNATURE)
    n = len(raw)
    while True:
        if pos + 8 > n:
            raise CorruptImageError("PNG stream ends before IEND")
        length, ctype = struct.unpack(">I4s", raw[pos : pos + 8])
        end = pos + 8 + length
        if end + 4 > n:
            raise CorruptImageError(f"PNG chunk {ctype!r} truncated")
        body = raw[pos + 8 : end]
        (crc,) = struct.unpack(">I", raw[end : end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise CorruptImageError(f"CRC mismatch in PNG chunk {ctype!r}")
        yield ctype, body
        if ctype == b"IEND":
            return
        pos = end + 4


def _paeth_row(cur: bytearray, prev: bytes, bpp: int) -> None:
    for i in range(len(cur)):
        a = cur[i - bpp] if i >= bpp else 0
        b = prev[i]
        c = prev[i - bpp] if i >= bpp else 0
        p = a + b - c
        pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
        if pa <= pb and pa <= pc:
            pred = a
        elif pb <= pc:
            pred = b
        else:
            pred = c
        cur[i] = (cur[i] + pred) & 0xFF


def _average_row(cur: bytearray, prev: bytes, bpp: int) -> None:
    for i in range(len(cur)):
        a = cur[i - bpp] if i >= bpp else 0
        cur[i] = (cur[i] + ((a + prev[i]) >> 1)) & 0xFF


def _unfilter(data: bytes, rows: int, stride: int, bpp: int) -> np.ndarray:
    if len(data) < rows * (stride + 1):
        raise CorruptImageError("PNG image data truncated")
    out = np.zeros((rows, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for r in range(rows):
        ftype = data[pos]
        line = np.frombuffer(data, dtype=np.uint8, count=stride, offset=pos + 1)
        pos += stride + 1
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            if stride % bpp:
                raise CorruptImageError("scanline length not a multiple of pixel size")
            cur = np.cumsum(line.reshape(-1, bpp), axis=0, dtype=np.uint8).reshape(-1)
        elif ftype == 2:
            cur = line + prev
        elif ftype in (3, 4):
            buf = bytearray(line.tobytes())
            (_average_row if ftype == 3 else _paeth_row)(buf, prev.tobytes(), bpp)
            cur = np.frombuffer(bytes(buf), dtype=np.uint8)
        else:
            raise CorruptImageError(f"invalid PNG filter type {ftype}")
        out[r] = cur
        prev = out[r]
    return out


def _unpack_samples(rows: np.ndarray, width: int, samples: int, depth: int) -> np.ndarray:
    if depth == 8:
        return rows[:, : width * samples].reshape(rows.shape[0], width, samples)
    bits = np.unpackbits(rows, axis=1)
    bits = bits[:, : width * depth].reshape(rows.shape[0], width, depth)
    weights = (1 << np.arange(depth - 1, -1, -1)).astype(np.uint8)
    return (bits * weights).sum(axis=2, dtype=np.uint8)[:, :, None]


def decode_png(raw: bytes) -> Image:
    header = None
    palette = None
    idat = []
    for ctype, body in _png_chunks(raw):
        if ctype == b"IHDR":
            if len(body) != 13:
                raise CorruptImageError("malformed IHDR")
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            if len(body) % 3:
                raise CorruptImageError("malformed PLTE")
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.append(body)
    if header is None:
        raise CorruptImageError("PNG has no IHDR chunk")
    width, height, depth, color, compression, filt, interlace = header
    if width < 1 or height < 1:
        raise CorruptImageError(f"invalid PNG dimensions {width}x{height}")
    if color not in _CHANNELS_BY_COLOR_TYPE or depth not in _ALLOWED_DEPTHS[color]:
        raise CorruptImageError(f"invalid PNG color type/bit depth {color}/{depth}")
    if compression != 0 or filt != 0 or interlace not in (0, 1):
        raise CorruptImageError("invalid PNG compression/filter/interlace method")
    if depth == 16:
        raise UnsupportedFormatError("16-bit PNG images are not supported")
    if color == 3 and palette is None:
        raise CorruptImageError("palette PNG without PLTE chunk")
    if not idat:
        raise CorruptImageError("PNG has no IDAT data")
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise CorruptImageError(f"PNG image data does not inflate: {exc}") from None

    samples = _CHANNELS_BY_COLOR_TYPE[color]
    bpp = max(1, samples * depth // 8)

    def decode_pass(w, h, offset):
        stride = (w * samples * depth + 7) // 8
        rows = _unfilter(data[offset:], h, stride, bpp)
        return _unpack_samples(rows, w, samples, depth), offset + h * (stride + 1)

    if interlace == 0:
        px, _ = decode_pass(width, height, 0)
    else:
        px = np.zeros((height, width, samples), dtype=np.uint8)
        offset = 0
        for r0, c0, dr, dc in _ADAM7:
            h = (height - r0 + dr - 1) // dr if height > r0 else 0
            w = (width - c0 + dc - 1) // dc if width > c0 else 0
            if h == 0 or w == 0:
                continue
            sub, offset = decode_pass(w, h, offset)
            px[r0::dr, c0::dc] = sub

    if color == 3:
        idx = px[:, :, 0]
        if idx.max() >= len(palette):
            raise CorruptImageError("palette index out of range")
        px = palette[idx]
    elif color == 0 and depth < 8:
        px = px * np.uint8(255 // ((1 << depth) - 1))
    elif color in (4, 6):
        px = px[:, :, : samples - 1]
    return Image(px)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _chunk(ctype: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(ctype + body) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", crc)


def encode_png(img: Image) -> bytes:
    """Non-interlaced 8-bit PNG, every scanline with the Up filter."""
    px = img.pixels
    rows = px.reshape(img.height, -1)
    up = rows.copy()
    up[1:] = rows[1:] - rows[:-1]
    scan = np.concatenate([np.full((img.height, 1), 2, dtype=np.uint8), up], axis=1)
    color = 0 if img.channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, color, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(scan.tobytes(), 6))
        + _chunk(b"IEND", b"")
    )


def encode_pnm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    return magic + b"\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def save_image(img: Image, path) -> Path:
    """Write ``img``; the format follows the extension (.png, .ppm, .pgm, .pnm)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".png":
        raw = encode_png(img)
    elif ext in (".ppm", ".pgm", ".pnm"):
        if ext == ".ppm" and img.channels != 3 or ext == ".pgm" and img.channels != 1:
            raise UnsupportedFormatError(f"{ext} cannot hold a {img.channels}-channel image")
        raw = encode_pnm(img)
    else:
        raise UnsupportedFormatError(f"no encoder for extension {ext!r}")
    path.write_bytes(raw)
    return path


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    manipulation_type: Optional[str] = None
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps(
            {
                "path": self.path,
                "label": self.label,
                "manipulation_type": self.manipulation_type,
                "split": self.split,
            }
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable list of labelled images.

    Relative entry paths are resolved against ``root`` (the directory that
    holds the manifest file when it was read from disk).
    """

    entries: tuple
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.path in seen:
                raise ManifestError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)
            if e.label not in (0, 1):
                raise ManifestError(f"{e.path}: label must be 0 or 1, got {e.label!r}")
            if (e.manipulation_type is not None) != (e.label == 1):
                raise ManifestError(
                    f"{e.path}: manipulation_type must be set exactly when label == 1"
                )
            if e.split not in SPLITS:
                raise ManifestError(f"{e.path}: unknown split {e.split!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if self.root is not None and not p.is_absolute():
            return self.root / p
        return p

    def subset(self, *splits: str) -> "DatasetManifest":
        return DatasetManifest(tuple(e for e in self.entries if e.split in splits), self.root)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entries.append(
                ManifestEntry(
                    path=str(obj["path"]),
                    label=int(obj["label"]),
                    manipulation_type=obj.get("manipulation_type"),
                    split=obj.get("split", "train"),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: bad manifest line ({exc})") from None
    return DatasetManifest(tuple(entries), root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.write_text("".join(e.to_json() + "\n" for e in manifest.entries), encoding="utf-8")
    return path


def split_manifest(manifest: DatasetManifest, train_fraction: float = 0.9, seed: int = 0) -> DatasetManifest:
    """Stratified train/val assignment.

    The train total is ``round(train_fraction * n)``; it is shared between the
    classes by largest remainder, so each class gets within one entry of
    ``train_total * n_class / n``.
    """
    if len(manifest) == 0:
        raise ManifestError("cannot split an empty manifest")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = manifest.labels
    classes = [np.flatnonzero(labels == c) for c in (0, 1)]
    n_train = int(round(train_fraction * len(labels)))
    exact = [n_train * len(idx) / len(labels) for idx in classes]
    quota = [int(np.floor(x)) for x in exact]
    # leftover slots go to the class with the larger fractional part (class 0 on ties)
    for c in sorted((0, 1), key=lambda c: -(exact[c] - quota[c])):
        if sum(quota) < n_train and quota[c] < len(classes[c]):
            quota[c] += 1

    splits = ["val"] * len(labels)
    for c, idx in enumerate(classes):
        rng = _rng.make_rng(seed, _rng.SPLIT, c)
        for i in rng.permutation(idx)[: quota[c]]:
            splits[i] = "train"
    entries = tuple(
        ManifestEntry(e.path, e.label, e.manipulation_type, s)
        for e, s in zip(manifest.entries, splits)
    )
    return DatasetManifest(entries, manifest.root)


def manifest_from_paths(paths: Iterable, label: int = 0, tags: Optional[Sequence] = None,
                        root=None) -> DatasetManifest:
    paths = [str(p) for p in paths]
    tags = list(tags) if tags is not None else [None] * len(paths)
    return DatasetManifest(
        tuple(ManifestEntry(p, label, t) for p, t in zip(paths, tags)),
        Path(root) if root is not None else None,
    )
