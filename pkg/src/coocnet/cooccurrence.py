"""Pixel co-occurrence matrices and the stacked classifier input.

For a channel ``I`` of shape ``(H, W)`` the horizontal matrix counts ordered
pairs ``(I[m, n], I[m, n + 1])`` and the vertical matrix counts
``(I[m, n], I[m + 1, n])``. Row index = first value of the pair, column
index = second value. Pairs are not symmetrised.

With ``bins < 256`` values are quantised as ``q(v) = v * bins // 256``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError, TensorFileError
from .image_io import Image

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
DIRECTIONS = (HORIZONTAL, VERTICAL)

RAW_COUNTS = "raw_counts"
SUM_TO_ONE = "per_plane_sum_to_one"
NORMALIZATIONS = (RAW_COUNTS, SUM_TO_ONE)

PLANE_NAMES = ("R-h", "G-h", "B-h", "R-v", "G-v", "B-v")
# plane indices fed to the network for each direction mode
DIRECTION_PLANES = {
    "horizontal_only": (0, 1, 2),
    "vertical_only": (3, 4, 5),
    "both": (0, 1, 2, 3, 4, 5),
}


def check_bins(bins: int) -> int:
    bins = int(bins)
    if bins < 1 or bins > 256 or 256 % bins:
        raise ValueError(f"bins must divide 256, got {bins}")
    return bins


def quantize(values: np.ndarray, bins: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    if bins == 256:
        return v
    return (v * bins) >> 8


def cooccurrence(channel, direction: str = HORIZONTAL, bins: int = 256) -> np.ndarray:
    """Count ordered neighbour pairs of one channel.

    Returns an ``int64`` array of shape ``(bins, bins)``. Its total is
    ``H * (W - 1)`` for horizontal pairs and ``(H - 1) * W`` for vertical ones.
    """
    ch = np.asarray(channel)
    if ch.ndim != 2 or ch.size == 0:
        raise ShapeMismatchError(f"expected a non-empty 2-D channel, got shape {ch.shape}")
    bins = check_bins(bins)
    q = quantize(ch, bins)
    if direction == HORIZONTAL:
        first, second = q[:, :-1], q[:, 1:]
    elif direction == VERTICAL:
        first, second = q[:-1, :], q[1:, :]
    else:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    flat = (first * bins + second).ravel()
    return np.bincount(flat, minlength=bins * bins).astype(np.int64).reshape(bins, bins)


def cooccurrence_counts(img: Image, bins: int = 256) -> np.ndarray:
    """The six raw count planes, ``int64`` of shape ``(6, bins, bins)``.

    Gray images are replicated to three channels first.
    """
    px = img.to_rgb().pixels
    planes = [cooccurrence(px[:, :, c], d, bins) for d in DIRECTIONS for c in range(3)]
    return np.stack(planes)


def normalize_planes(counts: np.ndarray, normalization: str = SUM_TO_ONE) -> np.ndarray:
    if normalization == RAW_COUNTS:
        return counts.astype(np.float64)
    if normalization != SUM_TO_ONE:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    totals = counts.sum(axis=(1, 2), keepdims=True)
    out = np.zeros(counts.shape, dtype=np.float64)
    np.divide(counts, totals, out=out, where=totals > 0)
    return out


@dataclass(frozen=True, eq=False)
class CooccurrenceTensor:
    """Stacked planes ordered as :data:`PLANE_NAMES` (or a subset of them)."""

    planes: np.ndarray
    bins: int
    normalization: str

    def __post_init__(self):
        if self.planes.ndim != 3 or self.planes.shape[1:] != (self.bins, self.bins):
            raise ShapeMismatchError(
                f"planes of shape {self.planes.shape} do not match bins={self.bins}"
            )
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def n_planes(self) -> int:
        return self.planes.shape[0]

    def select(self, direction_mode: str) -> "CooccurrenceTensor":
        if self.n_planes != 6:
            raise ShapeMismatchError("plane selection needs the full 6-plane tensor")
        idx = list(DIRECTION_PLANES[direction_mode])
        return CooccurrenceTensor(self.planes[idx], self.bins, self.normalization)


def extract_tensor(img: Image, bins: int = 256, normalization: str = SUM_TO_ONE) -> CooccurrenceTensor:
    counts = cooccurrence_counts(img, bins)
    return CooccurrenceTensor(normalize_planes(counts, normalization), check_bins(bins), normalization)


def network_input(tensor: CooccurrenceTensor, direction_mode: str = "both", dtype=np.float64) -> np.ndarray:
    """Planes as the network sees them: selected, then rounded through float32.

    The float32 rounding matches what the on-disk cache stores, so features
    computed straight from an image and features read back from a cache file
    are bit-identical.
    """
    if tensor.n_planes == 6:
        tensor = tensor.select(direction_mode)
    elif tensor.n_planes != len(DIRECTION_PLANES[direction_mode]):
        raise ShapeMismatchError(
            f"{tensor.n_planes}-plane tensor cannot feed direction mode {direction_mode!r}"
        )
    return tensor.planes.astype(np.float32).astype(dtype)


# ---------------------------------------------------------------------------
# Tensor files
#
# Single tensor:  "COOC" | u16 version | u16 bins | u16 planes | u8 norm
#                 | planes*bins*bins float32, plane-major then row-major.
# Packed batch:   "COOP" | u16 version | u16 bins | u16 planes | u8 norm
#                 | u32 count | count * (u16 len, utf-8 id) | count tensors.
# All integers and floats little-endian.
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"COOC"
PACK_MAGIC = b"COOP"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sHHHB")
_NORM_CODES = {RAW_COUNTS: 0, SUM_TO_ONE: 1}
_NORM_NAMES = {v: k for k, v in _NORM_CODES.items()}


def _header(magic, bins, planes, normalization):
    return _HEADER.pack(magic, TENSOR_VERSION, bins, planes, _NORM_CODES[normalization])


def _parse_header(raw: bytes, magic: bytes, where):
    if len(raw) < _HEADER.size:
        raise TensorFileError(f"{where}: file too short for a tensor header")
    got, version, bins, planes, norm = _HEADER.unpack_from(raw)
    if got != magic:
        raise TensorFileError(f"{where}: bad magic {got!r}, expected {magic!r}")
    if version != TENSOR_VERSION:
        raise TensorFileError(f"{where}: unsupported tensor file version {version}")
    if norm not in _NORM_NAMES:
        raise TensorFileError(f"{where}: unknown normalization code {norm}")
    return bins, planes, _NORM_NAMES[norm]


def tensor_to_bytes(tensor: CooccurrenceTensor) -> bytes:
    body = np.ascontiguousarray(tensor.planes, dtype="<f4").tobytes()
    return _header(TENSOR_MAGIC, tensor.bins, tensor.n_planes, tensor.normalization) + body


def tensor_from_bytes(raw: bytes, where="<bytes>") -> CooccurrenceTensor:
    bins, planes, norm = _parse_header(raw, TENSOR_MAGIC, where)
    n = planes * bins * bins
    expected = _HEADER.size + 4 * n
    if len(raw) != expected:
        raise TensorFileError(f"{where}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size)
    return CooccurrenceTensor(arr.reshape(planes, bins, bins).astype(np.float32), bins, norm)


def save_tensor(tensor: CooccurrenceTensor, path) -> Path:
    path = Path(path)
    path.write_bytes(tensor_to_bytes(tensor))
    return path


def load_tensor(path) -> CooccurrenceTensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TensorFileError(f"cannot read tensor file {path}: {exc.strerror or exc}") from exc
    return tensor_from_bytes(raw, path)


def save_packed(tensors: Sequence[CooccurrenceTensor], ids: Sequence[str], path) -> Path:
    if len(tensors) != len(ids) or not tensors:
        raise ValueError("need one id per tensor and at least one tensor")
    first = tensors[0]
    parts = [_header(PACK_MAGIC, first.bins, first.n_planes, first.normalization),
             struct.pack("<I", len(tensors))]
    for i in ids:
        b = str(i).encode("utf-8")
        parts.append(struct.pack("<H", len(b)) + b)
    for t in tensors:
        if (t.bins, t.n_planes, t.normalization) != (first.bins, first.n_planes, first.normalization):
            raise ShapeMismatchError("packed tensors must share bins, plane count and normalization")
        parts.append(np.ascontiguousarray(t.planes, dtype="<f4").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def load_packed(path):
    """Return ``(ids, tensors)`` from a packed file."""
    path = Path(path)
    raw = path.read_bytes()
    bins, planes, norm = _parse_header(raw, PACK_MAGIC, path)
    pos = _HEADER.size
    try:
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        ids = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", raw, pos)
            ids.append(raw[pos + 2 : pos + 2 + n].decode("utf-8"))
            pos += 2 + n
    except (struct.error, UnicodeDecodeError) as exc:
        raise TensorFileError(f"{path}: corrupt index ({exc})") from None
    n = planes * bins * bins
    if len(raw) != pos + 4 * n * count:
        raise TensorFileError(f"{path}: payload size does not match index")
    arr = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(count, planes, bins, bins)
    return ids, [CooccurrenceTensor(a.astype(np.float32), bins, norm) for a in arr]
