"""Synthetic tampering: manipulation operators and labelled corpus generation.

Operators act on :class:`~coocnet.image_io.Image` and always return a valid
8-bit image (float intermediates are rounded half-up and clamped to
``[0, 255]``). Rectangles are ``[top, left, height, width]`` in pixels.

Every random choice is drawn from :func:`coocnet._rng.make_rng`, keyed by the
corpus seed and the output image index, so corpora are byte-reproducible and
independent of the thread count used to write them.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _rng
from .errors import DataError, ManipulationError
from .image_io import DatasetManifest, Image, ManifestEntry, load_image, save_image, write_manifest

KINDS = (
    "splice",
    "clone",
    "crop",
    "resize",
    "global_blur",
    "local_blur",
    "intensity_normalize",
    "intensity_change",
    "additive_noise",
)
MAX_SIGMA = 10.0
RESIZE_RANGE = (0.5, 2.0)
MAX_DELTA = 40
MAX_NOISE_STD = 64.0
MAX_ATTEMPTS = 16


@dataclass(frozen=True)
class ManipulationSpec:
    """One concrete tamper operation.

    ``params`` per kind:

    ============================  ==============================================
    splice                        ``src`` rect in the donor, ``dst`` [top, left]
    clone                         ``src`` rect, ``dst`` [top, left]
    crop                          ``rect`` to keep (strictly smaller than image)
    resize                        ``factor`` in [0.5, 2.0], not 1
    global_blur                   ``sigma`` in (0, 10]
    local_blur                    ``sigma`` and ``rect``
    intensity_normalize           none
    intensity_change              integer ``delta`` in [-40, 40]
    additive_noise                ``std`` in (0, 64]; draws use ``seed``
    ============================  ==============================================
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


def _round_clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="edge")
    n = arr.shape[axis]
    out = np.zeros(arr.shape, dtype=np.float64)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian, radius ``ceil(3 sigma)``, clamp-to-edge. Returns float64."""
    k = gaussian_kernel(sigma)
    return _convolve_axis(_convolve_axis(pixels.astype(np.float64), k, 0), k, 1)


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment. Returns float64."""
    h, w = pixels.shape[:2]

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = coords(out_h, h)
    x0, x1, wx = coords(out_w, w)
    p = pixels.astype(np.float64)
    wx = wx[None, :, None]
    top = p[y0][:, x0] * (1 - wx) + p[y0][:, x1] * wx
    bot = p[y1][:, x0] * (1 - wx) + p[y1][:, x1] * wx
    wy = wy[:, None, None]
    return top * (1 - wy) + bot * wy


def _rect(params, key, shape, name="rect"):
    try:
        top, left, h, w = (int(v) for v in params[key])
    except (KeyError, TypeError, ValueError):
        raise ManipulationError(f"{name} must be [top, left, height, width]") from None
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > shape[0] or left + w > shape[1]:
        raise ManipulationError(
            f"{name} {[top, left, h, w]} out of bounds for a {shape[0]}x{shape[1]} image"
        )
    return top, left, h, w


def _dst(params, size, shape):
    try:
        top, left = (int(v) for v in params["dst"])
    except (KeyError, TypeError, ValueError):
        raise ManipulationError("dst must be [top, left]") from None
    return _rect({"r": [top, left, *size]}, "r", shape, "destination rectangle")[:2]


def _number(params, key, lo, hi, lo_open=False):
    try:
        v = float(params[key])
    except (KeyError, TypeError, ValueError):
        raise ManipulationError(f"missing or non-numeric parameter {key!r}") from None
    if not (lo < v if lo_open else lo <= v) or v > hi or not math.isfinite(v):
        bracket = "(" if lo_open else "["
        raise ManipulationError(f"{key}={v} outside {bracket}{lo}, {hi}]")
    return v


def apply_manipulation(img: Image, spec: ManipulationSpec, donor: Optional[Image] = None) -> Image:
    kind, p = spec.kind, spec.params
    px = img.pixels
    shape = px.shape
    if kind not in KINDS:
        raise ManipulationError(f"unknown manipulation kind {kind!r}")
    if kind != "splice" and donor is not None:
        raise ManipulationError(f"{kind} does not take a donor image")

    if kind == "splice":
        if donor is None:
            raise ManipulationError("splice requires a donor image")
        if img.channels == 3:
            donor = donor.to_rgb()
        elif donor.channels != 1:
            raise ManipulationError("cannot splice an RGB donor into a gray image")
        t, l, h, w = _rect(p, "src", donor.pixels.shape, "source rectangle")
        dt, dl = _dst(p, (h, w), shape)
        out = px.copy()
        out[dt : dt + h, dl : dl + w] = donor.pixels[t : t + h, l : l + w]
        return Image(out)

    if kind == "clone":
        t, l, h, w = _rect(p, "src", shape, "source rectangle")
        dt, dl = _dst(p, (h, w), shape)
        if (dt, dl) == (t, l):
            raise ManipulationError("clone destination equals its source")
        out = px.copy()
        out[dt : dt + h, dl : dl + w] = px[t : t + h, l : l + w]
        return Image(out)

    if kind == "crop":
        t, l, h, w = _rect(p, "rect", shape)
        if (h, w) == shape[:2]:
            raise ManipulationError("crop rectangle covers the whole image")
        return Image(px[t : t + h, l : l + w])

    if kind == "resize":
        f = _number(p, "factor", *RESIZE_RANGE)
        if f == 1.0:
            raise ManipulationError("resize factor 1.0 is an identity")
        out_h = max(1, int(round(shape[0] * f)))
        out_w = max(1, int(round(shape[1] * f)))
        return Image(_round_clamp(bilinear_resize(px, out_h, out_w)))

    if kind == "global_blur":
        sigma = _number(p, "sigma", 0.0, MAX_SIGMA, lo_open=True)
        return Image(_round_clamp(gaussian_blur(px, sigma)))

    if kind == "local_blur":
        sigma = _number(p, "sigma", 0.0, MAX_SIGMA, lo_open=True)
        t, l, h, w = _rect(p, "rect", shape)
        blurred = _round_clamp(gaussian_blur(px, sigma))
        out = px.copy()
        out[t : t + h, l : l + w] = blurred[t : t + h, l : l + w]
        return Image(out)

    if kind == "intensity_normalize":
        x = px.astype(np.float64)
        lo = x.min(axis=(0, 1), keepdims=True)
        hi = x.max(axis=(0, 1), keepdims=True)
        span = np.where(hi > lo, hi - lo, 1.0)
        stretched = np.where(hi > lo, (x - lo) * 255.0 / span, x)
        return Image(_round_clamp(stretched))

    if kind == "intensity_change":
        delta = _number(p, "delta", -MAX_DELTA, MAX_DELTA)
        if delta != int(delta):
            raise ManipulationError("delta must be an integer")
        return Image(np.clip(px.astype(np.int64) + int(delta), 0, 255).astype(np.uint8))

    # additive_noise
    std = _number(p, "std", 0.0, MAX_NOISE_STD, lo_open=True)
    noise = _rng.make_rng(spec.seed).normal(0.0, std, size=shape)
    return Image(_round_clamp(px + noise))


# ---------------------------------------------------------------------------
# Recipes and parameter sampling
# ---------------------------------------------------------------------------

# sampling ranges used when a recipe leaves a parameter out
DEFAULT_RANGES = {
    "splice": {"size": [0.2, 0.5]},
    "clone": {"size": [0.2, 0.5]},
    "crop": {"keep": [0.5, 0.9]},
    "resize": {"factor": [0.6, 1.6]},
    "global_blur": {"sigma": [0.5, 2.0]},
    "local_blur": {"sigma": [0.5, 2.0], "size": [0.3, 0.6]},
    "intensity_normalize": {},
    "intensity_change": {"delta": [10, 40]},
    "additive_noise": {"std": [2.0, 8.0]},
}


@dataclass(frozen=True)
class RecipeItem:
    """``count`` images of ``kind`` with parameters drawn uniformly from ``ranges``.

    Range keys: ``size`` and ``keep`` are side-length fractions of the host
    image; ``delta`` is a magnitude range whose sign is drawn at random.
    """

    kind: str
    count: int
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManipulationError(f"unknown manipulation kind {self.kind!r}")
        if int(self.count) < 0:
            raise ManipulationError(f"count must be >= 0, got {self.count}")
        merged = dict(DEFAULT_RANGES[self.kind])
        for key, rng in (self.ranges or {}).items():
            if key not in merged:
                raise ManipulationError(f"{self.kind} has no parameter {key!r}")
            lo, hi = (float(v) for v in rng)
            if lo > hi:
                raise ManipulationError(f"{self.kind}.{key}: empty range [{lo}, {hi}]")
            merged[key] = [lo, hi]
        object.__setattr__(self, "ranges", merged)
        object.__setattr__(self, "count", int(self.count))


def parse_recipe(obj) -> list:
    items = obj.get("recipe", obj.get("manipulations")) if isinstance(obj, dict) else obj
    if not isinstance(items, list):
        raise ManipulationError("recipe must be a list of {kind, count, params} objects")
    try:
        return [RecipeItem(it["kind"], it.get("count", 0), it.get("params", {})) for it in items]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManipulationError(f"malformed recipe entry ({exc})") from None


def load_recipe(path) -> list:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read recipe {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManipulationError(f"{path}: invalid JSON ({exc})") from None
    return parse_recipe(obj)


def _random_rect(rng, shape, lo, hi):
    h = max(1, min(shape[0], int(round(shape[0] * rng.uniform(lo, hi)))))
    w = max(1, min(shape[1], int(round(shape[1] * rng.uniform(lo, hi)))))
    return [int(rng.integers(shape[0] - h + 1)), int(rng.integers(shape[1] - w + 1)), h, w]


def sample_spec(item: RecipeItem, rng, shape, donor_shape=None) -> ManipulationSpec:
    """Draw concrete parameters for ``item`` against an image of ``shape``."""
    r = item.ranges
    kind = item.kind
    if kind in ("splice", "clone"):
        src_shape = donor_shape if kind == "splice" else shape
        limit = (min(shape[0], src_shape[0]), min(shape[1], src_shape[1]))
        _, _, h, w = _random_rect(rng, limit, *r["size"])
        src = [int(rng.integers(src_shape[0] - h + 1)), int(rng.integers(src_shape[1] - w + 1)), h, w]
        dst = [int(rng.integers(shape[0] - h + 1)), int(rng.integers(shape[1] - w + 1))]
        params = {"src": src, "dst": dst}
    elif kind == "crop":
        params = {"rect": _random_rect(rng, shape, *r["keep"])}
    elif kind == "resize":
        params = {"factor": float(rng.uniform(*r["factor"]))}
    elif kind == "global_blur":
        params = {"sigma": float(rng.uniform(*r["sigma"]))}
    elif kind == "local_blur":
        params = {"sigma": float(rng.uniform(*r["sigma"])), "rect": _random_rect(rng, shape, *r["size"])}
    elif kind == "intensity_change":
        lo, hi = (int(round(v)) for v in r["delta"])
        params = {"delta": int(rng.integers(lo, hi + 1)) * int(rng.choice([-1, 1]))}
    elif kind == "additive_noise":
        params = {"std": float(rng.uniform(*r["std"]))}
    else:
        params = {}
    return ManipulationSpec(kind, params, int(rng.integers(2**63)))


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


def _tampered_job(j, item, sources, seed):
    n = len(sources)
    host_idx = j % n
    host = sources[host_idx]
    for attempt in range(MAX_ATTEMPTS):
        rng = _rng.make_rng(seed, _rng.SYNTH, j, attempt)
        donor = None
        if item.kind == "splice":
            donor_idx = (host_idx + 1 + int(rng.integers(n - 1))) % n if n > 1 else host_idx
            donor = sources[donor_idx]
        spec = sample_spec(item, rng, host.pixels.shape, donor.pixels.shape if donor else None)
        try:
            out = apply_manipulation(host, spec, donor)
        except ManipulationError:
            continue
        if out != host:
            return out, spec, host_idx
    raise ManipulationError(
        f"{item.kind} left source #{host_idx} unchanged after {MAX_ATTEMPTS} draws; "
        "widen the parameter range or use a different source"
    )


def generate_corpus(sources: DatasetManifest, recipe, out_dir, seed: int = 0, threads: int = 1) -> DatasetManifest:
    """Write untampered copies plus manipulated images, and their manifest.

    Layout under ``out_dir``: ``untampered/NNNNN.png``,
    ``tampered/NNNNN_<kind>.png``, ``manifest.jsonl`` (paths relative to
    ``out_dir``) and ``manipulations.jsonl`` with the exact operator
    parameters of every tampered image. Tampered image ``j`` uses source
    ``j mod len(sources)``.
    """
    if len(sources) == 0:
        raise DataError("no source images")
    if any(e.label != 0 for e in sources):
        raise DataError("source images must all be untampered")
    recipe = parse_recipe(recipe) if not all(isinstance(r, RecipeItem) for r in recipe) else list(recipe)
    out_dir = Path(out_dir)
    (out_dir / "untampered").mkdir(parents=True, exist_ok=True)
    (out_dir / "tampered").mkdir(parents=True, exist_ok=True)

    images = [load_image(sources.resolve(e)) for e in sources]
    entries = []
    for i, img in enumerate(images):
        rel = f"untampered/{i:05d}.png"
        save_image(img, out_dir / rel)
        entries.append(ManifestEntry(rel, 0, None, "train"))

    jobs = [item for item in recipe for _ in range(item.count)]

    def run(j):
        out, spec, src = _tampered_job(j, jobs[j], images, seed)
        rel = f"tampered/{j:05d}_{spec.kind}.png"
        save_image(out, out_dir / rel)
        return rel, spec, src

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(jobs))))
    else:
        results = [run(j) for j in range(len(jobs))]

    provenance = []
    for rel, spec, src in results:
        entries.append(ManifestEntry(rel, 1, spec.kind, "train"))
        provenance.append(json.dumps({"path": rel, "source": entries[src].path, **spec.to_dict()}))
    (out_dir / "manipulations.jsonl").write_text(
        "".join(line + "\n" for line in provenance), encoding="utf-8"
    )
    manifest = DatasetManifest(tuple(entries), out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


# ---------------------------------------------------------------------------
# Untampered source material
# ---------------------------------------------------------------------------


def make_source_image(rng, height: int = 64, width: int = 64, noise_std=(2.0, 2.0)) -> Image:
    """A procedural stand-in for a camera image.

    Smooth colour field plus a few flat-shaded rectangles, finished with
    Gaussian sensor noise whose standard deviation is drawn from
    ``noise_std``. The default pins it, mimicking one camera; widening the
    range makes tampering much harder to separate from natural variation.
    Intensities stay inside ``[8, 247]`` so contrast stretching is never an
    identity.
    """
    grid = rng.uniform(0.0, 1.0, size=(int(rng.integers(2, 7)), int(rng.integers(2, 7)), 3))
    field_ = bilinear_resize(grid, height, width)
    base = rng.uniform(50, 110) + rng.uniform(30, 90) * field_
    for _ in range(int(rng.integers(1, 5))):
        t, l, h, w = _random_rect(rng, (height, width), 0.15, 0.5)
        base[t : t + h, l : l + w] = rng.uniform(50, 200, size=3)
    base = gaussian_blur(base, float(rng.uniform(0.6, 1.2)))
    base += rng.normal(0.0, rng.uniform(*noise_std), size=base.shape)
    return Image(np.clip(np.floor(base + 0.5), 8, 247).astype(np.uint8))


def write_source_images(out_dir, n: int, seed: int = 0, size=(64, 64), noise_std=(2.0, 2.0)) -> DatasetManifest:
    """Generate ``n`` untampered source images and a manifest for them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        img = make_source_image(_rng.make_rng(seed, _rng.SOURCES, i), *size, noise_std=noise_std)
        rel = f"src_{i:05d}.png"
        save_image(img, out_dir / rel)
        entries.append(ManifestEntry(rel, 0, None, "train"))
    manifest = DatasetManifest(tuple(entries), out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
