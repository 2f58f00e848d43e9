"""Feature caching, the training loop with best-epoch selection, and prediction."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _rng
from .cooccurrence import (
    DIRECTION_PLANES,
    SUM_TO_ONE,
    CooccurrenceTensor,
    check_bins,
    extract_tensor,
    load_tensor,
    network_input,
    save_tensor,
)
from .errors import DataError, DivergenceError, TensorFileError
from .evaluation import ScoredSet
from .image_io import DatasetManifest, Image, decode_image, load_image
from .nn import AdamState, Model, adam_step, cross_entropy, flat_gradients, forward, loss_and_gradients, predict_proba
from .nn.checkpoint import save_checkpoint
from .nn.model import reference_model

log = logging.getLogger(__name__)

DIRECTION_MODES = tuple(DIRECTION_PLANES)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    direction_mode: str = "both"
    bins: int = 256
    normalization: str = SUM_TO_ONE
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float64"
    checkpoint_path: Optional[str] = None
    cache_dir: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.direction_mode not in DIRECTION_MODES:
            raise ValueError(f"direction_mode must be one of {DIRECTION_MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        check_bins(self.bins)

    @property
    def planes(self) -> int:
        return len(DIRECTION_PLANES[self.direction_mode])

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """Epoch number (1-based) with the lowest validation loss, earliest on ties."""
        if not self.records:
            raise ValueError("empty training log")
        best = min(range(len(self.records)), key=lambda i: (self.records[i].val_loss, i))
        return self.records[best].epoch

    def record(self, epoch: int) -> EpochRecord:
        return self.records[epoch - 1]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy), repr(r.val_loss), repr(r.val_accuracy)])
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                float(r["val_loss"]), float(r["val_acc"])) for r in rows])


# ---------------------------------------------------------------------------
# Feature cache
# ---------------------------------------------------------------------------

_NORM_TAG = {"raw_counts": "raw", "per_plane_sum_to_one": "sum1"}
_DIR_TAG = {"both": "hv", "horizontal_only": "h", "vertical_only": "v"}


def tensor_filename(image_bytes: bytes, bins: int, normalization: str, direction_mode: str = "both") -> str:
    """Content-addressed cache name: SHA-256 prefix of the encoded image plus settings."""
    digest = hashlib.sha256(image_bytes).hexdigest()[:20]
    return f"{digest}_b{bins}_{_NORM_TAG[normalization]}_{_DIR_TAG[direction_mode]}.cooc"


def _tensor_for(raw: bytes, bins, normalization, direction_mode, where) -> CooccurrenceTensor:
    try:
        img = decode_image(raw)
    except DataError as exc:
        raise type(exc)(f"{where}: {exc}") from None
    t = extract_tensor(img, bins, normalization)
    return t if direction_mode == "both" else t.select(direction_mode)


def extract_to_cache(manifest: DatasetManifest, cache_dir, bins: int = 256, normalization: str = SUM_TO_ONE,
                     direction_mode: str = "both", threads: int = 1, progress=None) -> list:
    """Make sure every manifest image has a tensor file in ``cache_dir``.

    Existing files are reused after a header check. Also writes
    ``index.jsonl`` mapping each manifest path to its tensor file. Returns the
    tensor paths in manifest order.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    want_planes = len(DIRECTION_PLANES[direction_mode])

    def one(k):
        entry = manifest.entries[k]
        src = manifest.resolve(entry)
        try:
            raw = src.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read image {src}: {exc.strerror or exc}") from exc
        out = cache_dir / tensor_filename(raw, bins, normalization, direction_mode)
        if out.exists():
            t = load_tensor(out)
            if (t.bins, t.n_planes, t.normalization) != (bins, want_planes, normalization):
                raise TensorFileError(f"{out}: cached tensor does not match requested settings")
        else:
            tmp = out.with_name(out.name + f".{k}.tmp")
            save_tensor(_tensor_for(raw, bins, normalization, direction_mode, src), tmp)
            tmp.replace(out)
        if progress is not None:
            progress(k, entry)
        return out

    idx = range(len(manifest))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(one, idx))
    else:
        paths = [one(k) for k in idx]
    (cache_dir / "index.jsonl").write_text(
        "".join(json.dumps({"path": e.path, "tensor": p.name}) + "\n" for e, p in zip(manifest, paths)),
        encoding="utf-8",
    )
    return paths


def load_features(manifest: DatasetManifest, bins: int, normalization: str, direction_mode: str,
                  dtype=np.float64, cache_dir=None, threads: int = 1) -> np.ndarray:
    """Network inputs for every manifest entry, ``(n, planes, bins, bins)``."""
    if cache_dir is not None:
        paths = extract_to_cache(manifest, cache_dir, bins, normalization, "both", threads)
        tensors = [load_tensor(p) for p in paths]
    else:
        def one(e):
            src = manifest.resolve(e)
            try:
                raw = src.read_bytes()
            except OSError as exc:
                raise DataError(f"cannot read image {src}: {exc.strerror or exc}") from exc
            return _tensor_for(raw, bins, normalization, "both", src)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                tensors = list(pool.map(one, manifest.entries))
        else:
            tensors = [one(e) for e in manifest.entries]
    if not tensors:
        return np.zeros((0, len(DIRECTION_PLANES[direction_mode]), bins, bins), dtype=dtype)
    return np.stack([network_input(t, direction_mode, dtype) for t in tensors])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, chunk: int = 64):
    """Mean cross-entropy and accuracy over a whole set, in fixed chunks."""
    total, correct = 0.0, 0
    for i in range(0, len(x), chunk):
        logits = forward(model, x[i : i + chunk])
        loss, _ = cross_entropy(logits, y[i : i + chunk])
        total += loss * len(logits)
        correct += int((logits.argmax(axis=1) == y[i : i + chunk]).sum())
    return total / len(x), correct / len(x)


def _check_split(name, labels):
    if len(labels) == 0 or len(set(labels.tolist())) < 2:
        raise DataError(f"{name} split must contain both untampered and tampered images")


def train(manifest: DatasetManifest, config: TrainConfig):
    """Train the reference network and return ``(best_model, log)``.

    The returned model carries the parameters from the epoch with the lowest
    validation loss; if ``config.checkpoint_path`` is set, that model is also
    what the checkpoint file holds when training ends.
    """
    train_m, val_m = manifest.subset("train"), manifest.subset("val")
    y_tr, y_val = train_m.labels, val_m.labels
    _check_split("train", y_tr)
    _check_split("val", y_val)
    dtype = np.dtype(config.dtype)

    log.info("extracting %d train / %d val tensors (bins=%d)", len(train_m), len(val_m), config.bins)
    feats = dict(bins=config.bins, normalization=config.normalization, direction_mode=config.direction_mode,
                 dtype=dtype, cache_dir=config.cache_dir, threads=config.threads)
    x_tr = load_features(train_m, **feats)
    x_val = load_features(val_m, **feats)

    model = reference_model(config.planes, config.bins, seed=config.seed, dtype=dtype,
                            direction_mode=config.direction_mode, normalization=config.normalization)
    params = model.parameters()
    state = AdamState.for_params(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    train_log = TrainLog()
    best, best_loss = None, np.inf
    for epoch in range(1, config.epochs + 1):
        order = _rng.make_rng(config.seed, _rng.SHUFFLE, epoch).permutation(len(x_tr))
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads, logits = loss_and_gradients(model, x_tr[idx], y_tr[idx], return_logits=True)
                adam_step(params, flat_gradients(model, grads), state)
            except DivergenceError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, batch {b}: {exc}") from None
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y_tr[idx]).sum())
        val_loss, val_acc = evaluate_loss(model, x_val, y_val)
        rec = EpochRecord(epoch, loss_sum / len(x_tr), correct / len(x_tr), val_loss, val_acc)
        train_log.records.append(rec)
        log.info("epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 epoch, rec.train_loss, rec.train_accuracy, val_loss, val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best = model.copy()
            best.metadata["epoch"] = epoch
            if config.checkpoint_path:
                save_checkpoint(best, config.checkpoint_path)
    return best, train_log


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _model_settings(model: Model):
    md = model.metadata
    return (int(md.get("bins", model.input_shape[1])), md.get("normalization", SUM_TO_ONE),
            md.get("direction_mode", "both"))


def predict(model: Model, img: Image) -> float:
    """Probability that ``img`` is tampered, using the model's own extraction settings."""
    bins, norm, mode = _model_settings(model)
    x = network_input(extract_tensor(img, bins, norm), mode, model.dtype)
    return float(predict_proba(model, x[None])[0])


def predict_path(model: Model, path) -> float:
    return predict(model, load_image(path))


def score_manifest(model: Model, manifest: DatasetManifest, cache_dir=None, threads: int = 1) -> ScoredSet:
    """Score every manifest entry; ids are the manifest paths."""
    bins, norm, mode = _model_settings(model)
    x = load_features(manifest, bins, norm, mode, model.dtype, cache_dir, threads)
    scores = predict_proba(model, x)
    return ScoredSet(
        tuple(e.path for e in manifest),
        manifest.labels,
        scores,
        tuple(e.manipulation_type for e in manifest),
    )
