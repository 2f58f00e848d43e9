"""ROC/AUC scoring, per-manipulation breakdowns and score fusion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError

CSV_HEADER = ["id", "label", "score", "manipulation_type"]


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Labelled detector scores, one row per image."""

    ids: tuple
    labels: np.ndarray
    scores: np.ndarray
    tags: tuple = ()

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        labels = np.asarray(self.labels, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        tags = tuple(self.tags) if len(self.tags) else (None,) * len(ids)
        if not ids:
            raise EvaluationError("a scored set needs at least one item")
        if not (len(ids) == len(labels) == len(scores) == len(tags)):
            raise EvaluationError("ids, labels, scores and tags differ in length")
        if len(set(ids)) != len(ids):
            raise EvaluationError("duplicate ids in scored set")
        if not np.isin(labels, (0, 1)).all():
            raise EvaluationError("labels must be 0 or 1")
        if not np.isfinite(scores).all() or scores.min() < 0.0 or scores.max() > 1.0:
            raise EvaluationError("scores must be finite and within [0, 1]")
        for name, val in (("ids", ids), ("labels", labels), ("scores", scores), ("tags", tags)):
            if isinstance(val, np.ndarray):
                val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def from_items(cls, items):
        items = list(items)
        if not items:
            raise EvaluationError("a scored set needs at least one item")
        cols = list(zip(*[tuple(it) + (None,) * (4 - len(it)) for it in items]))
        return cls(cols[0], cols[1], cols[2], cols[3])

    def __len__(self):
        return len(self.ids)

    def items(self):
        return list(zip(self.ids, self.labels.tolist(), self.scores.tolist(), self.tags))

    def as_dict(self):
        return {i: (l, s, t) for i, l, s, t in self.items()}


def write_scores(scored: ScoredSet, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, label, score, tag in scored.items():
            w.writerow([i, label, repr(float(score)), tag or ""])
    return path


def read_scores(path) -> ScoredSet:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise EvaluationError(f"cannot read scores {path}: {exc.strerror or exc}") from exc
    if not rows or [h.strip() for h in rows[0]] != CSV_HEADER:
        raise EvaluationError(f"{path}: expected header {','.join(CSV_HEADER)}")
    items = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            i, label, score, tag = row
            items.append((i, int(label), float(score), tag or None))
        except ValueError:
            raise EvaluationError(f"{path}:{lineno}: malformed row {row!r}") from None
    return ScoredSet.from_items(items)


def _split_classes(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(f"AUC needs both classes (got {n_pos} tampered, {n_neg} untampered)")
    return labels, scores, n_pos, n_neg


def auc_score(labels, scores) -> float:
    """Mann-Whitney AUC with midranks: P(pos > neg) + 0.5 P(pos == neg)."""
    labels, scores, n_pos, n_neg = _split_classes(labels, scores)
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scored: ScoredSet) -> float:
    return auc_score(scored.labels, scored.scores)


def roc_curve(labels, scores) -> np.ndarray:
    """ROC vertices ``(fpr, tpr)``, one per distinct score threshold, from (0, 0) to (1, 1)."""
    labels, scores, n_pos, n_neg = _split_classes(labels, scores)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = np.cumsum(labels[order] == 1)
    neg = np.cumsum(labels[order] == 0)
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tpr = np.r_[0.0, pos[last_of_run] / n_pos]
    fpr = np.r_[0.0, neg[last_of_run] / n_neg]
    return np.column_stack([fpr, tpr])


@dataclass
class EvalReport:
    auc: float
    roc_points: np.ndarray
    per_type_auc: dict = field(default_factory=dict)
    per_type_count: dict = field(default_factory=dict)
    n_tampered: int = 0
    n_untampered: int = 0

    def to_dict(self):
        return {
            "auc": self.auc,
            "n_tampered": self.n_tampered,
            "n_untampered": self.n_untampered,
            "per_type_auc": self.per_type_auc,
            "per_type_count": self.per_type_count,
            "roc_points": self.roc_points.tolist(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def to_text(self):
        rows = [(tag, f"{a:.4f}", str(self.per_type_count[tag])) for tag, a in self.per_type_auc.items()]
        rows.append(("all", f"{self.auc:.4f}", str(self.n_tampered)))
        return format_table(["Manipulation Type", "AUC-ROC", "n tampered"], rows)


def per_type_report(scored: ScoredSet, negatives: Optional[Mapping[str, Sequence[str]]] = None) -> EvalReport:
    """Overall AUC plus one AUC per manipulation tag.

    Each tag's tampered items are ranked against every untampered item, or,
    when ``negatives`` maps that tag to a list of ids, against just those
    untampered items. Tags appear in sorted order.
    """
    labels, scores = scored.labels, scored.scores
    if not (labels == 0).any():
        raise EvaluationError("per-type report needs untampered items")
    neg_mask = labels == 0
    tags = np.array([t if t is not None else "" for t in scored.tags], dtype=object)
    per_type, counts = {}, {}
    for tag in sorted({t for t, l in zip(scored.tags, labels) if l == 1 and t}):
        pos_mask = (labels == 1) & (tags == tag)
        nm = neg_mask
        if negatives is not None and tag in negatives:
            nm = neg_mask & np.isin(np.array(scored.ids, dtype=object), list(negatives[tag]))
        sel = pos_mask | nm
        per_type[tag] = auc_score(labels[sel], scores[sel])
        counts[tag] = int(pos_mask.sum())
    return EvalReport(
        auc=auc(scored),
        roc_points=roc_curve(labels, scores),
        per_type_auc=per_type,
        per_type_count=counts,
        n_tampered=int((labels == 1).sum()),
        n_untampered=int(neg_mask.sum()),
    )


def fuse(predictions: Sequence[ScoredSet]) -> ScoredSet:
    """Average the scores of several models over the same images.

    The sum is exactly rounded (``math.fsum``), so the result does not depend
    on the order of ``predictions``. Output follows the first set's item order.
    """
    predictions = list(predictions)
    if len(predictions) < 2:
        raise EvaluationError("fusion needs at least two scored sets")
    maps = [p.as_dict() for p in predictions]
    ids = predictions[0].ids
    for k, m in enumerate(maps[1:], 2):
        if set(m) != set(ids):
            raise EvaluationError(f"scored set #{k} covers different ids than set #1")
    labels, scores, tags = [], [], []
    for i in ids:
        rows = [m[i] for m in maps]
        if len({r[0] for r in rows}) != 1:
            raise EvaluationError(f"labels disagree for id {i!r}")
        labels.append(rows[0][0])
        scores.append(math.fsum(r[1] for r in rows) / len(rows))
        tags.append(next((r[2] for r in rows if r[2]), None))
    return ScoredSet(ids, labels, np.clip(scores, 0.0, 1.0), tags)


def format_table(headers, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def fmt(r):
        return "| " + " | ".join(str(x).ljust(w) for x, w in zip(r, widths)) + " |"

    return "\n".join([line, fmt(headers), line, *[fmt(r) for r in rows], line])


def fusion_table(named_aucs: Mapping[str, float]) -> str:
    """Direction-by-direction AUC table, fusion row last."""
    return format_table(["Co-occurrence Matrix Direction", "AUC-ROC"],
                        [(name, f"{a:.4f}") for name, a in named_aucs.items()])
