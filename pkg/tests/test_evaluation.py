import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coocnet.errors import EvaluationError
from coocnet.evaluation import (
    EvalReport,
    ScoredSet,
    auc,
    auc_score,
    fuse,
    fusion_table,
    per_type_report,
    read_scores,
    roc_curve,
    write_scores,
)
from oracles import pairwise_auc


def scored(labels, scores, tags=None):
    ids = [f"img{i}" for i in range(len(labels))]
    tags = tags or [("t" if l else None) for l in labels]
    return ScoredSet(ids, labels, scores, tags)


def random_set(rng, n, levels=None):
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    if levels:
        scores = rng.integers(0, levels, size=n) / max(levels - 1, 1)
    else:
        scores = rng.uniform(size=n)
    return labels, scores


def test_perfect_separation():
    assert auc(scored([1, 1, 0, 0], [0.9, 0.9, 0.1, 0.1])) == 1.0


def test_all_ties():
    assert auc(scored([1, 0, 1, 0, 0], [0.5] * 5)) == 0.5


def test_single_class_errors():
    with pytest.raises(EvaluationError):
        auc(scored([1, 1], [0.2, 0.3]))
    with pytest.raises(EvaluationError):
        roc_curve([0, 0], [0.2, 0.3])


@pytest.mark.parametrize("levels", [None, 2, 3, 5])
def test_auc_matches_pairwise_oracle(rng, levels):
    for _ in range(60):
        labels, scores = random_set(rng, int(rng.integers(2, 51)), levels)
        assert abs(auc_score(labels, scores) - pairwise_auc(labels.tolist(), scores.tolist())) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 10**6)), min_size=2, max_size=40))
def test_monotone_invariance(pairs):
    # scores on a 1e-6 grid: cubing stays strictly increasing in floating point
    # (tiny subnormal-range scores would collapse to 0 and create new ties)
    labels = np.array([p[0] for p in pairs])
    scores = np.array([p[1] for p in pairs]) / 10**6
    if labels.min() == labels.max():
        return
    assert abs(auc_score(labels, scores) - auc_score(labels, scores**3)) <= 1e-12


def test_complement_identity(rng):
    for _ in range(30):
        labels, _ = random_set(rng, 30)
        scores = rng.permutation(np.linspace(0.01, 0.99, 30))
        assert auc_score(labels, scores) + auc_score(labels, 1 - scores) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("levels", [None, 4])
def test_roc_trapezoid_equals_auc(rng, levels):
    for _ in range(30):
        labels, scores = random_set(rng, 40, levels)
        pts = roc_curve(labels, scores)
        assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
        assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
        assert len(pts) == len(np.unique(scores)) + 1
        area = np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2)
        assert abs(area - auc_score(labels, scores)) <= 1e-9


def test_per_type_report_bookkeeping():
    s = ScoredSet(
        ["a", "b", "c", "d", "e", "f"],
        [0, 0, 1, 1, 1, 1],
        [0.1, 0.4, 0.9, 0.95, 0.3, 0.5],
        [None, None, "resize", "resize", "blur", "blur"],
    )
    rep = per_type_report(s)
    assert list(rep.per_type_auc) == ["blur", "resize"]
    assert rep.per_type_auc["resize"] == 1.0
    assert rep.per_type_auc["blur"] == pairwise_auc([0, 0, 1, 1], [0.1, 0.4, 0.3, 0.5])
    assert rep.per_type_count == {"blur": 2, "resize": 2}
    assert rep.auc == auc(s)
    assert (rep.n_tampered, rep.n_untampered) == (4, 2)
    text = rep.to_text()
    assert "resize" in text and "1.0000" in text
    d = json.loads(rep.to_json())
    assert d["per_type_auc"] == rep.per_type_auc and d["roc_points"][0] == [0.0, 0.0]


def test_per_type_custom_negatives():
    s = ScoredSet(["a", "b", "c", "d"], [0, 0, 1, 1], [0.1, 0.8, 0.5, 0.6], [None, None, "x", "y"])
    assert per_type_report(s).per_type_auc["x"] == 0.5
    assert per_type_report(s, negatives={"x": ["a"]}).per_type_auc["x"] == 1.0


def test_per_type_matches_oracle(rng):
    kinds = ["splice", "clone", "resize", "global_blur"]
    for _ in range(20):
        n = 60
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        tags = [str(rng.choice(kinds)) if l else None for l in labels]
        scores = rng.integers(0, 6, size=n) / 5
        rep = per_type_report(ScoredSet([str(i) for i in range(n)], labels, scores, tags))
        for kind in kinds:
            pos = [s for s, t in zip(scores, tags) if t == kind]
            neg = [s for s, l in zip(scores, labels) if l == 0]
            if not pos:
                assert kind not in rep.per_type_auc
                continue
            assert rep.per_type_auc[kind] == pairwise_auc([1] * len(pos) + [0] * len(neg), pos + neg)


def test_per_type_needs_untampered():
    with pytest.raises(EvaluationError):
        per_type_report(scored([1, 1], [0.2, 0.3]))


def test_fuse_examples():
    a = scored([0, 1], [0.2, 0.9])
    b = scored([0, 1], [0.8, 0.3])
    assert np.array_equal(fuse([a, a]).scores, a.scores)
    f = fuse([a, b])
    assert f.scores.tolist() == [0.5, 0.6]
    assert f.labels.tolist() == [0, 1] and f.tags == (None, "t")


def test_fuse_is_permutation_invariant(rng):
    sets = []
    labels = rng.integers(0, 2, size=50)
    for _ in range(4):
        sets.append(ScoredSet([f"i{k}" for k in range(50)], labels, rng.uniform(size=50)))
    ref = fuse(sets).scores
    for perm in ([3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]):
        assert np.array_equal(fuse([sets[i] for i in perm]).scores, ref)


def test_fuse_aligns_by_id():
    a = ScoredSet(["x", "y"], [0, 1], [0.2, 0.6])
    b = ScoredSet(["y", "x"], [1, 0], [0.8, 0.4])
    assert fuse([a, b]).scores.tolist() == pytest.approx([0.3, 0.7])


def test_fuse_errors():
    a = scored([0, 1], [0.2, 0.9])
    with pytest.raises(EvaluationError):
        fuse([a])
    with pytest.raises(EvaluationError):
        fuse([a, ScoredSet(["img0", "other"], [0, 1], [0.1, 0.1])])
    with pytest.raises(EvaluationError):
        fuse([a, scored([1, 1], [0.1, 0.1])])


@pytest.mark.parametrize(
    "ids,labels,scores",
    [([], [], []), (["a"], [2], [0.5]), (["a"], [1], [1.5]), (["a"], [1], [np.nan]), (["a", "a"], [0, 1], [0, 1])],
)
def test_scored_set_validation(ids, labels, scores):
    with pytest.raises(EvaluationError):
        ScoredSet(ids, labels, scores)


def test_scores_csv_round_trip(tmp_path, rng):
    s = ScoredSet(["a/b.png", "c,d.png", "e.png"], [0, 1, 1], [1 / 3, rng.uniform(), 1.0], [None, "splice", "crop"])
    path = write_scores(s, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == "id,label,score,manipulation_type"
    back = read_scores(path)
    assert back.items() == s.items()


def test_read_scores_errors(tmp_path):
    with pytest.raises(EvaluationError):
        read_scores(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("id,score\nx,0.5\n")
    with pytest.raises(EvaluationError):
        read_scores(bad)
    bad.write_text("id,label,score,manipulation_type\nx,one,0.5,\n")
    with pytest.raises(EvaluationError):
        read_scores(bad)


def test_fusion_table_layout():
    table = fusion_table({"Horizontal": 0.8, "Vertical": 0.81, "Horizontal + Vertical": 0.82, "Fusion": 0.85})
    lines = table.splitlines()
    assert len(lines) == 4 + 4
    assert "Fusion" in lines[-2] and "0.8500" in lines[-2]


def test_eval_report_to_dict_is_json_safe():
    rep = EvalReport(0.75, np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert json.loads(rep.to_json())["auc"] == 0.75
