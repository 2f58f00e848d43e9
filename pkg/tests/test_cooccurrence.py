import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coocnet.cooccurrence import (
    RAW_COUNTS,
    SUM_TO_ONE,
    CooccurrenceTensor,
    cooccurrence,
    cooccurrence_counts,
    extract_tensor,
    load_packed,
    load_tensor,
    network_input,
    save_packed,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
)
from coocnet.errors import ShapeMismatchError, TensorFileError
from coocnet.image_io import Image
from oracles import naive_cooccurrence

SQUARE = np.array([[0, 1], [2, 3]], dtype=np.uint8)


def nonzero(c):
    return {(int(i), int(j)): int(c[i, j]) for i, j in zip(*np.nonzero(c))}


def test_horizontal_example():
    assert nonzero(cooccurrence(SQUARE, "horizontal", 256)) == {(0, 1): 1, (2, 3): 1}


def test_vertical_example():
    assert nonzero(cooccurrence(SQUARE, "vertical", 256)) == {(0, 2): 1, (1, 3): 1}


@pytest.mark.parametrize("v,h,w", [(0, 3, 4), (77, 5, 2), (255, 1, 9)])
def test_constant_channel_vertical(v, h, w):
    c = cooccurrence(np.full((h, w), v, dtype=np.uint8), "vertical", 256)
    assert nonzero(c) == ({(v, v): (h - 1) * w} if h > 1 else {})


def test_empty_channel_and_bad_args():
    with pytest.raises(ShapeMismatchError):
        cooccurrence(np.zeros((0, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        cooccurrence(SQUARE, "diagonal")
    with pytest.raises(ValueError):
        cooccurrence(SQUARE, "horizontal", 100)


@pytest.mark.parametrize("bins", [1, 2, 16, 64, 128, 256])
def test_matches_naive_oracle(rng, bins):
    for _ in range(5):
        ch = rng.integers(0, 256, size=tuple(rng.integers(1, 20, size=2)), dtype=np.uint8)
        for d in ("horizontal", "vertical"):
            assert np.array_equal(cooccurrence(ch, d, bins), naive_cooccurrence(ch, d, bins))


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 15), st.integers(1, 15))), st.sampled_from([64, 256]))
def test_count_conservation(ch, bins):
    h, w = ch.shape
    hz = cooccurrence(ch, "horizontal", bins)
    vt = cooccurrence(ch, "vertical", bins)
    assert hz.dtype == np.int64 and hz.min() >= 0
    assert hz.sum() == h * (w - 1)
    assert vt.sum() == (h - 1) * w


def test_constant_image_tensor():
    img = Image(np.zeros((2, 2, 3), dtype=np.uint8))
    raw = extract_tensor(img, 256, RAW_COUNTS)
    assert raw.planes.shape == (6, 256, 256)
    for p in raw.planes:
        assert nonzero(p) == {(0, 0): 2}
    norm = extract_tensor(img, 256, SUM_TO_ONE)
    assert np.allclose(norm.planes.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_plane_order(rng):
    px = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    counts = cooccurrence_counts(Image(px), 256)
    order = [(c, "horizontal") for c in range(3)] + [(c, "vertical") for c in range(3)]
    for plane, (c, d) in zip(counts, order):
        assert np.array_equal(plane, naive_cooccurrence(px[:, :, c], d))


def test_gray_replicated(rng):
    g = rng.integers(0, 256, size=(6, 6, 1), dtype=np.uint8)
    counts = cooccurrence_counts(Image(g), 64)
    assert all(np.array_equal(counts[0], counts[k]) for k in (1, 2))
    assert all(np.array_equal(counts[3], counts[k]) for k in (4, 5))


def test_degenerate_single_column_normalizes_to_zero_plane():
    t = extract_tensor(Image(np.arange(3, dtype=np.uint8).reshape(3, 1)), 256, SUM_TO_ONE)
    sums = t.planes.sum(axis=(1, 2))
    assert np.all(sums[:3] == 0) and np.allclose(sums[3:], 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))))
def test_flip_symmetry(px):
    base = cooccurrence_counts(Image(px), 256)
    hflip = cooccurrence_counts(Image(px[:, ::-1]), 256)
    vflip = cooccurrence_counts(Image(px[::-1]), 256)
    for c in range(3):
        assert np.array_equal(hflip[c], base[c].T)
        assert np.array_equal(hflip[3 + c], base[3 + c])
        assert np.array_equal(vflip[3 + c], base[3 + c].T)
        assert np.array_equal(vflip[c], base[c])


def test_rotation_correspondence_from_oracle(rng):
    # np.rot90 (counter-clockwise): right-neighbour pairs of the rotated image are the
    # below-neighbour pairs of the original; below-neighbour pairs of the rotated
    # image are the original's right-neighbour pairs reversed.
    for _ in range(10):
        ch = rng.integers(0, 256, size=tuple(rng.integers(1, 12, size=2)), dtype=np.uint8)
        rot = np.rot90(ch)
        assert np.array_equal(naive_cooccurrence(rot, "horizontal"), naive_cooccurrence(ch, "vertical"))
        assert np.array_equal(naive_cooccurrence(rot, "vertical"), naive_cooccurrence(ch, "horizontal").T)
        assert np.array_equal(cooccurrence(rot, "horizontal"), cooccurrence(ch, "vertical"))
        assert np.array_equal(cooccurrence(rot, "vertical"), cooccurrence(ch, "horizontal").T)


@pytest.mark.parametrize("size", [16, 1024])
def test_size_independence(rng, size):
    img = Image(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))
    assert extract_tensor(img, 256).planes.shape == (6, 256, 256)
    assert extract_tensor(img, 64).planes.shape == (6, 64, 64)


def test_quantization_bins():
    ch = np.array([[0, 3, 4, 255]], dtype=np.uint8)
    # q(v) = v * 64 // 256 -> 0, 0, 1, 63
    assert nonzero(cooccurrence(ch, "horizontal", 64)) == {(0, 0): 1, (0, 1): 1, (1, 63): 1}


def test_select_and_network_input(rng):
    t = extract_tensor(Image(rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)), 16)
    h = network_input(t, "horizontal_only")
    v = network_input(t, "vertical_only")
    assert h.shape == v.shape == (3, 16, 16)
    assert np.array_equal(h, t.planes[:3].astype(np.float32))
    assert np.array_equal(v, t.planes[3:].astype(np.float32))
    assert network_input(t).shape == (6, 16, 16)
    with pytest.raises(ShapeMismatchError):
        network_input(t.select("horizontal_only"), "both")


def test_tensor_file_round_trip(tmp_path, rng):
    t = extract_tensor(Image(rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)), 32)
    raw = tensor_to_bytes(t)
    assert raw[:4] == b"COOC" and len(raw) == 4 + 2 + 2 + 2 + 1 + 6 * 32 * 32 * 4
    assert raw[4:6] == b"\x01\x00" and raw[6:8] == (32).to_bytes(2, "little")
    back = load_tensor(save_tensor(t, tmp_path / "a.cooc"))
    assert back.normalization == SUM_TO_ONE and back.bins == 32
    assert np.array_equal(back.planes, t.planes.astype(np.float32))
    with pytest.raises(TensorFileError):
        tensor_from_bytes(raw[:-1])
    with pytest.raises(TensorFileError):
        tensor_from_bytes(b"XXXX" + raw[4:])


def test_packed_round_trip(tmp_path, rng):
    ts = [extract_tensor(Image(rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)), 8) for _ in range(3)]
    ids, back = load_packed(save_packed(ts, ["a", "b/c", "d"], tmp_path / "p.coop"))
    assert ids == ["a", "b/c", "d"]
    for t, b in zip(ts, back):
        assert np.array_equal(b.planes, t.planes.astype(np.float32))


def test_tensor_shape_guard():
    with pytest.raises(ShapeMismatchError):
        CooccurrenceTensor(np.zeros((6, 4, 4)), 8, SUM_TO_ONE)
