import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import gzip_copy, real_mnist_files
from termembed._rng import standard_normal
from termembed.data import (
    LabeledSet,
    ManifoldSpec,
    concat,
    distance_to_manifold,
    gen_manifold,
    load_label_names,
    read_csv_matrix,
    read_idx,
    read_pgm,
    stratified_split,
    write_csv_matrix,
    write_idx,
)


def two_image_fixture(tmp_path):
    imgs = np.stack([np.zeros((2, 3), np.uint8), np.full((2, 3), 255, np.uint8)])
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(img, lab, imgs, [4, 9])
    return img, lab


# -- IDX ----------------------------------------------------------------------------

def test_idx_fixture(tmp_path):
    img, lab = two_image_fixture(tmp_path)
    raw = img.read_bytes()
    assert raw[:16] == struct.pack(">IIII", 0x803, 2, 2, 3)
    ds = read_idx(img, lab)
    np.testing.assert_array_equal(ds.points, [[0.0] * 6, [1.0] * 6])
    assert list(ds.labels) == [4, 9]
    assert ds.provenance["scaling"] == "u8/255"


def test_idx_gzip(tmp_path):
    img, lab = two_image_fixture(tmp_path)
    ds = read_idx(gzip_copy(img, tmp_path / "img.gz"), gzip_copy(lab, tmp_path / "lab.gz"))
    assert ds.points.tobytes() == read_idx(img, lab).points.tobytes()


def test_idx_bad_magic(tmp_path):
    img, lab = two_image_fixture(tmp_path)
    img.write_bytes(b"\x00\x00\x08\x01" + img.read_bytes()[4:])
    with pytest.raises(ValueError, match="offset 0"):
        read_idx(img, lab)


def test_idx_truncated_and_mismatched(tmp_path):
    img, lab = two_image_fixture(tmp_path)
    full = img.read_bytes()
    img.write_bytes(full[:-1])
    with pytest.raises(ValueError, match="offset 16"):
        read_idx(img, lab)
    img.write_bytes(full[:10])
    with pytest.raises(ValueError, match="truncated"):
        read_idx(img, lab)
    img.write_bytes(full)
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
    with pytest.raises(ValueError, match="3 labels"):
        read_idx(img, lab)


def test_mnist_sample(mnist_idx):
    ds = read_idx(*mnist_idx)
    assert ds.dim == 784
    assert 0.0 <= ds.points.min() and ds.points.max() <= 1.0
    assert set(np.unique(ds.labels)) == set(range(10))


@pytest.mark.skipif(real_mnist_files() is None, reason="set TEMB_MNIST_DIR to the MNIST files")
def test_real_mnist_training_file():
    ds = read_idx(*real_mnist_files())
    assert ds.points.shape == (60_000, 784)


# -- CSV ---------------------------------------------------------------------------

def test_csv_example(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,0.5,0.25\n2,0.0,1.0\n")
    ds = read_csv_matrix(p)
    np.testing.assert_array_equal(ds.points, [[0.5, 0.25], [0.0, 1.0]])
    assert list(ds.labels) == [1, 2]
    unl = read_csv_matrix(p, has_labels=False)
    assert unl.dim == 3


@pytest.mark.parametrize("text, match", [
    ("", "no data"),
    ("1,2,3\n4,5\n", r":2: expected 3"),
    ("1,2\n3,abc\n", r":2: column 2"),
    ("1.5,2\n", "label"),
    ("1\n2\n", "no coordinates"),
])
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError, match=match):
        read_csv_matrix(p)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, P):
    p = tmp_path_factory.mktemp("csv") / "p.csv"
    labels = np.arange(len(P)) * 3
    write_csv_matrix(p, P, labels)
    back = read_csv_matrix(p)
    assert back.points.tobytes() == P.tobytes()
    assert list(back.labels) == list(labels)


def test_csv_round_trip_keeps_signed_zero_bits(tmp_path):
    P = np.array([[0.1, -0.0, 1 / 3, 2.0 ** -1074, -1e308]])
    write_csv_matrix(tmp_path / "p.csv", P)
    assert read_csv_matrix(tmp_path / "p.csv", has_labels=False).points.tobytes() == P.tobytes()


# -- PGM and sidecars ------------------------------------------------------------------

def test_pgm(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# comment\n3 2\n255\n" + bytes([0, 51, 255, 102, 153, 204]))
    img = read_pgm(p)
    np.testing.assert_allclose(img, [[0.0, 0.2, 1.0], [0.4, 0.6, 0.8]])


@pytest.mark.parametrize("raw, match", [
    (b"P2\n1 1\n255\n\x00", "magic"),
    (b"P5\n2 2\n255\n\x00", "truncated"),
    (b"P5\n2 x\n255\n\x00", "offset 5"),
    (b"P5\n2", "truncated header"),
])
def test_pgm_errors(tmp_path, raw, match):
    p = tmp_path / "b.pgm"
    p.write_bytes(raw)
    with pytest.raises(ValueError, match=match):
        read_pgm(p)


def test_label_names(tmp_path):
    p = tmp_path / "names.json"
    p.write_text(json.dumps({"0": "zero", "7": "seven"}))
    assert load_label_names(p) == {0: "zero", 7: "seven"}


# -- LabeledSet ---------------------------------------------------------------------

def test_labeled_set_validation():
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((2, 2)), [1])
    with pytest.raises(ValueError, match="row 1"):
        LabeledSet(np.array([[0.0], [np.nan]]), [0, 0])
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((1, 2)), [-1])
    ds = LabeledSet(np.zeros((3, 2)), [0, 1, 1])
    with pytest.raises(ValueError):
        ds.points[0, 0] = 1.0
    both = concat([ds, ds])
    assert len(both) == 6 and both.dim == 2


# -- splitting --------------------------------------------------------------------

def labeled(n_per_class=30, classes=10, N=3, seed=0):
    lab = np.repeat(np.arange(classes), n_per_class)
    return LabeledSet(standard_normal(seed, (len(lab), N)), lab, "toy")


def test_split_sizes_and_disjointness():
    ds = labeled(250)
    tr, te = stratified_split(ds, 100, 100, seed=1)
    assert len(tr) == 1000 and len(te) == 1000
    assert not set(tr.provenance["indices"]) & set(te.provenance["indices"])
    assert np.all(np.bincount(tr.labels) == 100)


def test_split_determinism():
    ds = labeled()
    a = stratified_split(ds, 5, 3, seed=4)
    b = stratified_split(ds, 5, 3, seed=4)
    c = stratified_split(ds, 5, 3, seed=5)
    assert a[0].provenance["indices"] == b[0].provenance["indices"]
    assert a[0].provenance["indices"] != c[0].provenance["indices"]


def test_split_class_too_small():
    with pytest.raises(ValueError, match="class"):
        stratified_split(labeled(5), 4, 2, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 6), st.integers(0, 6))
def test_split_rows_come_from_data_without_reuse(seed, k_tr, k_te):
    ds = labeled(12, classes=4)
    tr, te = stratified_split(ds, k_tr, k_te, seed)
    idx = tr.provenance["indices"] + te.provenance["indices"]
    assert len(idx) == len(set(idx)) == 4 * (k_tr + k_te)
    for part in (tr, te):
        np.testing.assert_array_equal(part.points, ds.points[part.provenance["indices"]])
        np.testing.assert_array_equal(part.labels, ds.labels[part.provenance["indices"]])


def test_split_is_uniform_per_class():
    ds = labeled(10, classes=1)
    hits = np.zeros(10)
    for s in range(2000):
        hits[stratified_split(ds, 3, 0, seed=s)[0].provenance["indices"]] += 1
    # each member is drawn with probability 3/10
    assert np.all(np.abs(hits / 2000 - 0.3) < 0.05)


# -- manifolds --------------------------------------------------------------------

def test_clean_circle_on_its_equation():
    P = gen_manifold(ManifoldSpec("circle", ambient=6, seed=1), 500).points
    assert np.max(np.abs(np.hypot(P[:, 0], P[:, 1]) - 1.0)) <= 1e-12
    assert np.all(P[:, 2:] == 0.0)


def test_clean_sphere_on_its_equation():
    spec = ManifoldSpec("sphere", ambient=5, dim=2, radius=2.5, seed=2)
    P = gen_manifold(spec, 400).points
    assert np.max(np.abs(np.linalg.norm(P[:, :3], axis=1) - 2.5)) <= 1e-12
    assert np.all(P[:, 3:] == 0.0)
    assert np.max(distance_to_manifold(spec, P)) <= 1e-12


def test_swiss_roll_range():
    P = gen_manifold(ManifoldSpec("swiss_roll", ambient=4, seed=3), 300).points
    t = np.hypot(P[:, 0], P[:, 2])
    assert t.min() >= 1.5 * np.pi - 1e-12 and t.max() <= 4.5 * np.pi + 1e-12
    assert 0 <= P[:, 1].min() and P[:, 1].max() <= 21
    assert np.all(P[:, 3] == 0.0)


def test_sparse_union_sparsity():
    P = gen_manifold(ManifoldSpec("sparse_union", ambient=10, sparsity=2, seed=4), 500).points
    assert np.all(np.count_nonzero(P, axis=1) <= 2)
    fixed = gen_manifold(ManifoldSpec("sparse_union", ambient=10, sparsity=3,
                                      n_subspaces=4, seed=5), 200)
    for c in range(4):
        rows = fixed.points[fixed.labels == c]
        assert len({tuple(np.flatnonzero(r)) for r in rows}) == 1


def test_tube_noise_stays_inside_delta():
    spec = ManifoldSpec("circle", ambient=30, noise_delta=0.1, seed=6)
    d = distance_to_manifold(spec, gen_manifold(spec, 2000).points)
    assert d.max() <= 0.1 + 1e-12
    assert d.max() > 0.08  # uniform in the ball, so mass sits near the rim


def test_two_circles_stay_apart():
    a = gen_manifold(ManifoldSpec("circle", ambient=20, noise_delta=0.1, seed=7), 300)
    center = np.zeros(20)
    center[0] = 10.0
    b = gen_manifold(ManifoldSpec("circle", ambient=20, noise_delta=0.1, seed=8,
                                  center=tuple(center), label=1), 300)
    D = np.linalg.norm(a.points[:, None, :] - b.points[None, :, :], axis=2)
    assert D.min() >= 10 - 2 - 0.2
    assert set(b.labels) == {1}


@pytest.mark.parametrize("bad", [
    dict(kind="circle", ambient=1),
    dict(kind="circle", ambient=3, noise_delta=1.0),
    dict(kind="sphere", ambient=3, dim=3),
    dict(kind="circle", ambient=3, noise_delta=-0.1),
    dict(kind="circle", ambient=3, center=(0.0, 1.0)),
])
def test_manifold_spec_validation(bad):
    with pytest.raises(ValueError):
        ManifoldSpec(**bad)


def test_generator_is_deterministic():
    spec = ManifoldSpec("sphere", ambient=4, dim=2, noise_delta=0.2, seed=11)
    assert gen_manifold(spec, 50).points.tobytes() == gen_manifold(spec, 50).points.tobytes()
    assert gen_manifold(spec, 50).provenance["generator"]["seed"] == 11
