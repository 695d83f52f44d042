import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tscert.data import generate_cbf, generate_overlap, load_ucr_file, overlap_prototypes, znormalize
from tscert.errors import EmptyInputError, FormatError, ParseError


def write(tmp_path, text, name="d.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_line_comma(tmp_path):
    ds = load_ucr_file(write(tmp_path, "1,0.0,1.0\n2,1.0,0.0\n"), "comma")
    assert ds.num_labels == 2 and ds.length == 2
    assert ds.y.tolist() == [0, 1]
    np.testing.assert_array_equal(ds.X, [[0.0, 1.0], [1.0, 0.0]])


def test_load_tab_with_whitespace(tmp_path):
    ds = load_ucr_file(write(tmp_path, " 3\t 0.5 \t1.5\n\n-1\t2\t3\n"), "tab")
    assert ds.label_names == (-1, 3)
    assert ds.y.tolist() == [1, 0]


def test_labels_remapped_in_sorted_order(tmp_path):
    ds = load_ucr_file(write(tmp_path, "7,0,0\n1,0,0\n3,0,0\n7,1,1\n"), "comma")
    assert ds.y.tolist() == [2, 0, 1, 2]
    assert ds.num_labels == 3


def test_ragged_row_names_line(tmp_path):
    with pytest.raises(FormatError, match=":2:"):
        load_ucr_file(write(tmp_path, "1,0,0,0\n2,0,0,0,0\n"), "comma")


def test_non_numeric_field(tmp_path):
    with pytest.raises(ParseError, match=":1:"):
        load_ucr_file(write(tmp_path, "1,0,abc\n"), "comma")


def test_empty_file(tmp_path):
    with pytest.raises(EmptyInputError):
        load_ucr_file(write(tmp_path, "\n\n"), "comma")


def test_non_finite_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_ucr_file(write(tmp_path, "1,0,nan\n"), "comma")


def test_cbf_shape_and_balance():
    ds = generate_cbf(10, 128, seed=7)
    assert ds.X.shape == (30, 128)
    assert np.bincount(ds.y).tolist() == [10, 10, 10]
    assert np.all(np.isfinite(ds.X))


def test_cbf_deterministic_and_seed_sensitive():
    a, b = generate_cbf(10, 128, seed=7), generate_cbf(10, 128, seed=7)
    np.testing.assert_array_equal(a.X, b.X)
    assert np.any(a.X != generate_cbf(10, 128, seed=8).X)


def test_cbf_rejects_short_series():
    with pytest.raises(ValueError):
        generate_cbf(5, 63)


def test_cbf_shapes_are_recognisable():
    # noise-free view: average many series of each kind inside the core window
    ds = generate_cbf(400, 128, seed=1)
    means = np.stack([ds.X[ds.y == c].mean(axis=0) for c in range(3)])
    core = slice(40, 48)  # always inside [a, b] since a <= 32 and b >= a + 32
    assert means[0, core].mean() > 4.0  # cylinder plateau
    late = slice(100, 110)
    # bell ramps up, funnel ramps down: bell mass sits later than funnel mass
    t = np.arange(128)
    centre = [(m.clip(0) * t).sum() / m.clip(0).sum() for m in means]
    assert centre[1] > centre[0] > centre[2]
    assert means[:, late].min() > -0.5


def test_overlap_shape():
    ds = generate_overlap(50, 60, k=3, sep=2.0, seed=0)
    assert ds.X.shape == (150, 60)


def test_overlap_sep_zero_gives_identical_prototypes():
    P = overlap_prototypes(60, 4, 0.0)
    assert np.all(P == 0)


def test_overlap_prototype_separation_is_exact():
    P = overlap_prototypes(64, 3, 2.5)
    d = np.linalg.norm(P[:, None] - P[None], axis=-1)
    assert d[~np.eye(3, dtype=bool)].min() == pytest.approx(2.5, rel=1e-12)


def test_overlap_large_sep_nearest_prototype_oracle():
    ds = generate_overlap(334, 60, k=3, sep=20.0, seed=3)
    P = overlap_prototypes(60, 3, 20.0)
    pred = np.linalg.norm(ds.X[:, None, :] - P[None], axis=-1).argmin(axis=1)
    assert (pred == ds.y).mean() >= 0.99


def test_overlap_sep_zero_accuracy_near_chance():
    ds = generate_overlap(1000, 32, k=4, sep=0.0, seed=5)
    P = overlap_prototypes(32, 4, 0.0)
    # every prototype is identical so argmin is always label 0
    pred = np.linalg.norm(ds.X[:, None, :] - P[None], axis=-1).argmin(axis=1)
    assert (pred == ds.y).mean() == pytest.approx(0.25)


def test_znormalize_closed_form():
    from tscert.data import Dataset

    ds = Dataset("t", np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]), np.array([0, 1]), 2)
    z = znormalize(ds)
    np.testing.assert_allclose(z.X[0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    np.testing.assert_array_equal(z.X[1], [0.0, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_znormalize_idempotent(values):
    from tscert.data import Dataset

    ds = Dataset("t", np.array([values]), np.array([0]), 1)
    once = znormalize(ds)
    twice = znormalize(once)
    np.testing.assert_allclose(twice.X, once.X, atol=1e-9)


def test_load_then_znormalize_preserves_shape(tmp_path):
    ds = load_ucr_file(write(tmp_path, "1\t1\t2\t4\n2\t3\t3\t3\n1\t0\t1\t0\n"), "tab")
    z = znormalize(ds)
    assert len(z) == len(ds) and z.length == ds.length
    np.testing.assert_array_equal(z.y, ds.y)
