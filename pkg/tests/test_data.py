import time

import numpy as np
import pytest

from laplace_metric.data import (
    Dataset,
    DatasetParseError,
    InvalidDatasetError,
    dumps_dataset,
    gen_blobs,
    load_dataset,
    save_dataset,
    simplex_means,
)


def test_simplex_means_equidistant():
    M = simplex_means(4, 3, 2.0)
    D = np.linalg.norm(M[:, None] - M[None], axis=-1)[np.triu_indices(4, 1)]
    np.testing.assert_allclose(D, D[0], rtol=1e-12)
    assert np.linalg.norm(M, axis=1).max() == pytest.approx(2.0)


def test_gen_blobs_deterministic_bytes():
    a = [dumps_dataset(d) for d in gen_blobs(seed=5, per_class=20)]
    b = [dumps_dataset(d) for d in gen_blobs(seed=5, per_class=20)]
    c = [dumps_dataset(d) for d in gen_blobs(seed=6, per_class=20)]
    assert a == b and a != c


def test_gen_blobs_one_point_per_class():
    train, test, ood = gen_blobs(n_classes=3, per_class=1, spread=0.0, center=2.0)
    means = simplex_means(3, 2, 3.0) + 2.0 / np.sqrt(2)
    np.testing.assert_allclose(train.X, means, atol=1e-12)
    assert list(train.labels) == [0, 1, 2] and len(ood) == 3


def test_zero_offset_ood_matches_test_distribution():
    _, test, ood = gen_blobs(per_class=2000, ood_offset=0.0, seed=1)
    assert np.allclose(test.X.mean(axis=0), ood.X.mean(axis=0), atol=0.1)
    assert np.allclose(test.X.std(axis=0), ood.X.std(axis=0), rtol=0.05)


def test_ood_shift_direction():
    _, test, ood = gen_blobs(per_class=500, ood_offset=8.0, center=4.0, seed=2, spread=0.1)
    shift = ood.X.mean(axis=0) - test.X.mean(axis=0)
    np.testing.assert_allclose(shift, -8.0 / np.sqrt(2) * np.ones(2), atol=0.3)


def test_round_trip(tmp_path):
    for ds in gen_blobs(per_class=15, dim=3, seed=3):
        save_dataset(ds, tmp_path / "d.csv")
        back = load_dataset(tmp_path / "d.csv", 3)
        assert back.ids == ds.ids
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.labels, ds.labels)


@pytest.mark.parametrize("body, line", [
    ("id,label,f0\na,0,1.0\nb,1\n", 3),
    ("id,label,f0\na,0,1.0\nb,x,2.0\n", 3),
    ("id,label,f0,f1\na,0,1.0,2.0\nb,1,2.0,3.0\nc,0,oops,1\n", 4),
    ("id,label,f0\na,-1,1.0\n", 2),
    ("id,f0,label\na,1.0,0\n", 1),
    ("", 1),
])
def test_parse_errors_report_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path)
    assert err.value.line == line and f"line {line}" in str(err.value)


def test_empty_class_rejected(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("id,label,f0\na,0,1.0\nb,2,2.0\n")
    with pytest.raises(InvalidDatasetError, match="class 1"):
        load_dataset(path)
    with pytest.raises(InvalidDatasetError):
        load_dataset(tmp_path / "gap.csv", n_classes=4)


def test_no_rows_rejected(tmp_path):
    path = tmp_path / "header.csv"
    path.write_text("id,label,f0\n")
    with pytest.raises(InvalidDatasetError):
        load_dataset(path)


def test_length_mismatch_rejected():
    with pytest.raises(InvalidDatasetError):
        Dataset(["a"], np.zeros((2, 2)), np.zeros(2, int))


def test_ten_thousand_rows_load_fast(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset([f"r{k}" for k in range(10_000)], rng.normal(size=(10_000, 8)), rng.integers(0, 5, 10_000))
    save_dataset(ds, tmp_path / "big.csv")
    t0 = time.perf_counter()
    back = load_dataset(tmp_path / "big.csv")
    assert time.perf_counter() - t0 < 1.0
    assert len(back) == 10_000
