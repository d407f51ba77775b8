import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from laplace_metric import kernels
from laplace_metric.contrastive import (
    NEGATIVE_INSIDE,
    NEGATIVE_OUTSIDE,
    POSITIVE,
    EmptyBatchError,
    HessianApprox,
    MarginConfig,
    MiningError,
    PairBatch,
    TargetMode,
    class_pair_counts,
    classify_pairs,
    dataset_loss,
    full_batch,
    full_targets,
    ggn_hessian_diag,
    loss_gradient,
    mine_pairs,
    minibatch_targets,
    pair_hessian_output,
    per_pair_loss,
)
from laplace_metric.data import InvalidDatasetError
from laplace_metric.net import ARCCOS, EUCLIDEAN, NetSpec, forward, init_params, normalize, pack
from laplace_metric.oracles import dense_ggn, fd_output_hessian

unit_vec = st.lists(st.floats(-5, 5), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-2)


def unit(v):
    return np.asarray(v, float) / np.linalg.norm(v)


# ---- pair classification and targets -------------------------------------------------

def test_positive_regardless_of_distance():
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert classify_pairs(Z, [0, 0], MarginConfig(0.1))[0, 1] == POSITIVE


def test_antipodal_negative_outside():
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert classify_pairs(Z, [0, 1], MarginConfig(0.5))[0, 1] == NEGATIVE_OUTSIDE


def test_classify_matches_brute_force(rng):
    Z = normalize(rng.normal(size=(12, 3)) + np.repeat(np.eye(3), 4, axis=0))
    labels = np.repeat([0, 1, 2], 4)
    for margin in (MarginConfig(0.8), MarginConfig(0.8, "squared")):
        K = classify_pairs(Z, labels, margin)
        for i, j in itertools.product(range(12), repeat=2):
            dist = np.sqrt(np.sum((Z[i] - Z[j]) ** 2))
            measured = dist**2 if margin.convention == "squared" else dist
            want = POSITIVE if labels[i] == labels[j] else (NEGATIVE_INSIDE if measured <= 0.8 else NEGATIVE_OUTSIDE)
            assert K[i, j] == want


def test_targets_two_classes():
    labels = np.array([0, 0, 1, 1, 1])
    assert class_pair_counts(labels) == (13, 12)
    K = classify_pairs(np.tile([1.0, 0.0], (5, 1)), labels, MarginConfig(0.5))
    Y = full_targets(labels, K)
    assert Y[0, 1] == 1 / 13 and Y[2, 2] == 1 / 13
    assert Y[0, 2] == -1 / 12


def test_targets_single_class():
    labels = np.zeros(4, int)
    K = classify_pairs(normalize(np.random.default_rng(0).normal(size=(4, 2))), labels)
    assert np.all(full_targets(labels, K) == 1 / 16)


def test_vmf_targets_cover_the_sphere():
    Z = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    b = full_batch(Z, [0, 1, 1], MarginConfig(0.1), TargetMode("vmf", 1.0))
    assert set(np.unique(b.target)) == {-1.0, 1.0}
    assert not np.any(b.kind == NEGATIVE_OUTSIDE)


def test_empty_class_rejected():
    with pytest.raises(InvalidDatasetError):
        class_pair_counts([0, 0, 2], n_classes=3)


def test_minibatch_target_arithmetic():
    kinds = np.array([POSITIVE] * 4 + [NEGATIVE_INSIDE] * 6)
    y = minibatch_targets(kinds, 25, 10, 4, 6)
    assert y[0] == pytest.approx(0.1, abs=1e-15)
    assert y[-1] == pytest.approx(-10 / (25 * 6), abs=1e-15)


def test_minibatch_empty_rejected():
    with pytest.raises(EmptyBatchError):
        minibatch_targets(np.array([], dtype=np.int8), 25, 0, 0, 0)


def test_full_coverage_batch_reduces_to_full_targets(rng):
    Z = normalize(rng.normal(size=(5, 3)))
    labels = np.array([0, 0, 1, 1, 1])
    m = MarginConfig(1.3)
    b = mine_pairs(Z, labels, 13, 12, "random", m, rng=rng)
    Y = full_targets(labels, classify_pairs(Z, labels, m))
    np.testing.assert_allclose(b.weights(), Y[b.i, b.j], rtol=1e-14, atol=0)
    assert len(set(zip(b.i.tolist(), b.j.tolist()))) == 25


def test_minibatch_expectation_exact_enumeration():
    """Average over every (1 positive, 2 negatives) batch equals the full loss."""
    rng = np.random.default_rng(8)
    Z = normalize(rng.normal(size=(6, 3)))
    labels = np.array([0, 0, 0, 1, 1, 2])
    margin = MarginConfig(1.2)
    full = full_batch(Z, labels, margin)
    full_loss = kernels.pair_loss(Z, full.i, full.j, full.weights(), False)
    pos = np.flatnonzero(full.kind == POSITIVE)
    neg = np.flatnonzero(full.kind != POSITIVE)
    total, count = 0.0, 0
    for p in pos:
        for n1, n2 in itertools.combinations(neg, 2):
            sel = np.array([p, n1, n2])
            kinds = full.kind[sel]
            y = minibatch_targets(kinds, 36, 3, 1, 2)
            total += (36 / 3) * kernels.pair_loss(Z, full.i[sel], full.j[sel], y, False)
            count += 1
    assert total / count == pytest.approx(full_loss, rel=1e-12, abs=1e-15)


# ---- per-pair loss and output hessians ------------------------------------------------

def test_per_pair_examples():
    assert per_pair_loss(1.0, [0.6, 0.8], [0.6, 0.8]) == 0.0
    assert per_pair_loss(2.0, [1.0, 0.0], [0.0, 1.0]) == 2.0
    with pytest.raises(ValueError):
        per_pair_loss(1.0, [0.0, 0.0], [1.0, 0.0], ARCCOS)


@settings(max_examples=100, deadline=None)
@given(unit_vec, unit_vec, st.floats(-3, 3))
def test_splits_agree_on_unit_vectors_and_are_symmetric(a, b, y):
    zi, zj = unit(a), unit(b)
    e = per_pair_loss(y, zi, zj, EUCLIDEAN)
    assert e == pytest.approx(per_pair_loss(y, zi, zj, ARCCOS), abs=1e-12)
    assert e == pytest.approx(per_pair_loss(y, zj, zi, EUCLIDEAN), abs=1e-15)
    for split in (EUCLIDEAN, ARCCOS):
        H = pair_hessian_output(y, zi, zj, split)
        np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_euclidean_output_hessian_eigenvalues():
    z = unit([1.0, 2.0, 2.0])
    assert np.allclose(sorted(set(np.round(np.linalg.eigvalsh(pair_hessian_output(1.0, z, -z)), 12))), [0, 2])
    assert np.allclose(sorted(set(np.round(np.linalg.eigvalsh(pair_hessian_output(-1.0, z, z)), 12))), [-2, 0])


def test_arccos_output_hessian_finite_differences(rng):
    for _ in range(20):
        zi, zj = normalize(rng.normal(size=3)), normalize(rng.normal(size=3))
        H = pair_hessian_output(0.7, zi, zj, ARCCOS)
        np.testing.assert_allclose(H, fd_output_hessian(0.7, zi, zj, ARCCOS), rtol=1e-4, atol=1e-6)
        assert not np.allclose(H, pair_hessian_output(0.7, zi, zj, EUCLIDEAN))


# ---- dataset loss, gradient and GGN ---------------------------------------------------

def small_problem(seed=0, sizes=(3, 2, 2), dims=(2, 4, 3), activation="tanh"):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    ds = make_dataset(rng.normal(size=(labels.size, dims[0])), labels, len(sizes))
    spec = NetSpec(dims, activation)
    return ds, spec, init_params(spec, seed)


def test_collapsed_single_class_zero_loss_and_gradient():
    spec = NetSpec((2, 3))
    params = pack([(np.zeros((3, 2)), np.array([1.0, 2.0, 2.0]))])
    ds = make_dataset(np.random.default_rng(0).normal(size=(4, 2)), [0, 0, 0, 0])
    assert dataset_loss(ds, params, spec) == 0.0
    assert np.all(loss_gradient(ds, params, spec) == 0.0)


def test_antipodal_classes_zero_loss():
    spec = NetSpec((1, 2))
    params = pack([(np.array([[1.0], [0.0]]), np.zeros(2))])
    ds = make_dataset([[1.0], [2.0], [-1.0], [-3.0]], [0, 0, 1, 1])
    assert dataset_loss(ds, params, spec, MarginConfig(1.9)) == 0.0


@pytest.mark.parametrize("split", [EUCLIDEAN, ARCCOS])
def test_dataset_loss_matches_double_loop(split):
    ds, spec, params = small_problem(1)
    margin = MarginConfig(1.0)
    U = forward(spec, params, ds.X)
    Z = normalize(U)
    n_pos, n_neg = class_pair_counts(ds.labels)
    total = 0.0
    for i, j in itertools.product(range(len(ds)), repeat=2):
        if ds.labels[i] == ds.labels[j]:
            y = 1 / n_pos
        elif np.linalg.norm(Z[i] - Z[j]) <= 1.0:
            y = -1 / n_neg
        else:
            continue
        E = U if split == ARCCOS else Z
        total += per_pair_loss(y, E[i], E[j], split)
    assert dataset_loss(ds, params, spec, margin, split=split) == pytest.approx(total, rel=1e-12)


@pytest.mark.parametrize("split", [EUCLIDEAN, ARCCOS])
@pytest.mark.parametrize("subset", ["all", "last"])
def test_gradient_matches_finite_differences(split, subset):
    ds, spec, params = small_problem(2)
    Z = normalize(forward(spec, params, ds.X))
    batch = full_batch(Z, ds.labels, MarginConfig(1.0))
    g = loss_gradient(ds, params, spec, split=split, batch=batch, active_subset=subset)
    start, stop = spec.resolve_subset(subset)
    h = 1e-6
    fd = np.empty(stop - start)
    for k in range(start, stop):
        p1, p2 = params.copy(), params.copy()
        p1[k] += h
        p2[k] -= h
        fd[k - start] = (dataset_loss(ds, p1, spec, split=split, batch=batch)
                         - dataset_loss(ds, p2, spec, split=split, batch=batch)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


def test_gradient_linear_in_targets():
    ds, spec, params = small_problem(3)
    b = full_batch(normalize(forward(spec, params, ds.X)), ds.labels, MarginConfig(1.0))
    b3 = PairBatch(b.i, b.j, b.kind, 3.0 * b.target, b.scale)
    np.testing.assert_allclose(loss_gradient(ds, params, spec, batch=b3),
                               3.0 * loss_gradient(ds, params, spec, batch=b), rtol=1e-13, atol=1e-16)


def test_fix_variant_zero_when_all_negatives_inside():
    # equal class sizes, margin covering the sphere: every point's fix contribution cancels
    ds, spec, params = small_problem(4, sizes=(2, 2, 2))
    diag = ggn_hessian_diag(ds, params, spec, MarginConfig(2.5), approx=HessianApprox("fix"), active_subset="all")
    assert np.max(np.abs(diag)) <= 1e-15


def test_fix_variant_unequal_classes_can_be_indefinite():
    """Documented limitation: with unequal class sizes the fix GGN is not PSD in general."""
    ds, spec, params = small_problem(5, sizes=(1, 3))
    b = full_batch(normalize(forward(spec, params, ds.X)), ds.labels, MarginConfig(2.5))
    G = dense_ggn(ds, params, spec, b, EUCLIDEAN, HessianApprox("fix"))
    assert np.linalg.eigvalsh(G).min() < -1e-6


def test_pos_variant_without_positives_is_zero():
    ds, spec, params = small_problem(6, sizes=(2, 2))
    Z = normalize(forward(spec, params, ds.X))
    b = mine_pairs(Z, ds.labels, 0, 4, "random", MarginConfig(2.5), rng=np.random.default_rng(0))
    diag = ggn_hessian_diag(ds, params, spec, approx=HessianApprox("pos"), batch=b)
    assert np.all(diag == 0.0)


@pytest.mark.parametrize("variant", ["pos", "fix", "full"])
@pytest.mark.parametrize("split", [EUCLIDEAN, ARCCOS])
def test_diag_matches_dense_assembly(variant, split):
    ds, spec, params = small_problem(7)
    b = full_batch(normalize(forward(spec, params, ds.X)), ds.labels, MarginConfig(1.0))
    approx = HessianApprox(variant)
    stats = {}
    diag = ggn_hessian_diag(ds, params, spec, split=split, approx=approx, batch=b, active_subset="all",
                            stats=stats)
    dense = np.diag(dense_ggn(ds, params, spec, b, split, approx, "all"))
    if variant == "full" or split == ARCCOS:
        assert stats["clamped"] == int(np.sum(dense < 0))
        dense = np.maximum(dense, 0)
    np.testing.assert_allclose(diag, dense, rtol=1e-10, atol=1e-14)


def test_w_n_reweighting():
    ds, spec, params = small_problem(8)
    b = full_batch(normalize(forward(spec, params, ds.X)), ds.labels, MarginConfig(2.5))
    pos = ggn_hessian_diag(ds, params, spec, approx=HessianApprox("pos"), batch=b)
    half = ggn_hessian_diag(ds, params, spec, approx=HessianApprox("fix", 0.5), batch=b)
    neg_only = ggn_hessian_diag(ds, params, spec, approx=HessianApprox("fix", 1.0), batch=b)
    # positives get 2(1 - w_n), negatives 2 w_n: w_n = 0.5 is the plain sum
    pos_fix = ggn_hessian_diag(ds, params, spec, approx=HessianApprox("fix", 0.0), batch=b)
    np.testing.assert_allclose(half, 0.5 * (pos_fix + neg_only), rtol=1e-12, atol=1e-16)
    assert np.all(pos >= -1e-15)


# ---- mining ---------------------------------------------------------------------------

def test_mining_two_points_forced():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = mine_pairs(Z, [0, 1], 0, 1, "random", rng=np.random.default_rng(0))
    assert len(b) == 1 and b.i[0] != b.j[0]


def test_batch_hard_picks_planted_negative():
    Z = normalize(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.99, 0.14], [0.0, -1.0]]))
    labels = np.array([0, 1, 1, 2, 2])
    b = mine_pairs(Z, labels, 1, 2, "batch_hard", MarginConfig(0.5), rng=np.random.default_rng(0))
    neg = {(int(i), int(j)) for i, j, k in zip(b.i, b.j, b.kind) if k != POSITIVE}
    assert neg == {(0, 3), (3, 0)}
    pos = [(int(i), int(j)) for i, j, k in zip(b.i, b.j, b.kind) if k == POSITIVE]
    assert pos[0] in {(3, 4), (4, 3)}  # farthest positive: 1.51 apart versus sqrt(2)


def test_mining_insufficient_pairs():
    with pytest.raises(MiningError):
        mine_pairs(np.eye(2), [0, 1], 3, 0, rng=np.random.default_rng(0))
