import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bayes_tucker.tensor_core import (
    ObservationSet,
    TuckerModel,
    fold,
    kron_all,
    kron_apply,
    multi_ttm,
    reconstruct,
    symm_eig,
    ttm,
    unfold,
    unvec,
    vec,
)

shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def tensors(shape_strategy=shapes):
    return shape_strategy.flatmap(lambda s: hnp.arrays(np.float64, s, elements=finite))


def test_vec_is_first_index_fastest():
    t = np.arange(12.0).reshape((2, 3, 2), order="F")
    np.testing.assert_array_equal(vec(t), np.arange(12.0))
    assert t[1, 2, 0] == 5.0


def test_unfold_small_example():
    # t[i, j, k] = i + 2 j + 6 k
    t = np.arange(12.0).reshape((2, 3, 2), order="F")
    np.testing.assert_array_equal(
        unfold(t, 0), [[0, 2, 4, 6, 8, 10], [1, 3, 5, 7, 9, 11]]
    )
    np.testing.assert_array_equal(
        unfold(t, 1), [[0, 1, 6, 7], [2, 3, 8, 9], [4, 5, 10, 11]]
    )
    np.testing.assert_array_equal(
        unfold(t, 2), [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11]]
    )


def test_unfold_bad_mode():
    with pytest.raises(ValueError):
        unfold(np.zeros((2, 2)), 2)


@given(tensors())
def test_fold_inverts_unfold(t):
    for n in range(t.ndim):
        np.testing.assert_array_equal(fold(unfold(t, n), n, t.shape), t)
    np.testing.assert_array_equal(unvec(vec(t), t.shape), t)


@given(tensors(), st.data())
def test_ttm_acts_on_unfolding(t, data):
    n = data.draw(st.integers(0, t.ndim - 1))
    m = data.draw(hnp.arrays(np.float64, (3, t.shape[n]), elements=finite))
    out = ttm(t, m, n)
    assert out.shape[n] == 3
    np.testing.assert_allclose(unfold(out, n), m @ unfold(t, n), atol=1e-9)


def test_ttm_shape_mismatch():
    with pytest.raises(ValueError):
        ttm(np.zeros((2, 3)), np.zeros((4, 2)), 1)


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_kron_apply_matches_materialized(seed, rank):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((r + 1, r)) for r in rank]
    v = rng.standard_normal(int(np.prod(rank)))
    dense = kron_all(mats) @ v
    fast = kron_apply(mats, v)
    assert np.linalg.norm(fast - dense) <= 1e-10 * max(np.linalg.norm(dense), 1.0)


def test_kron_all_is_reversed_order():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(kron_all([a, b]), np.kron(b, a))


def test_kron_apply_length_check():
    with pytest.raises(ValueError):
        kron_apply([np.eye(2), np.eye(3)], np.zeros(5))


@given(st.integers(0, 2**32 - 1))
def test_reconstruct_matches_kronecker_form(seed):
    rng = np.random.default_rng(seed)
    rank = tuple(rng.integers(1, 4, size=3))
    factors = tuple(rng.standard_normal((r + 2, r)) for r in rank)
    model = TuckerModel(rng.standard_normal(rank), factors)
    x = reconstruct(model)
    assert x.shape == model.shape
    np.testing.assert_allclose(vec(x), kron_all(factors) @ vec(model.core), atol=1e-10)


def test_multi_ttm_transpose_and_skip():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4, 5))
    mats = [rng.standard_normal((s, 2)) for s in t.shape]
    out = multi_ttm(t, mats, skip=1, transpose=True)
    assert out.shape == (2, 4, 2)
    expected = ttm(ttm(t, mats[0].T, 0), mats[2].T, 2)
    np.testing.assert_allclose(out, expected)


def test_tucker_model_validates_ranks():
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((2, 2)), (np.zeros((3, 2)), np.zeros((3, 3))))
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((2, 2)), (np.zeros((3, 2)),))


def test_observation_set_indices_are_colex():
    obs = ObservationSet.from_indices((2, 3), [(1, 0), (0, 2), (0, 0)])
    assert obs.count == 3
    np.testing.assert_array_equal(obs.indices, [[0, 0], [1, 0], [0, 2]])
    assert not obs.is_full
    assert ObservationSet.full((2, 2)).is_full


def test_observation_set_rejects_bad_input():
    with pytest.raises(ValueError):
        ObservationSet.from_indices((2, 2), [(2, 0)])
    with pytest.raises(ValueError):
        ObservationSet((2, 2), np.ones((2, 3), dtype=bool))


def test_observation_mask_is_read_only():
    obs = ObservationSet.full((2, 2))
    with pytest.raises(ValueError):
        obs.mask[0, 0] = False


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_symm_eig_matches_lapack(seed, d):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    a = a + a.T
    eig = symm_eig(a)
    np.testing.assert_allclose(eig.eigenvalues, np.linalg.eigvalsh(a), atol=1e-10 * max(1, np.abs(a).max()))
    v = eig.eigenvectors
    np.testing.assert_allclose(v.T @ v, np.eye(d), atol=1e-10)
    np.testing.assert_allclose((v * eig.eigenvalues) @ v.T, a, atol=1e-9)
    assert np.all(np.diff(eig.eigenvalues) >= 0)


def test_symm_eig_repeated_eigenvalues():
    q = np.linalg.qr(np.random.default_rng(3).standard_normal((5, 5)))[0]
    a = (q * np.array([1.0, 1.0, 1.0, 2.0, 2.0])) @ q.T
    eig = symm_eig(a)
    np.testing.assert_allclose(eig.eigenvalues, [1, 1, 1, 2, 2], atol=1e-12)


def test_symm_eig_rejects_nonsymmetric():
    with pytest.raises(ValueError):
        symm_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        symm_eig(np.zeros((0, 0)))
