from __future__ import annotations

import warnings

import numpy as np
import pytest

from embedchoice.data import EmbeddingMatrix, Source
from embedchoice.errors import ValidationError
from embedchoice.pca import PCAWarning, fit_pca, load_pcstore, standardize, write_pcstore


def emb(values, dtype="reviews"):
    values = np.asarray(values, dtype=float)
    return EmbeddingMatrix(Source(dtype, "m"), tuple(f"P{j}" for j in range(len(values))), values)


def test_standardize_moments():
    out = standardize(emb([[1.0], [2.0], [3.0]]))
    assert out.values.mean() == pytest.approx(0.0)
    assert out.values.var(ddof=1) == pytest.approx(1.0)


def test_standardize_drops_constant_columns():
    with pytest.warns(PCAWarning):
        out = standardize(emb([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))
    assert out.values.shape == (3, 1)
    with pytest.raises(ValidationError):
        standardize(emb([[1.0, 5.0], [1.0, 5.0]]))


def test_standardize_tablet_scale():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(15, 18)) * rng.uniform(0.1, 100, 18)
    x[:, 3] = 7.0
    with pytest.warns(PCAWarning):
        out = standardize(emb(x, "attributes"))
    assert out.values.shape[1] == 17
    np.testing.assert_allclose(out.values.var(axis=0, ddof=1), 1.0, atol=1e-10)


def test_rank_one_data():
    t = np.linspace(-1, 1, 6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PCAWarning)
        store = fit_pca(emb(np.column_stack([t, 2 * t])), 1)
    np.testing.assert_allclose(store.explained_ratio, [1.0])


def test_rank_deficiency_returns_fewer_components():
    t = np.linspace(-1, 1, 6)
    with pytest.warns(PCAWarning):
        store = fit_pca(emb(np.column_stack([t, 2 * t, -t])), 2)
    assert store.P == 1


@pytest.mark.parametrize("seed", range(5))
def test_against_dense_eigendecomposition(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, 50))
    P = 6
    store = fit_pca(emb(x), P)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / 19
    w, V = np.linalg.eigh(cov)
    w, V = w[::-1], V[:, ::-1]
    np.testing.assert_allclose(store.eigenvalues, w[:P], rtol=1e-8)
    np.testing.assert_allclose(store.explained_ratio, w[:P] / w.sum(), rtol=1e-8)
    for p in range(P):
        v = V[:, p] * np.sign(V[np.argmax(np.abs(V[:, p])), p])
        np.testing.assert_allclose(store.loadings[:, p], v, atol=1e-8)
    gram = store.scores.T @ store.scores
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) <= 1e-8 * np.max(np.abs(np.diag(gram)))
    assert np.all(np.diff(store.explained_ratio) <= 0)
    assert store.explained_ratio.sum() <= 1 + 1e-12


def test_four_by_three_oracle():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 3))
    store = fit_pca(emb(x), 2)
    w = np.linalg.eigh(np.cov(x.T, ddof=1))[0][::-1]
    np.testing.assert_allclose(store.eigenvalues, w[:2], rtol=1e-8)


def test_rotation_invariance_of_ratios():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((12, 5))
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a = fit_pca(emb(x), 4).explained_ratio
    b = fit_pca(emb(x @ Q), 4).explained_ratio
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_reconstruction_beats_random_projections():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((15, 8)) @ rng.standard_normal((8, 8))
    store = fit_pca(emb(x), 3)
    xc = x - x.mean(axis=0)
    err = np.sum((xc - store.scores @ store.loadings.T) ** 2)
    for _ in range(50):
        Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        assert err <= np.sum((xc - xc @ Q @ Q.T) ** 2) + 1e-9


def test_model_scores_unit_variance():
    rng = np.random.default_rng(3)
    store = fit_pca(emb(rng.standard_normal((10, 6))), 3)
    np.testing.assert_allclose(store.model_scores().var(axis=0, ddof=1), 1.0)


def test_p_out_of_range():
    with pytest.raises(ValidationError):
        fit_pca(emb(np.eye(4)), 4)
    with pytest.raises(ValidationError):
        fit_pca(emb(np.eye(4)), 0)


def test_deterministic_and_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    e = emb(rng.standard_normal((9, 5)))
    a, b = fit_pca(e, 3), fit_pca(e, 3)
    assert a.scores.tobytes() == b.scores.tobytes()
    write_pcstore(tmp_path, a)
    back = load_pcstore(tmp_path)
    np.testing.assert_array_equal(back.scores, a.scores)
    np.testing.assert_array_equal(back.explained_ratio, a.explained_ratio)
    assert back.source == a.source and back.rows == a.rows
