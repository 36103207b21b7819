import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergoquot.diffmaps import (
    DiffusionError,
    bandwidth_nss,
    build_kernel,
    density_normalize,
    diffusion_coordinates,
    diffusion_map,
    symmetrize_transition,
    transition_matrix,
)
from ergoquot.eigen import eigensolve_symmetric


def euclid(P):
    return np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)


def test_kernel_values():
    d = np.array([[0.0, 2.0], [2.0, 0.0]])
    A = build_kernel(d, 1.0)
    assert A[0, 0] == 1.0
    assert A[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)
    with pytest.raises(DiffusionError):
        build_kernel(d, 0.0)


def test_bandwidth_collinear():
    d = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    assert bandwidth_nss(d, 1) == 0.5
    assert bandwidth_nss(d, 2) == 2.0
    with pytest.raises(DiffusionError):
        bandwidth_nss(d, 3)


def test_bandwidth_floor_on_duplicates():
    d = np.zeros((4, 4))
    d[0, 3] = d[3, 0] = 1.0
    h = bandwidth_nss(d, 1)
    assert h > 0


def test_bandwidth_neighbour_property(rng):
    P = rng.random((40, 2))
    d = euclid(P)
    for n_min in (1, 5, 10):
        h = bandwidth_nss(d, n_min)
        counts = (d <= np.sqrt(2 * h) * (1 + 1e-12)).sum(axis=1) - 1
        assert counts.min() >= n_min


def test_density_normalize_examples():
    assert density_normalize(np.array([[1.0]])).tolist() == [[1.0]]
    a, n = 0.3, 4
    Ahat = density_normalize(np.full((n, n), a))
    np.testing.assert_allclose(Ahat, 1 / (n * n * a), rtol=1e-15)


def test_symmetrize_examples():
    S, _ = symmetrize_transition(np.array([[1.0]]))
    assert S.tolist() == [[1.0]]
    S, r = symmetrize_transition(np.ones((2, 2)))
    np.testing.assert_allclose(S, 0.5)
    w, _ = eigensolve_symmetric(S)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-15)


@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
@settings(max_examples=40, deadline=None)
def test_markov_invariants(n, seed, h):
    P = np.random.default_rng(seed).random((n, 3))
    A = build_kernel(euclid(P), h)
    Ahat = density_normalize(A)
    assert np.array_equal(Ahat, Ahat.T)
    S_hat, _ = symmetrize_transition(Ahat)
    assert np.array_equal(S_hat, S_hat.T)
    np.testing.assert_allclose(transition_matrix(Ahat).sum(axis=1), 1.0, atol=1e-12)
    w, _ = eigensolve_symmetric(S_hat)
    assert np.all(np.abs(w) <= 1 + 1e-8)
    assert w[0] == pytest.approx(1.0, abs=1e-8)


def test_embedding_invariants(rng):
    P = rng.random((60, 3))
    emb = diffusion_map(euclid(P), m=6, n_min=8)
    assert emb.eigvals[0] == pytest.approx(1.0, abs=1e-8)
    assert np.all(np.abs(emb.eigfuncs[:, 0] - 1.0) <= 1e-8)
    assert np.all(np.diff(emb.eigvals) <= 0)
    assert np.all(np.abs(emb.eigvals) <= 1 + 1e-8)
    np.testing.assert_allclose(np.abs(emb.eigfuncs).max(axis=0), 1.0, rtol=1e-14)
    np.testing.assert_array_equal(emb.coords, emb.eigfuncs * emb.eigvals)
    for k in range(1, 6):
        col = emb.eigfuncs[:, k]
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_right_eigenvectors_of_markov_matrix(rng):
    P = rng.random((30, 2))
    d = euclid(P)
    emb = diffusion_map(d, m=5, n_min=5)
    S = transition_matrix(density_normalize(build_kernel(d, emb.h)))
    for k in range(5):
        np.testing.assert_allclose(S @ emb.eigfuncs[:, k], emb.eigvals[k] * emb.eigfuncs[:, k], atol=1e-10)


def test_two_clusters_sign_split(rng):
    P = np.vstack([rng.normal(0, 0.05, (25, 2)), rng.normal(3, 0.05, (25, 2))])
    emb = diffusion_map(euclid(P), m=3, h=2.0)
    chi = emb.eigfuncs[:, 1]
    assert np.all(np.sign(chi[:25]) == np.sign(chi[0]))
    assert np.all(np.sign(chi[25:]) == -np.sign(chi[0]))
    assert np.ptp(chi[:25]) < 0.1 and np.ptp(chi[25:]) < 0.1


def test_disconnected_graph_reported(rng):
    P = np.vstack([np.zeros((5, 1)), np.full((5, 1), 100.0)])
    P = P + rng.normal(0, 1e-3, P.shape)
    with pytest.raises(DiffusionError):
        diffusion_map(euclid(P), m=3, h=1e-3)


def test_ring_is_circle():
    th = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    P = np.c_[np.cos(th), np.sin(th)]
    emb = diffusion_map(euclid(P), m=3, n_min=10)
    r = np.hypot(emb.coords[:, 1], emb.coords[:, 2])
    assert r.std() / r.mean() < 0.05


def test_single_sample():
    emb = diffusion_map(np.zeros((1, 1)), m=11, n_min=10)
    assert emb.eigvals.tolist() == [1.0]
    assert emb.coords.shape == (1, 1)


def test_deterministic(rng):
    d = euclid(rng.random((50, 2)))
    a = diffusion_map(d, m=5)
    b = diffusion_map(d, m=5)
    assert np.array_equal(a.coords, b.coords) and a.h == b.h


def test_coordinates_checks():
    with pytest.raises(DiffusionError):
        diffusion_coordinates(np.array([0.9, 0.5]), np.eye(2))
    with pytest.raises(DiffusionError):
        diffusion_coordinates(np.array([1.0, 1.0]), np.eye(2) / np.sqrt(1))
