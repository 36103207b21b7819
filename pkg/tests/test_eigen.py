import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ergoquot.eigen import eigensolve_symmetric, eigh_jacobi, eigh_ql


def cubic_roots_symmetric(A):
    """Eigenvalues of a symmetric 3x3 via the trigonometric solution of its characteristic cubic."""
    a, b, c = A[0, 0], A[1, 1], A[2, 2]
    d, e, f = A[0, 1], A[1, 2], A[0, 2]
    # det(lambda I - A) = lambda^3 + p2 lambda^2 + p1 lambda + p0
    p2 = -(a + b + c)
    p1 = a * b + b * c + a * c - d * d - e * e - f * f
    p0 = -(a * b * c + 2 * d * e * f - a * e * e - b * f * f - c * d * d)
    shift = -p2 / 3
    P = p1 - p2 * p2 / 3
    Q = 2 * p2**3 / 27 - p2 * p1 / 3 + p0
    if abs(P) < 1e-300:
        return sorted([shift] * 3, reverse=True)
    m = 2 * math.sqrt(-P / 3)
    arg = max(-1.0, min(1.0, 3 * Q / (P * m)))
    theta = math.acos(arg) / 3
    roots = [shift + m * math.cos(theta - 2 * math.pi * j / 3) for j in range(3)]
    return sorted(roots, reverse=True)


def sym(M):
    return (M + M.T) / 2


def test_swap_matrix():
    w, V = eigensolve_symmetric(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-15)


def test_identity():
    for method in ("jacobi", "ql"):
        w, V = eigensolve_symmetric(np.eye(5), method=method)
        assert np.all(w == 1.0)


@pytest.mark.parametrize("method", ["jacobi", "ql"])
def test_three_by_three_oracle(method, rng):
    for _ in range(50):
        A = sym(rng.normal(size=(3, 3)))
        w, _ = eigensolve_symmetric(A, method=method)
        np.testing.assert_allclose(w, cubic_roots_symmetric(A), atol=1e-10)


@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)), st.sampled_from(["jacobi", "ql"]))
@settings(max_examples=60, deadline=None)
def test_reconstruction(M, method):
    A = sym(M)
    w, V = eigensolve_symmetric(A, method=method)
    assert np.max(np.abs(V @ np.diag(w) @ V.T - A)) < 1e-10 * max(1.0, np.abs(A).max())
    assert np.max(np.abs(V.T @ V - np.eye(6))) < 1e-12
    assert np.all(np.diff(w) <= 0)


@pytest.mark.parametrize("n", [1, 2, 7, 40, 101])
def test_solvers_agree_with_numpy(n, rng):
    A = sym(rng.normal(size=(n, n)))
    ref = np.sort(np.linalg.eigvalsh(A))[::-1]
    for method in ("jacobi", "ql"):
        w, V = eigensolve_symmetric(A, method=method)
        np.testing.assert_allclose(w, ref, atol=1e-11)
        np.testing.assert_allclose(A @ V, V * w, atol=1e-10)


def test_truncation_and_errors(rng):
    A = sym(rng.normal(size=(5, 5)))
    w, V = eigensolve_symmetric(A, 2)
    assert w.shape == (2,) and V.shape == (5, 2)
    with pytest.raises(ValueError):
        eigensolve_symmetric(A, 6)
    with pytest.raises(ValueError):
        eigensolve_symmetric(A + np.triu(np.ones((5, 5)), 1))
    with pytest.raises(ValueError):
        eigensolve_symmetric(A, method="lapack")


def test_degenerate_spectrum(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    A = sym(Q @ np.diag([3, 3, 1, 1, 1, -2.0]) @ Q.T)
    for fn in (eigh_jacobi, eigh_ql):
        w, V = fn(A)
        np.testing.assert_allclose(np.sort(w), [-2, 1, 1, 1, 3, 3], atol=1e-12)
