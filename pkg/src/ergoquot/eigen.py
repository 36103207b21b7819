"""Dense symmetric eigensolvers.

Two self-contained routes:

* cyclic Jacobi with round-robin (parallel) ordering, where every round
  applies ``n/2`` disjoint plane rotations at once as whole-row and
  whole-column numpy operations;
* Householder tridiagonalization followed by the implicit-shift QL
  iteration, used for larger matrices.

Both return all eigenpairs; :func:`eigensolve_symmetric` sorts them in
descending order and truncates.
"""

from __future__ import annotations

import math

import numpy as np

JACOBI_MAX_N = 512


class EigenError(RuntimeError):
    """The iteration did not converge within its cap."""


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _rotate_rows(M: np.ndarray, p, q, c, s) -> None:
    Mp = M[p]
    Mq = M[q]
    M[p] = c * Mp - s * Mq
    M[q] = s * Mp + c * Mq


def eigh_jacobi(A, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` unsorted, ``A V = V diag(w)``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    if n <= 1:
        return np.diag(A).copy(), V
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    rounds = _round_robin(n)
    # V is kept transposed so every update is a contiguous row operation
    Vt = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            live = apq != 0.0
            safe = np.where(live, apq, 1.0)
            # tiny apq overflows tau to inf, which correctly gives t = 0
            with np.errstate(over="ignore"):
                tau = (aqq - app) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = np.where(live, 1.0 / np.hypot(1.0, t), 1.0)[:, None]
            s = np.where(live, t * c[:, 0], 0.0)[:, None]
            # A <- J^T A J: rotate rows, transpose, rotate rows again
            _rotate_rows(A, p, q, c, s)
            A = np.ascontiguousarray(A.T)
            _rotate_rows(A, p, q, c, s)
            A[p, q] = 0.0
            A[q, p] = 0.0
            _rotate_rows(Vt, p, q, c, s)
        A = 0.5 * (A + A.T)
    else:
        off = math.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off > tol * scale * 1e3:
            raise EigenError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off:.3e})")
    V = Vt.T.copy()
    return np.diag(A).copy(), V


def _tred2(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Householder reduction to tridiagonal form, accumulating the transform."""
    V = np.array(A, dtype=float)
    n = V.shape[0]
    d = V[n - 1, :].copy()
    e = np.zeros(n)
    for i in range(n - 1, 0, -1):
        scale = np.sum(np.abs(d[:i]))
        h = 0.0
        if scale == 0.0:
            e[i] = d[i - 1]
            d[:i] = V[i - 1, :i]
            V[i, :i] = 0.0
            V[:i, i] = 0.0
        else:
            d[:i] /= scale
            h = float(np.dot(d[:i], d[:i]))
            f = d[i - 1]
            g = math.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h -= f * g
            d[i - 1] = f - g
            u = d[:i].copy()
            V[:i, i] = u
            low = np.tril(V[:i, :i])
            p = low.T @ u + np.tril(low, -1) @ u
            p /= h
            f = float(np.dot(p, u))
            hh = f / (h + h)
            p -= hh * u
            e[:i] = p
            V[:i, :i] -= np.tril(np.outer(p, u) + np.outer(u, p))
            d[:i] = V[i - 1, :i]
            V[i, :i] = 0.0
        d[i] = h
    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            col = V[: i + 1, i + 1]
            dd = col / h
            g = col @ V[: i + 1, : i + 1]
            V[: i + 1, : i + 1] -= np.outer(dd, g)
        V[: i + 1, i + 1] = 0.0
    d = V[n - 1, :].copy()
    V[n - 1, :] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0
    return d, e, V


def _tql2(d: np.ndarray, e: np.ndarray, V: np.ndarray, max_iter: int = 60):
    n = d.size
    e[:-1] = e[1:]
    e[-1] = 0.0
    f = 0.0
    tst1 = 0.0
    eps = np.finfo(float).eps
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1 and abs(e[m]) > eps * tst1:
            m += 1
        if m > l:
            it = 0
            while True:
                it += 1
                if it > max_iter:
                    raise EigenError(f"QL iteration did not converge for eigenvalue {l}")
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2 :] -= h
                f += h
                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    vi = V[:, i].copy()
                    vi1 = V[:, i + 1].copy()
                    V[:, i + 1] = s * vi + c * vi1
                    V[:, i] = c * vi - s * vi1
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] += f
        e[l] = 0.0
    return d, V


def eigh_ql(A) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs via tridiagonalization and implicit-shift QL (unsorted)."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if n <= 1:
        return np.diag(A).copy(), np.eye(n)
    d, e, V = _tred2(A)
    return _tql2(d, e, V)


def eigensolve_symmetric(
    S, m: int | None = None, method: str = "auto"
) -> tuple[np.ndarray, np.ndarray]:
    """Top-``m`` eigenpairs of a symmetric matrix, eigenvalues descending.

    ``method`` is ``"jacobi"``, ``"ql"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_N``). Eigenvectors are the orthonormal columns of the result.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("matrix must be square")
    n = S.shape[0]
    if not np.array_equal(S, S.T):
        asym = np.max(np.abs(S - S.T))
        if asym > 1e-12 * max(1.0, np.max(np.abs(S))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        S = 0.5 * (S + S.T)
    m = n if m is None else int(m)
    if not 0 <= m <= n:
        raise ValueError(f"cannot take {m} pairs of a {n}x{n} matrix")
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_N else "ql"
    if method == "jacobi":
        w, V = eigh_jacobi(S)
    elif method == "ql":
        w, V = eigh_ql(S)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")[:m]
    return w[order], V[:, order]
