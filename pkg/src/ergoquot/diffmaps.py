"""Diffusion Maps on a precomputed distance matrix.

Pipeline: Gaussian heat kernel ``exp(-d^2 / 4h)`` -> division by the kernel
density estimate on both sides -> symmetric conjugate of the row-stochastic
transition matrix -> symmetric eigensolve -> right eigenvectors of the
transition matrix recovered by dividing by the top eigenvector.

The ``(4 pi)^(-d/2)`` kernel prefactor is left out: it cancels in both
normalizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import eigensolve_symmetric
from .metric import DistanceMatrix


class DiffusionError(ValueError):
    pass


@dataclass
class DiffusionEmbedding:
    """Eigenvalues, sup-normalized eigenfunctions and scaled coordinates.

    Column ``k`` of ``coords`` is ``eigvals[k] * eigfuncs[:, k]``; column 0 is
    the trivial constant coordinate.
    """

    h: float
    n_min: int
    eigvals: np.ndarray
    eigfuncs: np.ndarray
    coords: np.ndarray


def _matrix(dm) -> np.ndarray:
    d = dm.d if isinstance(dm, DistanceMatrix) else np.asarray(dm, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DiffusionError("distance matrix must be square")
    return d


def bandwidth_nss(dm, n_min: int) -> float:
    """Smallest ``h`` giving every sample ``n_min`` neighbours within ``sqrt(2h)``.

    Neighbour counts exclude the sample itself. The result is floored at
    ``1e-8 * median(d^2) / 2`` so duplicated samples still give a usable
    kernel.
    """
    d = _matrix(dm)
    n = d.shape[0]
    if n_min < 0 or n_min >= max(n, 1):
        raise DiffusionError(f"n_min={n_min} must be below the sample count {n}")
    h = 0.0
    if n_min > 0:
        off = d[~np.eye(n, dtype=bool)].reshape(n, n - 1)
        kth = np.sort(off, axis=1)[:, n_min - 1]
        h = float(np.max(kth)) ** 2 / 2.0
    return max(h, _bandwidth_floor(d))


def _bandwidth_floor(d: np.ndarray) -> float:
    iu = np.triu_indices(d.shape[0], 1)
    sq = d[iu] ** 2
    floor = 1e-8 * float(np.median(sq)) / 2.0 if sq.size else 0.0
    return max(floor, np.finfo(float).tiny)


def build_kernel(dm, h: float) -> np.ndarray:
    if not h > 0:
        raise DiffusionError("bandwidth h must be positive")
    d = _matrix(dm)
    return np.exp(-(d * d) / (4.0 * h))


def density_normalize(A: np.ndarray) -> np.ndarray:
    """Divide the kernel by the density estimate of both endpoints."""
    p = A.sum(axis=1)
    if np.any(p <= 0):
        raise DiffusionError("kernel has a zero row sum")
    return A / np.outer(p, p)


def symmetrize_transition(Ahat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the symmetric conjugate ``S_hat`` and the row sums of ``Ahat``.

    The Markov matrix is ``Ahat / rowsum[:, None]`` and has the same spectrum.
    """
    r = Ahat.sum(axis=1)
    sr = np.sqrt(r)
    S_hat = Ahat / np.outer(sr, sr)
    return S_hat, r


def transition_matrix(Ahat: np.ndarray) -> np.ndarray:
    return Ahat / Ahat.sum(axis=1)[:, None]


def diffusion_coordinates(
    eigvals: np.ndarray,
    eigvecs: np.ndarray,
    h: float = float("nan"),
    n_min: int = 0,
    gap_tol: float = 1e-12,
) -> DiffusionEmbedding:
    """Turn symmetric-problem eigenpairs into diffusion eigenfunctions.

    Each eigenvector is divided entrywise by the top one, sup-normalized and
    sign-fixed so its first clearly nonzero entry is positive.
    """
    eigvals = np.asarray(eigvals, dtype=float)
    V = np.asarray(eigvecs, dtype=float)
    if V.ndim != 2 or V.shape[1] != eigvals.size or eigvals.size == 0:
        raise DiffusionError("eigenpairs are malformed")
    if abs(eigvals[0] - 1.0) > 1e-8:
        raise DiffusionError(f"top eigenvalue {eigvals[0]!r} is not 1")
    if eigvals.size > 1 and eigvals[1] >= eigvals[0] - gap_tol:
        raise DiffusionError(
            "top eigenvalue is not simple: the kernel graph is disconnected, increase h"
        )
    v0 = V[:, 0]
    if np.any(v0 == 0) or not (np.all(v0 > 0) or np.all(v0 < 0)):
        raise DiffusionError("top eigenvector changes sign; spectrum is degenerate")
    chi = V / v0[:, None]
    chi[:, 0] = 1.0
    for k in range(1, chi.shape[1]):
        col = chi[:, k]
        amp = np.max(np.abs(col))
        if amp > 0:
            col = col / amp
            lead = np.nonzero(np.abs(col) > 1e-12)[0]
            if lead.size and col[lead[0]] < 0:
                col = -col
        chi[:, k] = col
    return DiffusionEmbedding(
        h=float(h),
        n_min=int(n_min),
        eigvals=eigvals.copy(),
        eigfuncs=chi,
        coords=chi * eigvals[None, :],
    )


def diffusion_map(
    dm,
    m: int = 11,
    n_min: int = 10,
    h: float | None = None,
    method: str = "auto",
) -> DiffusionEmbedding:
    """Embed samples given their pairwise distances.

    ``h`` overrides the neighbourhood-size heuristic. ``m`` counts the
    trivial pair and is clipped to the sample count.
    """
    d = _matrix(dm)
    n = d.shape[0]
    if n == 0:
        raise DiffusionError("empty distance matrix")
    if h is None:
        h = bandwidth_nss(d, min(n_min, n - 1))
    A = build_kernel(d, h)
    S_hat, _ = symmetrize_transition(density_normalize(A))
    vals, vecs = eigensolve_symmetric(S_hat, min(m, n), method=method)
    return diffusion_coordinates(vals, vecs, h=h, n_min=n_min)
