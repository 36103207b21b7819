"""Truncated Fourier observables on a rescaled box.

A :class:`WaveLattice` enumerates integer wavevectors in lexicographic order.
In half mode only ``k = 0`` and the wavevectors whose first nonzero component
is positive are kept; for real states ``f_{-k} = conj(f_k)``, so nothing is
lost for ergodic (``omega = 0``) averages. In lexicographic order the half
lattice is exactly the tail of the full lattice starting at ``k = 0``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class WaveLattice:
    dim: int
    bounds: tuple[int, ...]
    half: bool
    waves: np.ndarray  # (L, dim) int64, lexicographic

    @property
    def size(self) -> int:
        return int(self.waves.shape[0])

    @property
    def zero_index(self) -> int:
        return 0 if self.half else (self.size - 1) // 2

    @property
    def digest(self) -> str:
        """Content hash used to tie averages to the lattice that produced them."""
        h = hashlib.sha256()
        h.update(f"{self.dim}|{self.bounds}|{int(self.half)}|".encode())
        h.update(np.ascontiguousarray(self.waves, dtype="<i8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        return isinstance(other, WaveLattice) and self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)

    def full(self) -> "WaveLattice":
        return self if not self.half else make_lattice(self.dim, self.bounds, half=False)


def make_lattice(dim: int, bounds: int | Sequence[int], half: bool = False) -> WaveLattice:
    """All integer wavevectors with ``|k_d| <= bounds[d]``, lexicographically ordered."""
    if isinstance(bounds, (int, np.integer)):
        bounds = (int(bounds),) * dim
    bounds = tuple(int(b) for b in bounds)
    if len(bounds) != dim:
        raise ValueError(f"got {len(bounds)} bounds for dimension {dim}")
    if any(b < 0 for b in bounds):
        raise ValueError("wavenumber bounds must be nonnegative")
    axes = [range(-b, b + 1) for b in bounds]
    waves = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, dim)
    if half:
        waves = waves[(waves.shape[0] - 1) // 2 :]
    waves.setflags(write=False)
    return WaveLattice(dim=dim, bounds=bounds, half=bool(half), waves=waves)


def rescale_state(domain: Sequence[Sequence[float]], x) -> np.ndarray:
    """Affine map of each axis ``[a_d, b_d]`` onto ``[0, 1]``."""
    lo = np.array([a for a, _ in domain], dtype=float)
    hi = np.array([b for _, b in domain], dtype=float)
    width = hi - lo
    if np.any(width == 0):
        raise ValueError(f"degenerate domain axis in {list(map(tuple, domain))}")
    return (np.asarray(x, dtype=float) - lo) / width


@dataclass(frozen=True, eq=False)
class ObservableBasis:
    """Normalized Fourier harmonics ``(2 pi)^(-D/2) exp(i 2 pi k . y)`` on a box.

    ``axes`` selects which state components the basis sees; for a system
    extended with a clock coordinate this keeps observables on the physical
    factor only.
    """

    lattice: WaveLattice
    domain: tuple[tuple[float, float], ...]
    axes: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def norm_const(self) -> float:
        return TWO_PI ** (-self.dim / 2.0)

    @property
    def size(self) -> int:
        return self.lattice.size

    def __call__(self, x, t=0.0, omega: float = 0.0) -> np.ndarray:
        return eval_basis(self, x, t, omega)


def make_basis(
    lattice: WaveLattice,
    domain: Sequence[Sequence[float]],
    axes: Sequence[int] | None = None,
) -> ObservableBasis:
    domain = tuple((float(a), float(b)) for a, b in domain)
    if len(domain) != lattice.dim:
        raise ValueError("domain must have one interval per lattice axis")
    if any(a == b for a, b in domain):
        raise ValueError("degenerate domain axis")
    axes = tuple(range(lattice.dim)) if axes is None else tuple(int(a) for a in axes)
    if len(axes) != lattice.dim:
        raise ValueError("axes must have one entry per lattice axis")
    return ObservableBasis(lattice=lattice, domain=domain, axes=axes)


def _phase_tables(basis: ObservableBasis, x: np.ndarray) -> list[np.ndarray]:
    y = rescale_state(basis.domain, x[:, basis.axes])
    y = y - np.floor(y)
    tables = []
    for d, K in enumerate(basis.lattice.bounds):
        ks = np.arange(K + 1, dtype=float)
        pos = np.exp(1j * TWO_PI * np.outer(y[:, d], ks))
        # columns ordered k = -K .. K
        tables.append(np.concatenate([np.conj(pos[:, :0:-1]), pos], axis=1))
    return tables


def eval_basis(basis: ObservableBasis, x, t=0.0, omega: float = 0.0) -> np.ndarray:
    """Evaluate every lattice observable at state(s) ``x``.

    Separable: one table of ``exp(i 2 pi k_d y_d)`` per axis, combined by
    products. With ``omega != 0`` the values are modulated by
    ``exp(i 2 pi omega t)``. Returns shape ``(L,)`` for one state or
    ``(n, L)`` for a batch.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    tables = _phase_tables(basis, X)
    waves = basis.lattice.waves
    out = tables[0][:, waves[:, 0] + basis.lattice.bounds[0]]
    for d in range(1, basis.dim):
        out = out * tables[d][:, waves[:, d] + basis.lattice.bounds[d]]
    out = out * basis.norm_const
    if omega != 0.0:
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        out = out * np.exp(1j * TWO_PI * omega * t)[:, None]
    return out[0] if single else out


def eval_basis_naive(basis: ObservableBasis, x, t=0.0, omega: float = 0.0) -> np.ndarray:
    """Per-wavevector evaluation; reference for the separable path."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = rescale_state(basis.domain, x[:, basis.axes])
    phase = y @ basis.lattice.waves.T.astype(float)
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    phase = phase + omega * t[:, None]
    return basis.norm_const * np.exp(1j * TWO_PI * phase)
