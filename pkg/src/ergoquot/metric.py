"""Negative-order Sobolev distance between averaged-observable vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .integrator import QuotientSample
from .observables import WaveLattice

TWO_PI = 2.0 * math.pi


class MetricError(ValueError):
    pass


def sobolev_weight(k, s: float) -> float:
    """``[1 + (2 pi |k|_2)^2]^(-s)``."""
    k = np.asarray(k, dtype=float)
    return float((1.0 + (TWO_PI * np.linalg.norm(k)) ** 2) ** (-s))


@dataclass(frozen=True, eq=False)
class SobolevParams:
    """Per-wavevector weights for one lattice.

    On a half lattice every ``k != 0`` weight is doubled to account for the
    conjugate entry at ``-k``.
    """

    s: float
    lattice: WaveLattice
    weights: np.ndarray


def sobolev_params(lattice: WaveLattice, s: float | None = None) -> SobolevParams:
    if s is None:
        s = (lattice.dim + 1) / 2.0
    k2 = np.sum(lattice.waves.astype(float) ** 2, axis=1)
    w = (1.0 + TWO_PI**2 * k2) ** (-float(s))
    if lattice.half:
        w = np.where(k2 > 0, 2.0 * w, w)
    w.setflags(write=False)
    return SobolevParams(s=float(s), lattice=lattice, weights=w)


def _weighted_norm(diff: np.ndarray, w: np.ndarray) -> np.ndarray:
    # shared by distance() and pairwise_matrix() so entries agree bitwise
    return np.sqrt(np.sum(w * (diff.real * diff.real + diff.imag * diff.imag), axis=-1))


def _coefficients(sample, params: SobolevParams) -> np.ndarray:
    if isinstance(sample, QuotientSample):
        if sample.lattice_digest and sample.lattice_digest != params.lattice.digest:
            raise MetricError("sample was averaged on a different lattice")
        sample = sample.averages
    F = np.asarray(sample, dtype=complex)
    if F.shape[-1] != params.lattice.size:
        raise MetricError(f"vector length {F.shape[-1]} does not match lattice size {params.lattice.size}")
    return F


def distance(a, b, params: SobolevParams) -> float:
    """Weighted l2 distance between two coefficient vectors (or samples)."""
    if isinstance(a, QuotientSample) and isinstance(b, QuotientSample) and a.omega != b.omega:
        raise MetricError("samples use different harmonic frequencies")
    Fa = _coefficients(a, params)
    Fb = _coefficients(b, params)
    return float(_weighted_norm(Fa - Fb, params.weights))


@dataclass
class DistanceMatrix:
    d: np.ndarray
    sample_ids: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.d.shape[0])


def pairwise_matrix(
    ensemble: Sequence[QuotientSample] | np.ndarray,
    params: SobolevParams,
    sample_ids: Sequence[int] | None = None,
) -> DistanceMatrix:
    """Dense symmetric distance matrix; each upper-triangle entry is computed once."""
    if isinstance(ensemble, np.ndarray):
        F = _coefficients(ensemble, params)
        omegas = set()
    else:
        ensemble = list(ensemble)
        if not ensemble:
            raise MetricError("empty ensemble")
        F = np.array([_coefficients(s, params) for s in ensemble]).reshape(len(ensemble), -1)
        omegas = {s.omega for s in ensemble if isinstance(s, QuotientSample)}
    if F.ndim != 2 or F.shape[0] == 0:
        raise MetricError("empty ensemble")
    if len(omegas) > 1:
        raise MetricError("ensemble mixes harmonic frequencies")
    if not np.all(np.isfinite(F)):
        raise MetricError("ensemble contains non-finite averages")
    n = F.shape[0]
    d = np.zeros((n, n))
    for i in range(n - 1):
        row = _weighted_norm(F[i + 1 :] - F[i], params.weights)
        d[i, i + 1 :] = row
        d[i + 1 :, i] = row
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    meta = {
        "s": params.s,
        "lattice": params.lattice.digest,
        "omega": next(iter(omegas)) if omegas else 0.0,
    }
    return DistanceMatrix(d=d, sample_ids=ids, meta=meta)


def truncation_bound(D: int, K: int) -> tuple[float, float]:
    """Closed-form rate constant for the box-truncation tail and its value at ``K``.

    Returns ``(E, E / sqrt(K))`` with ``E = (2/pi)^(3/4) D^(1/4) / pi^D``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    E = (2.0 / math.pi) ** 0.75 * D**0.25 / math.pi**D
    return E, E / math.sqrt(K)


def truncation_tail(coeffs: np.ndarray, waves: np.ndarray, K: int, s: float) -> float:
    """Root of the weighted tail sum over wavevectors outside ``[-K, K]^D``."""
    waves = np.asarray(waves)
    outside = np.max(np.abs(waves), axis=1) > K
    k2 = np.sum(waves[outside].astype(float) ** 2, axis=1)
    w = (1.0 + TWO_PI**2 * k2) ** (-s)
    c = np.asarray(coeffs, dtype=float)[outside]
    return float(math.sqrt(np.sum(w * c * c)))
