"""Adaptive integration with on-line trajectory averaging.

The stepper is the Dormand-Prince 5(4) pair with a PI step-size controller.
It advances a *batch* of independent trajectories in lockstep, each with its
own time, step size and accept/reject decision, so an ensemble costs a few
numpy calls per step rather than a Python loop per trajectory. Rows never
interact; a batch of one is the single-trajectory case.

Averages use the left-endpoint rule over the accepted steps,
``(1/T) sum (t_n - t_{n-1}) f(x_{n-1}) exp(i 2 pi omega t_{n-1})``. Sums are
kept relative to the first sample so that a constant observable averages to
itself exactly.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import ExtendedSystem, FlowSystem, as_flow
from .observables import ObservableBasis, eval_basis

TWO_PI = 2.0 * math.pi

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B - _B_LOW

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


class IntegrationError(RuntimeError):
    """Step-size underflow or a non-finite state."""


@dataclass(frozen=True)
class AveragingConfig:
    """Stopping rule and integrator settings for one averaging run.

    Pauses fall every ``t_e`` time units; after a pause at elapsed time at
    least ``t_min``, integration stops once the sup-norm change of the
    averages since the previous pause is below ``atol_stop``. ``t_max``
    defaults to ``5 * t_min`` and ``max_step`` to ``t_e``.
    """

    atol_stop: float = 1e-4
    t_min: float = 500.0
    t_e: float = 50.0
    t_max: float | None = None
    ode_rtol: float = 1e-6
    ode_atol: float = 1e-9
    omega: float = 0.0
    max_step: float | None = None

    def __post_init__(self):
        if not self.t_e > 0:
            raise ValueError("t_e must be positive")
        if not self.atol_stop > 0:
            raise ValueError("atol_stop must be positive")
        if self.t_min < 0:
            raise ValueError("t_min must be nonnegative")
        if self.t_max is not None and self.t_max < self.t_min:
            raise ValueError("t_max must not be smaller than t_min")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not (self.ode_rtol > 0 and self.ode_atol > 0):
            raise ValueError("ODE tolerances must be positive")

    @property
    def horizon(self) -> float:
        return 5.0 * self.t_min if self.t_max is None else self.t_max

    @property
    def step_cap(self) -> float:
        return self.t_e if self.max_step is None else min(self.max_step, self.t_e)

    def pause_grid(self) -> np.ndarray:
        """Elapsed times of the pauses, the last one clipped to the horizon."""
        end = self.horizon
        n = max(1, int(math.ceil(end / self.t_e - 1e-12)))
        grid = self.t_e * np.arange(1, n + 1, dtype=float)
        grid[-1] = min(grid[-1], end) if end > 0 else self.t_e
        return grid


@dataclass
class QuotientSample:
    """One trajectory's averaged observables and how the run ended."""

    x0: np.ndarray
    omega: float
    averages: np.ndarray
    stop_time: float
    final_adiff: float
    converged: bool
    n_steps: int
    failed: bool = False
    message: str = ""
    lattice_digest: str = ""


def adiff(F: np.ndarray, F_prev: np.ndarray) -> float:
    """Sup-norm of the change between two average vectors."""
    F = np.asarray(F)
    F_prev = np.asarray(F_prev)
    if F.shape != F_prev.shape:
        raise ValueError(f"length mismatch: {F.shape} vs {F_prev.shape}")
    if F.size == 0:
        return 0.0
    return float(np.max(np.abs(F - F_prev)))


@dataclass
class RunningAverage:
    """Weighted sums of observable values over elapsed time.

    ``ref`` is the first value added; sums are of ``dt * (f - ref)``.
    """

    ref: np.ndarray | None = None
    weighted: np.ndarray | None = None
    elapsed: float = 0.0

    def add(self, values, dt: float) -> "RunningAverage":
        values = np.asarray(values, dtype=complex)
        if self.ref is None:
            self.ref = values.copy()
            self.weighted = np.zeros_like(values)
        self.weighted = self.weighted + dt * (values - self.ref)
        self.elapsed += dt
        return self

    def merge(self, other: "RunningAverage") -> "RunningAverage":
        if other.ref is None:
            return self
        if self.ref is None:
            return RunningAverage(other.ref.copy(), other.weighted.copy(), other.elapsed)
        shift = other.elapsed * (other.ref - self.ref)
        return RunningAverage(
            self.ref.copy(), self.weighted + other.weighted + shift, self.elapsed + other.elapsed
        )

    def value(self) -> np.ndarray:
        if self.ref is None or self.elapsed <= 0:
            raise ValueError("no elapsed time to average over")
        return self.ref + self.weighted / self.elapsed


def accumulate(
    state: RunningAverage,
    step: tuple[float, np.ndarray, float],
    basis: ObservableBasis,
    omega: float = 0.0,
) -> RunningAverage:
    """Add one step ``(t_prev, x_prev, t_next)`` using the left-endpoint value."""
    t_prev, x_prev, t_next = step
    values = eval_basis(basis, x_prev, t_prev, omega)
    return state.add(values, t_next - t_prev)


# --- stepping -------------------------------------------------------------


def _rms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(v * v, axis=-1))


def _initial_step(rhs, t, x, f0, rtol, atol, hmax):
    sc = atol + rtol * np.abs(x)
    d0 = _rms(x / sc)
    d1 = _rms(f0 / sc)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, hmax)
    f1 = rhs(x + h0[:, None] * f0, t + h0)
    d2 = _rms((f1 - f0) / sc) / h0
    dmax = np.maximum(d1, d2)
    with np.errstate(divide="ignore"):
        h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / dmax) ** (1.0 / 5.0))
    h = np.minimum(100.0 * h0, h1)
    h = np.where(np.isfinite(h), h, 1e-6)
    return np.minimum(h, hmax)


def _attempt(rhs, t, x, h, k1, rtol, atol):
    """One Dormand-Prince step for every row; returns (x_new, f_new, err_norm)."""
    hc = h[:, None]
    ks = [k1]
    for i in range(1, 7):
        dx = sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(rhs(x + hc * dx, t + _C[i] * h))
    x_new = x + hc * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
    f_new = ks[6]
    err = hc * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    sc = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
    with np.errstate(invalid="ignore"):
        err_norm = _rms(err / sc)
    bad = ~np.isfinite(err_norm) | ~np.all(np.isfinite(x_new), axis=-1) | ~np.all(np.isfinite(f_new), axis=-1)
    err_norm = np.where(bad, np.inf, err_norm)
    return x_new, f_new, err_norm


def _next_step(h, err_norm, err_prev, accepted):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        grow = _SAFETY * err_norm ** (-_ALPHA) * err_prev**_BETA
        shrink = _SAFETY * err_norm ** (-0.2)
    grow = np.where(err_norm == 0, _MAX_FACTOR, grow)
    grow = np.clip(np.nan_to_num(grow, nan=_MAX_FACTOR, posinf=_MAX_FACTOR), _MIN_FACTOR, _MAX_FACTOR)
    shrink = np.clip(np.nan_to_num(shrink, nan=_MIN_FACTOR, posinf=1.0), _MIN_FACTOR, 1.0)
    return h * np.where(accepted, grow, shrink)


def _min_step(t):
    return 16.0 * np.finfo(float).eps * np.maximum(np.abs(t), 1.0)


def integrate_adaptive(
    system: FlowSystem | ExtendedSystem,
    x0,
    t0: float,
    t1: float,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    max_step: float = np.inf,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate one trajectory and return the accepted time grid and states.

    The grid starts at ``t0`` and ends exactly at ``t1``.
    """
    flow = as_flow(system)
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    x = np.asarray(x0, dtype=float).reshape(1, flow.dim).copy()
    rhs = flow.rhs
    t = np.array([float(t0)])
    k1 = rhs(x, t)
    if not np.all(np.isfinite(k1)):
        raise IntegrationError(f"non-finite velocity at initial state {x[0].tolist()}")
    h = _initial_step(rhs, t, x, k1, rtol, atol, max_step)
    err_prev = np.ones(1)
    ts = [float(t0)]
    xs = [x[0].copy()]
    while t[0] < t1:
        hh = np.minimum(h, max_step)
        land = t + hh * (1.0 + 1e-12) >= t1
        hh = np.where(land, t1 - t, hh)
        x_new, f_new, err_norm = _attempt(rhs, t, x, hh, k1, rtol, atol)
        ok = err_norm <= 1.0
        if ok[0]:
            t = np.where(land, t1, t + hh)
            x = x_new
            k1 = f_new
            ts.append(float(t[0]))
            xs.append(x[0].copy())
            err_prev = np.maximum(err_norm, 1e-4)
        h = _next_step(hh, err_norm, err_prev, ok)
        if h[0] < _min_step(t)[0]:
            raise IntegrationError(f"step size underflow at t={t[0]}")
    return np.array(ts), np.array(xs)


# --- batched averaging ----------------------------------------------------


@dataclass
class _BatchResult:
    averages: np.ndarray
    stop_time: np.ndarray
    final_adiff: np.ndarray
    converged: np.ndarray
    n_steps: np.ndarray
    failed: np.ndarray
    messages: list[str]
    history: list[list[tuple[float, float]]] = field(default_factory=list)


def _average_batch(
    flow: FlowSystem,
    X0: np.ndarray,
    basis: ObservableBasis,
    t0: float,
    pauses: np.ndarray,
    cfg: AveragingConfig,
    stop: bool,
) -> _BatchResult:
    """Integrate rows of ``X0`` with pauses at ``t0 + pauses``.

    With ``stop`` the ADIFF rule retires rows; otherwise every row runs to the
    last pause and the ADIFF history is recorded.
    """
    rhs = flow.rhs
    omega = cfg.omega
    rtol, atol = cfg.ode_rtol, cfg.ode_atol
    n = X0.shape[0]
    L = basis.size
    hmax = cfg.step_cap

    out = _BatchResult(
        averages=np.full((n, L), np.nan, dtype=complex),
        stop_time=np.zeros(n),
        final_adiff=np.full(n, np.inf),
        converged=np.zeros(n, dtype=bool),
        n_steps=np.zeros(n, dtype=np.int64),
        failed=np.zeros(n, dtype=bool),
        messages=[""] * n,
        history=[[] for _ in range(n)],
    )

    rows = np.arange(n)
    x = np.array(X0, dtype=float)
    t = np.full(n, float(t0))
    k1 = rhs(x, t)
    bad = ~np.all(np.isfinite(k1), axis=1)
    for r in rows[bad]:
        out.failed[r] = True
        out.messages[r] = "non-finite velocity at initial state"
    keep = ~bad
    rows, x, t, k1 = rows[keep], x[keep], t[keep], k1[keep]
    if rows.size == 0:
        return out

    h = _initial_step(rhs, t, x, k1, rtol, atol, hmax)
    err_prev = np.ones(rows.size)
    fval = eval_basis(basis, x, t, omega)
    ref = fval.copy()
    wsum = np.zeros_like(fval)
    elapsed = np.zeros(rows.size)
    F_prev = fval.copy()
    pause_idx = np.zeros(rows.size, dtype=np.int64)
    target = t0 + pauses[pause_idx]
    steps = np.zeros(rows.size, dtype=np.int64)

    while rows.size:
        hh = np.minimum(h, hmax)
        land = t + hh * (1.0 + 1e-12) >= target
        hh = np.where(land, target - t, hh)
        x_new, f_new, err_norm = _attempt(rhs, t, x, hh, k1, rtol, atol)
        ok = err_norm <= 1.0

        if np.any(ok):
            idx = np.nonzero(ok)[0]
            dt = hh[idx]
            wsum[idx] += dt[:, None] * (fval[idx] - ref[idx])
            elapsed[idx] += dt
            t_new = np.where(land[idx], target[idx], t[idx] + dt)
            t[idx] = t_new
            x[idx] = x_new[idx]
            k1[idx] = f_new[idx]
            fval[idx] = eval_basis(basis, x[idx], t_new, omega)
            steps[idx] += 1
            err_prev[idx] = np.maximum(err_norm[idx], 1e-4)

        h = _next_step(hh, err_norm, err_prev, ok)

        retire = np.zeros(rows.size, dtype=bool)
        underflow = h < _min_step(t)
        if np.any(underflow):
            for i in np.nonzero(underflow)[0]:
                r = rows[i]
                out.failed[r] = True
                out.messages[r] = f"step size underflow at t={t[i]:.6g}"
                out.stop_time[r] = t[i] - t0
                out.n_steps[r] = steps[i]
            retire |= underflow

        paused = ok & land & ~retire
        for i in np.nonzero(paused)[0]:
            r = rows[i]
            F = ref[i] + wsum[i] / elapsed[i]
            change = adiff(F, F_prev[i])
            F_prev[i] = F
            T = t[i] - t0
            out.history[r].append((T, change))
            last = pause_idx[i] + 1 >= pauses.size
            done = stop and T >= cfg.t_min * (1.0 - 1e-12) and change < cfg.atol_stop
            if done or last:
                out.averages[r] = F
                out.stop_time[r] = T
                out.final_adiff[r] = change
                out.converged[r] = done
                out.n_steps[r] = steps[i]
                retire[i] = True
            else:
                pause_idx[i] += 1
                target[i] = t0 + pauses[pause_idx[i]]

        if np.any(retire):
            keep = ~retire
            rows, x, t, k1, h, err_prev = rows[keep], x[keep], t[keep], k1[keep], h[keep], err_prev[keep]
            fval, ref, wsum, elapsed, F_prev = fval[keep], ref[keep], wsum[keep], elapsed[keep], F_prev[keep]
            pause_idx, target, steps = pause_idx[keep], target[keep], steps[keep]
    return out


def _to_samples(X0, res: _BatchResult, cfg: AveragingConfig, basis: ObservableBasis):
    samples = []
    for r in range(X0.shape[0]):
        samples.append(
            QuotientSample(
                x0=np.array(X0[r], dtype=float),
                omega=cfg.omega,
                averages=res.averages[r],
                stop_time=float(res.stop_time[r]),
                final_adiff=float(res.final_adiff[r]),
                converged=bool(res.converged[r]),
                n_steps=int(res.n_steps[r]),
                failed=bool(res.failed[r]),
                message=res.messages[r],
                lattice_digest=basis.lattice.digest,
            )
        )
    return samples


def run_until_converged(
    system: FlowSystem | ExtendedSystem,
    x0,
    basis: ObservableBasis,
    cfg: AveragingConfig,
    t0: float = 0.0,
) -> QuotientSample:
    """Average along one trajectory until the ADIFF rule fires or the horizon is hit."""
    flow = as_flow(system)
    X0 = np.asarray(x0, dtype=float).reshape(1, flow.dim)
    res = _average_batch(flow, X0, basis, t0, cfg.pause_grid(), cfg, stop=True)
    return _to_samples(X0, res, cfg, basis)[0]


def worker_count() -> int:
    env = os.environ.get("ERGOQUOT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_ensemble(
    system: FlowSystem | ExtendedSystem,
    X0,
    basis: ObservableBasis,
    cfg: AveragingConfig,
    t0: float = 0.0,
    chunk: int = 64,
    workers: int | None = None,
) -> list[QuotientSample]:
    """Average every initial condition; results are ordered by input row.

    Rows are cut into fixed chunks independent of the worker count, so the
    output does not depend on scheduling.
    """
    flow = as_flow(system)
    X0 = np.asarray(X0, dtype=float).reshape(-1, flow.dim)
    pauses = cfg.pause_grid()
    starts = list(range(0, X0.shape[0], chunk))

    def job(s):
        block = X0[s : s + chunk]
        return _to_samples(block, _average_batch(flow, block, basis, t0, pauses, cfg, stop=True), cfg, basis)

    workers = workers or worker_count()
    if workers <= 1 or len(starts) <= 1:
        parts = [job(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    return [s for part in parts for s in part]


def convergence_probe(
    system: FlowSystem | ExtendedSystem,
    x0,
    basis: ObservableBasis,
    pause_grid: Sequence[float],
    cfg: AveragingConfig | None = None,
    t0: float = 0.0,
) -> list[tuple[float, float]]:
    """ADIFF at each pause of an explicit grid of elapsed times (no early stop)."""
    flow = as_flow(system)
    cfg = cfg or AveragingConfig()
    grid = np.asarray(pause_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("pause grid must be positive and strictly increasing")
    X0 = np.asarray(x0, dtype=float).reshape(1, flow.dim)
    res = _average_batch(flow, X0, basis, t0, grid, cfg, stop=False)
    if res.failed[0]:
        raise IntegrationError(res.messages[0])
    return res.history[0]


def log_slope(history: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log ADIFF against log T."""
    T = np.array([p[0] for p in history], dtype=float)
    a = np.array([p[1] for p in history], dtype=float)
    mask = (T > 0) & (a > 0)
    if mask.sum() < 2:
        raise ValueError("need at least two positive points")
    return float(np.polyfit(np.log(T[mask]), np.log(a[mask]), 1)[0])
