"""Flow systems: built-in vector fields, user expressions and periodic extension.

Every right-hand side is vectorized: ``rhs(x, t)`` takes states of shape
``(n, D)`` and times that are scalar or of shape ``(n,)``, and returns
velocities of shape ``(n, D)``. Rows at singular states come back as NaN so a
batch integrator can retire them individually; :func:`eval_rhs` turns that
into an exception for single evaluations.
"""

from __future__ import annotations

import ast
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import compile_field

TWO_PI = 2.0 * math.pi

# swirl term c/2R is singular on the symmetry axis
HILL_MIN_R = 1e-8

RHS = Callable[[np.ndarray, "np.ndarray | float"], np.ndarray]


class DynamicsError(ValueError):
    """Invalid system construction or evaluation request."""


class SingularStateError(DynamicsError):
    """The vector field is not finite at the requested state."""


@dataclass(frozen=True)
class FlowSystem:
    """An immutable vector field with the metadata the pipeline needs.

    ``axis_weights``, when set, maps states ``(n, D)`` to per-axis
    divergence weights ``(n, D)``; ``None`` means Cartesian.
    """

    name: str
    dim: int
    rhs: RHS
    domain: tuple[tuple[float, float], ...]
    periodic_axes: tuple[bool, ...]
    time_dependent: bool = False
    axis_weights: Callable[[np.ndarray], np.ndarray] | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise DynamicsError("dimension must be positive")
        if len(self.domain) != self.dim or len(self.periodic_axes) != self.dim:
            raise DynamicsError("domain and periodic_axes must have one entry per axis")


@dataclass(frozen=True)
class ExtendedSystem:
    """Autonomous extension of a periodically driven system.

    The extra coordinate ``tau`` advances at rate ``c`` and is periodic with
    length ``c * period``; the base field is evaluated at physical time
    ``tau / c``.
    """

    base: FlowSystem
    period: float
    c: float
    system: FlowSystem
    warning: str | None = None

    @property
    def dim(self) -> int:
        return self.system.dim


def as_flow(system: FlowSystem | ExtendedSystem) -> FlowSystem:
    return system.system if isinstance(system, ExtendedSystem) else system


def eval_rhs(system: FlowSystem | ExtendedSystem, x, t: float = 0.0) -> np.ndarray:
    """Evaluate the velocity at a single state."""
    flow = as_flow(system)
    x = np.asarray(x, dtype=float)
    if x.shape != (flow.dim,):
        raise DynamicsError(f"state has shape {x.shape}, expected ({flow.dim},)")
    v = flow.rhs(x[None, :], t)[0]
    if v.shape != (flow.dim,):
        raise DynamicsError(f"rhs returned shape {v.shape}, expected ({flow.dim},)")
    if not np.all(np.isfinite(v)):
        raise SingularStateError(f"{flow.name}: non-finite velocity at x={x.tolist()}, t={t}")
    return v


def builtin_abc(A: float = math.sqrt(3.0), B: float = math.sqrt(2.0), C: float = 1.0) -> FlowSystem:
    """Steady ABC flow on the unit 3-torus (period cell rescaled to volume 1)."""

    def rhs(x, t):
        s = np.sin(TWO_PI * x)
        c = np.cos(TWO_PI * x)
        out = np.empty_like(x, dtype=float)
        out[..., 0] = A * s[..., 2] + C * c[..., 1]
        out[..., 1] = B * s[..., 0] + A * c[..., 2]
        out[..., 2] = C * s[..., 1] + B * c[..., 0]
        return out / TWO_PI

    return FlowSystem(
        name="abc",
        dim=3,
        rhs=rhs,
        domain=((0.0, 1.0),) * 3,
        periodic_axes=(True, True, True),
        params={"A": A, "B": B, "C": C},
    )


def builtin_hill(c: float, eps: float) -> FlowSystem:
    """Periodically forced Hill's spherical vortex in ``(R, z, theta)``.

    ``c`` is the swirl strength, ``eps`` the amplitude of the forcing with
    period 1. Divergence uses ``(d_R, d_z, R^-1 d_theta)``.
    """

    def rhs(x, t):
        R = x[..., 0]
        z = x[..., 1]
        th = x[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            bad = ~(R >= HILL_MIN_R)
            Rs = np.where(bad, 1.0, R)
            r2 = np.sqrt(2.0 * Rs)
            forcing = eps * np.sin(TWO_PI * np.asarray(t, dtype=float))
            sth = np.sin(th)
            out = np.empty(x.shape, dtype=float)
            out[..., 0] = 2.0 * Rs * z + forcing * r2 * sth
            out[..., 1] = 1.0 - 4.0 * Rs - z * z + forcing * z / r2 * sth
            out[..., 2] = c / (2.0 * Rs) + forcing * 2.0 * np.cos(th)
        out[bad] = np.nan
        return out

    def weights(x):
        w = np.ones(x.shape, dtype=float)
        w[..., 2] = 1.0 / x[..., 0]
        return w

    return FlowSystem(
        name="hill",
        dim=3,
        rhs=rhs,
        domain=((0.0, 0.5), (-1.0, 1.0), (0.0, TWO_PI)),
        periodic_axes=(False, False, True),
        time_dependent=True,
        axis_weights=weights,
        params={"c": c, "eps": eps},
    )


def hill_hamiltonian(R, z):
    """Conserved quantity of the unperturbed (c = eps = 0) Hill vortex."""
    R = np.asarray(R, dtype=float)
    z = np.asarray(z, dtype=float)
    return R * z**2 - R + 2.0 * R**2


def builtin_oscillator() -> FlowSystem:
    """The constant-speed circle rotation theta' = 1 on [0, 1)."""

    def rhs(x, t):
        return np.ones(np.shape(x), dtype=float)

    return FlowSystem(
        name="oscillator",
        dim=1,
        rhs=rhs,
        domain=((0.0, 1.0),),
        periodic_axes=(True,),
    )


def expression_system(
    expressions: Sequence[str],
    variables: Sequence[str] | None = None,
    params: Mapping[str, float] | None = None,
    domain: Sequence[Sequence[float]] | None = None,
    periodic: Sequence[bool] | None = None,
    time_dependent: bool | None = None,
) -> FlowSystem:
    """Build a system from per-axis expression strings over the state and ``t``."""
    dim = len(expressions)
    if dim == 0:
        raise DynamicsError("need at least one expression")
    if variables is None:
        variables = ("x", "y", "z")[:dim] if dim <= 3 else tuple(f"x{i}" for i in range(dim))
    rhs = compile_field(expressions, variables, params)
    if domain is None:
        domain = [(0.0, 1.0)] * dim
    if periodic is None:
        periodic = [True] * dim
    if time_dependent is None:
        time_dependent = any(_mentions_t(e) for e in expressions)
    return FlowSystem(
        name="expression",
        dim=dim,
        rhs=rhs,
        domain=tuple((float(a), float(b)) for a, b in domain),
        periodic_axes=tuple(bool(p) for p in periodic),
        time_dependent=bool(time_dependent),
        params=dict(params or {}),
    )


def _mentions_t(source: str) -> bool:
    return any(isinstance(n, ast.Name) and n.id == "t" for n in ast.walk(ast.parse(source, mode="eval")))


def extend_periodic(system: FlowSystem, period: float, c: float | None = None) -> ExtendedSystem:
    """Append a periodic time coordinate, making a driven system autonomous.

    ``c`` defaults to ``1 / period`` so the time coordinate lives on [0, 1).
    """
    if not period > 0:
        raise DynamicsError("period must be positive")
    if c is None:
        c = 1.0 / period
    if not c > 0:
        raise DynamicsError("time-rescaling constant must be positive")
    note = None
    if not system.time_dependent:
        note = f"{system.name} is already autonomous; extension adds a decoupled clock"
        warnings.warn(note, stacklevel=2)
    base = system
    dim = base.dim

    def rhs(x, t):
        out = np.empty(x.shape, dtype=float)
        out[..., :dim] = base.rhs(x[..., :dim], x[..., dim] / c)
        out[..., dim] = c
        return out

    weights = None
    if base.axis_weights is not None:

        def weights(x):
            w = np.ones(x.shape, dtype=float)
            w[..., :dim] = base.axis_weights(x[..., :dim])
            return w

    flow = FlowSystem(
        name=f"{base.name}+clock",
        dim=dim + 1,
        rhs=rhs,
        domain=(*base.domain, (0.0, c * period)),
        periodic_axes=(*base.periodic_axes, True),
        time_dependent=False,
        axis_weights=weights,
        params={**base.params, "period": period, "c": c},
    )
    return ExtendedSystem(base=base, period=float(period), c=float(c), system=flow, warning=note)


def divergence(system: FlowSystem | ExtendedSystem, x, t: float = 0.0, h: float = 1e-5) -> float:
    """Central finite-difference divergence with the system's axis weights."""
    flow = as_flow(system)
    x = np.asarray(x, dtype=float)
    if x.shape != (flow.dim,):
        raise DynamicsError(f"state has shape {x.shape}, expected ({flow.dim},)")
    if not h > 0 or not math.isfinite(h):
        raise DynamicsError("step must be positive and finite")
    for d, ((a, b), per) in enumerate(zip(flow.domain, flow.periodic_axes)):
        if x[d] + h == x[d]:
            raise DynamicsError(f"step {h} underflows at axis {d}")
        if not per and not (a + h < x[d] < b - h):
            raise DynamicsError(f"axis {d}: state not interior to [{a}, {b}] by margin {h}")
    eye = np.eye(flow.dim) * h
    vp = flow.rhs(x + eye, t)
    vm = flow.rhs(x - eye, t)
    diag = (np.diag(vp) - np.diag(vm)) / (2.0 * h)
    if flow.axis_weights is not None:
        diag = diag * flow.axis_weights(x[None, :])[0]
    total = float(np.sum(diag))
    if not math.isfinite(total):
        raise SingularStateError(f"{flow.name}: divergence not finite at {x.tolist()}")
    return total


def make_system(name: str, params: Mapping[str, float] | None = None, **expr_kwargs) -> FlowSystem:
    """Dispatch a config-level system name to a constructor."""
    params = dict(params or {})
    if name == "abc":
        return builtin_abc(**params)
    if name == "hill":
        return builtin_hill(c=params.get("c", 0.01), eps=params.get("eps", 0.01))
    if name == "oscillator":
        if params:
            raise DynamicsError("oscillator takes no parameters")
        return builtin_oscillator()
    if name == "expression":
        return expression_system(params=params, **expr_kwargs)
    raise DynamicsError(f"unknown system {name!r}")
