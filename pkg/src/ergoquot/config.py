"""Run configuration: a single JSON document with one section per stage.

Example::

    {
      "system":  {"name": "abc", "params": {"A": 1.732, "B": 1.414, "C": 1.0}},
      "ics":     {"kind": "uniform", "n": 300, "seed": 0},
      "basis":   {"k": 5},
      "avg":     {"atol": 1e-3, "t_min": 100, "t_e": 10},
      "ode":     {"rtol": 1e-6, "atol": 1e-9, "max_step": 0.05},
      "metric":  {},
      "diff":    {"n_min": 10, "m": 11},
      "cluster": {"k": 7, "seed": 0, "restarts": 10, "dims": 10},
      "output":  "abc.archive"
    }
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import DynamicsError, ExtendedSystem, FlowSystem, extend_periodic, make_system
from .integrator import AveragingConfig
from .observables import ObservableBasis, make_basis, make_lattice

SECTIONS = ("system", "ics", "basis", "avg", "ode", "metric", "diff", "cluster", "output")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated, JSON-round-trippable run description."""

    system: dict = field(default_factory=lambda: {"name": "abc"})
    ics: dict = field(default_factory=lambda: {"kind": "uniform", "n": 100, "seed": 0})
    basis: dict = field(default_factory=lambda: {"k": 5})
    avg: dict = field(default_factory=dict)
    ode: dict = field(default_factory=dict)
    metric: dict = field(default_factory=dict)
    diff: dict = field(default_factory=dict)
    cluster: dict = field(default_factory=dict)
    output: str | None = None

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in SECTIONS}

    def section_hash(self, *names: str) -> str:
        """Hash of the named sections, used to decide whether a stored stage is stale."""
        blob = json.dumps({n: getattr(self, n) for n in names}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return dict(value)


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig(
        system=_section(raw, "system") or {"name": "abc"},
        ics=_section(raw, "ics") or {"kind": "uniform", "n": 100, "seed": 0},
        basis=_section(raw, "basis") or {"k": 5},
        avg=_section(raw, "avg"),
        ode=_section(raw, "ode"),
        metric=_section(raw, "metric"),
        diff=_section(raw, "diff"),
        cluster=_section(raw, "cluster"),
        output=raw.get("output"),
    )
    validate(cfg)
    return cfg


def load_config(source: str | Path | dict) -> RunConfig:
    if isinstance(source, dict):
        return from_dict(source)
    try:
        raw = json.loads(Path(source).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {source}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def validate(cfg: RunConfig) -> None:
    """Build every derived object once so errors surface before any work starts."""
    system = build_system(cfg)
    build_basis(cfg, system)
    build_averaging(cfg)
    ic_spec(cfg, system)
    d = cfg.diff
    if int(d.get("m", 11)) < 1:
        raise ConfigError("diff.m must be at least 1")
    if int(d.get("n_min", 10)) < 0:
        raise ConfigError("diff.n_min must be nonnegative")
    if d.get("h") is not None and not float(d["h"]) > 0:
        raise ConfigError("diff.h must be positive")
    c = cfg.cluster
    if int(c.get("k", 7)) < 1 or int(c.get("restarts", 10)) < 1 or int(c.get("dims", 10)) < 1:
        raise ConfigError("cluster.k, cluster.restarts and cluster.dims must be positive")
    s = cfg.metric.get("s")
    if s is not None and not float(s) > 0:
        raise ConfigError("metric.s must be positive")


def build_system(cfg: RunConfig) -> FlowSystem | ExtendedSystem:
    spec = cfg.system
    name = spec.get("name")
    if not isinstance(name, str):
        raise ConfigError("system.name is required")
    kwargs: dict[str, Any] = {}
    if name == "expression":
        if "expressions" not in spec:
            raise ConfigError("expression systems need system.expressions")
        kwargs["expressions"] = list(spec["expressions"])
        for key in ("variables", "domain", "periodic"):
            if key in spec:
                kwargs[key] = spec[key]
    try:
        system = make_system(name, spec.get("params"), **kwargs)
        if spec.get("period") is not None:
            system = extend_periodic(system, float(spec["period"]), spec.get("c"))
    except (DynamicsError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"bad system section: {exc}") from exc
    return system


def _physical(system) -> FlowSystem:
    return system.base if isinstance(system, ExtendedSystem) else system


def build_basis(cfg: RunConfig, system) -> ObservableBasis:
    spec = cfg.basis
    base = _physical(system)
    dim = base.dim
    if "bounds" in spec:
        bounds = spec["bounds"]
    elif "k" in spec:
        bounds = int(spec["k"])
    else:
        raise ConfigError("basis needs k or bounds")
    omega = float(cfg.avg.get("omega", 0.0))
    half = bool(spec.get("half", omega == 0.0))
    if half and omega != 0.0:
        raise ConfigError("half lattices are only valid for omega = 0")
    domain = spec.get("domain", base.domain)
    try:
        lattice = make_lattice(dim, bounds, half=half)
        return make_basis(lattice, domain, axes=range(dim))
    except ValueError as exc:
        raise ConfigError(f"bad basis section: {exc}") from exc


def build_averaging(cfg: RunConfig) -> AveragingConfig:
    a, o = cfg.avg, cfg.ode
    known_a = {"atol", "t_min", "t_e", "t_max", "omega"}
    known_o = {"rtol", "atol", "max_step"}
    if set(a) - known_a or set(o) - known_o:
        raise ConfigError(f"unknown keys in avg/ode: {sorted((set(a) - known_a) | (set(o) - known_o))}")
    try:
        return AveragingConfig(
            atol_stop=float(a.get("atol", 1e-4)),
            t_min=float(a.get("t_min", 500.0)),
            t_e=float(a.get("t_e", 50.0)),
            t_max=None if a.get("t_max") is None else float(a["t_max"]),
            omega=float(a.get("omega", 0.0)),
            ode_rtol=float(o.get("rtol", 1e-6)),
            ode_atol=float(o.get("atol", 1e-9)),
            max_step=None if o.get("max_step") is None else float(o["max_step"]),
        )
    except ValueError as exc:
        raise ConfigError(f"bad avg/ode section: {exc}") from exc


def ic_spec(cfg: RunConfig, system) -> dict:
    """Normalized sampler description (kind, count, seed, box, plane data)."""
    spec = dict(cfg.ics)
    base = _physical(system)
    kind = spec.get("kind", "uniform")
    seed = int(spec.get("seed", 0))
    if kind == "plane":
        normal = int(spec.get("normal", 0))
        if not 0 <= normal < base.dim:
            raise ConfigError("ics.normal is out of range")
        value = float(spec.get("value", base.domain[normal][0]))
        free = [a for a in range(base.dim) if a != normal]
        box = spec.get("box", [base.domain[a] for a in free])
        if len(box) != len(free):
            raise ConfigError("plane ics need one interval per in-plane axis")
        full = [None] * base.dim
        for a, iv in zip(free, box):
            full[a] = tuple(map(float, iv))
        full[normal] = (value, value)
        out = {"kind": kind, "n": int(spec.get("n", 0)), "seed": seed, "box": full, "normal": normal}
    elif kind in ("uniform", "grid"):
        box = [tuple(map(float, iv)) for iv in spec.get("box", base.domain)]
        if len(box) != base.dim:
            raise ConfigError("ics.box needs one interval per axis")
        out = {"kind": kind, "seed": seed, "box": box}
        if kind == "grid":
            shape = spec.get("shape")
            if shape is None:
                raise ConfigError("grid ics need ics.shape")
            shape = [int(s) for s in shape]
            if len(shape) != base.dim:
                raise ConfigError("ics.shape needs one count per axis")
            out["shape"] = shape
            out["n"] = int(np.prod(shape))
        else:
            out["n"] = int(spec.get("n", 0))
    else:
        raise ConfigError(f"unknown ics.kind {kind!r}")
    if out["n"] < 1:
        raise ConfigError("ics select an empty set of initial conditions")
    for (lo, hi), (a, b) in zip(out["box"], base.domain):
        if lo > hi:
            raise ConfigError(f"ics interval [{lo}, {hi}] is reversed")
        if lo < min(a, b) or hi > max(a, b):
            raise ConfigError(f"ics interval [{lo}, {hi}] leaves the domain [{a}, {b}]")
    if kind != "plane" and all(lo == hi for lo, hi in out["box"]) and out["n"] > 1:
        raise ConfigError("ics box is a single point")
    if kind == "plane" and any(lo == hi for a, (lo, hi) in enumerate(out["box"]) if a != out["normal"]):
        raise ConfigError("plane rectangle has zero width")
    return out


def sample_initial_conditions(spec: dict, seed: int | None = None) -> np.ndarray:
    """Deterministic initial states for a normalized sampler spec.

    ``uniform`` and ``plane`` draw from ``numpy.random.default_rng(seed)``;
    ``grid`` places points at cell centres of a regular partition of the box.
    """
    seed = spec.get("seed", 0) if seed is None else seed
    box = np.array(spec["box"], dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    n = int(spec["n"])
    if n < 1:
        raise ConfigError("empty initial-condition region")
    kind = spec["kind"]
    if kind in ("uniform", "plane"):
        rng = np.random.default_rng(seed)
        return lo + (hi - lo) * rng.random((n, box.shape[0]))
    if kind == "grid":
        axes = [lo[d] + (hi[d] - lo[d]) * (np.arange(m) + 0.5) / m for d, m in enumerate(spec["shape"])]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    raise ConfigError(f"unknown sampler kind {kind!r}")
