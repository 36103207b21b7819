"""Staged pipeline: sample -> average -> distances -> embed -> cluster.

Each stage writes its arrays to the archive and records a hash of the config
sections it depends on. A stage whose hash and arrays are intact is skipped,
so an interrupted or partially deleted run resumes where it stopped. Rerunning
a stage invalidates everything downstream of it.
"""

from __future__ import annotations

import csv
import datetime as _dt
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .archive import Archive, ArchiveError
from .clustering import kmeans
from .config import (
    RunConfig,
    build_averaging,
    build_basis,
    build_system,
    ic_spec,
    sample_initial_conditions,
)
from .diffmaps import diffusion_map
from .dynamics import ExtendedSystem
from .integrator import run_ensemble, worker_count
from .metric import pairwise_matrix, sobolev_params

log = logging.getLogger(__name__)

STAGES = ("sample", "average", "distances", "embed", "cluster")

_SECTIONS = {
    "sample": ("system", "ics"),
    "average": ("system", "ics", "basis", "avg", "ode"),
    "distances": ("system", "ics", "basis", "avg", "ode", "metric"),
    "embed": ("system", "ics", "basis", "avg", "ode", "metric", "diff"),
    "cluster": ("system", "ics", "basis", "avg", "ode", "metric", "diff", "cluster"),
}

_ARRAYS = {
    "sample": ("ics/x0",),
    "average": (
        "avg/averages",
        "avg/stop_time",
        "avg/final_adiff",
        "avg/converged",
        "avg/failed",
        "avg/n_steps",
    ),
    "distances": ("dist/matrix", "dist/sample_ids"),
    "embed": ("diff/eigvals", "diff/eigfuncs", "diff/coords", "diff/h", "diff/n_min"),
    "cluster": ("cluster/labels", "cluster/centroids", "cluster/inertia", "cluster/seed"),
}


class StageError(RuntimeError):
    """A stage could not produce its outputs."""


def _stage_hash(cfg: RunConfig, stage: str, drop_unconverged: bool) -> str:
    h = cfg.section_hash(*_SECTIONS[stage])
    if STAGES.index(stage) >= STAGES.index("distances"):
        h += "-drop" if drop_unconverged else "-keep"
    return h


def stage_current(arc: Archive, cfg: RunConfig, stage: str, drop_unconverged: bool = False) -> bool:
    rec = arc.manifest["stages"].get(stage)
    if rec is None or rec.get("hash") != _stage_hash(cfg, stage, drop_unconverged):
        return False
    return all(arc.has(name) for name in _ARRAYS[stage])


def invalidate_from(arc: Archive, stage: str) -> None:
    for later in STAGES[STAGES.index(stage) :]:
        arc.manifest["stages"].pop(later, None)
        for name in _ARRAYS[later]:
            arc.delete(name, save=False)
    arc.save_manifest()


def _mark(arc: Archive, cfg: RunConfig, stage: str, drop_unconverged: bool, **extra) -> None:
    arc.manifest["stages"][stage] = {
        "hash": _stage_hash(cfg, stage, drop_unconverged),
        "completed": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }
    arc.save_manifest()


def _need(arc: Archive, *names: str) -> list[np.ndarray]:
    missing = [n for n in names if not arc.has(n)]
    if missing:
        raise StageError(f"missing upstream arrays: {missing}")
    return [arc.read(n) for n in names]


def stage_sample(arc: Archive, cfg: RunConfig) -> None:
    system = build_system(cfg)
    X0 = sample_initial_conditions(ic_spec(cfg, system))
    arc.write("ics/x0", X0, meta={"sampler": ic_spec(cfg, system)})


def stage_average(arc: Archive, cfg: RunConfig, workers: int | None = None) -> None:
    system = build_system(cfg)
    basis = build_basis(cfg, system)
    acfg = build_averaging(cfg)
    (X0,) = _need(arc, "ics/x0")
    X = X0
    if isinstance(system, ExtendedSystem):
        # the clock coordinate starts at tau = 0
        X = np.concatenate([X0, np.zeros((X0.shape[0], 1))], axis=1)
    samples = run_ensemble(system, X, basis, acfg, workers=workers or worker_count())
    lat = basis.lattice
    arc.manifest["lattice"] = {
        "dim": lat.dim,
        "bounds": list(lat.bounds),
        "half": lat.half,
        "digest": lat.digest,
        "waves": lat.waves.tolist(),
    }
    meta = {"lattice": lat.digest, "omega": acfg.omega}
    arc.write("avg/averages", np.array([s.averages for s in samples]).reshape(len(samples), lat.size), meta=meta, save=False)
    arc.write("avg/stop_time", np.array([s.stop_time for s in samples]), save=False)
    arc.write("avg/final_adiff", np.array([s.final_adiff for s in samples]), save=False)
    arc.write("avg/converged", np.array([s.converged for s in samples], dtype=bool), save=False)
    arc.write("avg/failed", np.array([s.failed for s in samples], dtype=bool), save=False)
    arc.write("avg/n_steps", np.array([s.n_steps for s in samples], dtype=np.int64), save=False)
    failures = {str(i): s.message for i, s in enumerate(samples) if s.failed}
    arc.manifest["failures"] = failures
    arc.save_manifest()
    for i, msg in failures.items():
        log.warning("sample %s failed: %s", i, msg)


def stage_distances(arc: Archive, cfg: RunConfig, drop_unconverged: bool = False) -> None:
    system = build_system(cfg)
    basis = build_basis(cfg, system)
    F, conv, failed = _need(arc, "avg/averages", "avg/converged", "avg/failed")
    keep = ~failed
    if drop_unconverged:
        keep &= conv
    ids = np.flatnonzero(keep)
    if ids.size == 0:
        raise StageError("no usable samples remain for the distance matrix")
    params = sobolev_params(basis.lattice, cfg.metric.get("s"))
    dm = pairwise_matrix(F[ids], params, sample_ids=ids)
    dm.meta["omega"] = float(arc.meta("avg/averages").get("omega", 0.0))
    arc.write("dist/matrix", dm.d, meta=dm.meta, save=False)
    arc.write("dist/sample_ids", ids.astype(np.int64))


def stage_embed(arc: Archive, cfg: RunConfig) -> None:
    (d,) = _need(arc, "dist/matrix")
    dc = cfg.diff
    n_min = int(dc.get("n_min", 10))
    emb = diffusion_map(d, m=int(dc.get("m", 11)), n_min=n_min, h=dc.get("h"))
    arc.write("diff/eigvals", emb.eigvals, save=False)
    arc.write("diff/eigfuncs", emb.eigfuncs, save=False)
    arc.write("diff/coords", emb.coords, save=False)
    arc.write("diff/h", np.array([emb.h]), save=False)
    arc.write("diff/n_min", np.array([min(n_min, max(d.shape[0] - 1, 0))], dtype=np.int64))


def stage_cluster(arc: Archive, cfg: RunConfig, workers: int | None = None) -> None:
    (coords,) = _need(arc, "diff/coords")
    cc = cfg.cluster
    n = coords.shape[0]
    k = min(int(cc.get("k", 7)), n)
    dims = min(int(cc.get("dims", 10)), coords.shape[1] - 1)
    X = coords[:, 1 : 1 + dims] if dims > 0 else np.zeros((n, 1))
    res = kmeans(
        X,
        k,
        seed=int(cc.get("seed", 0)),
        restarts=int(cc.get("restarts", 10)),
        max_iter=int(cc.get("max_iter", 300)),
        tol=float(cc.get("tol", 1e-10)),
        workers=workers or 1,
    )
    arc.write("cluster/labels", res.labels, meta={"k": k, "dims": dims}, save=False)
    arc.write("cluster/centroids", res.centroids, save=False)
    arc.write("cluster/inertia", np.array([res.inertia]), save=False)
    arc.write("cluster/seed", np.array([res.seed], dtype=np.int64))


def run_stage(
    arc: Archive,
    cfg: RunConfig,
    stage: str,
    drop_unconverged: bool = False,
    workers: int | None = None,
) -> None:
    invalidate_from(arc, stage)
    log.info("running stage %s", stage)
    if stage == "sample":
        stage_sample(arc, cfg)
    elif stage == "average":
        stage_average(arc, cfg, workers)
    elif stage == "distances":
        stage_distances(arc, cfg, drop_unconverged)
    elif stage == "embed":
        stage_embed(arc, cfg)
    elif stage == "cluster":
        stage_cluster(arc, cfg, workers)
    else:
        raise ValueError(f"unknown stage {stage!r}")
    _mark(arc, cfg, stage, drop_unconverged)


def open_or_create(path: str | Path, cfg: RunConfig) -> Archive:
    path = Path(path)
    if (path / "manifest.json").exists():
        arc = Archive.open(path)
        arc.manifest["config"] = cfg.to_dict()
        arc.save_manifest()
        return arc
    return Archive.create(path, config=cfg.to_dict())


def run_pipeline(
    cfg: RunConfig,
    archive: str | Path | None = None,
    until: str = "cluster",
    drop_unconverged: bool = False,
    force: Sequence[str] = (),
    workers: int | None = None,
) -> Archive:
    """Run every stage up to ``until``, skipping stages that are already current."""
    path = archive if archive is not None else cfg.output
    if path is None:
        raise ArchiveError("no archive path given and config has no output")
    arc = open_or_create(path, cfg)
    for stage in STAGES[: STAGES.index(until) + 1]:
        if stage in force or not stage_current(arc, cfg, stage, drop_unconverged):
            run_stage(arc, cfg, stage, drop_unconverged, workers)
    return arc


def _parse_slice(spec: str | tuple | None):
    if spec is None:
        return None
    if isinstance(spec, str):
        axis, lo, hi = spec.split(":")
        return int(axis), float(lo), float(hi)
    axis, lo, hi = spec
    return int(axis), float(lo), float(hi)


def export_pointcloud(
    arc: Archive | str | Path,
    out: str | Path,
    what: str | int = "labels",
    slice_spec: str | tuple | None = None,
    delimiter: str = ",",
) -> int:
    """Write one row per embedded sample; returns the number of rows written.

    Columns: initial-condition components, converged flag, cluster label (when
    clustering has run) and, for an integer ``what``, diffusion coordinate
    ``what``. ``slice_spec`` keeps rows with ``lo <= x0[axis] <= hi``.
    Floats are written with ``repr`` so values round-trip exactly.
    """
    if not isinstance(arc, Archive):
        arc = Archive.open(arc)
    X0 = arc.read("ics/x0") if arc.has("ics/x0") else None
    if X0 is None or not arc.has("avg/converged"):
        raise StageError("export needs the sample and average stages")
    conv = arc.read("avg/converged")
    ids = arc.read("dist/sample_ids") if arc.has("dist/sample_ids") else np.arange(X0.shape[0])
    labels = arc.read("cluster/labels") if arc.has("cluster/labels") else None
    coord = None
    if what == "labels":
        if labels is None:
            raise StageError("labels requested but the cluster stage has not run")
    else:
        j = int(what)
        if not arc.has("diff/coords"):
            raise StageError("coordinates requested but the embed stage has not run")
        coords = arc.read("diff/coords")
        if not 0 <= j < coords.shape[1]:
            raise StageError(f"coordinate {j} is not stored (have {coords.shape[1]})")
        coord = coords[:, j]
    sl = _parse_slice(slice_spec)
    header = [f"x{d}" for d in range(X0.shape[1])] + ["converged"]
    if labels is not None:
        header.append("label")
    if coord is not None:
        header.append(f"coord{int(what)}")
    rows = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(header)
        for r, i in enumerate(ids):
            x = X0[i]
            if sl is not None and not sl[1] <= x[sl[0]] <= sl[2]:
                continue
            row = [repr(float(v)) for v in x] + [int(conv[i])]
            if labels is not None:
                row.append(int(labels[r]))
            if coord is not None:
                row.append(repr(float(coord[r])))
            w.writerow(row)
            rows += 1
    return rows
