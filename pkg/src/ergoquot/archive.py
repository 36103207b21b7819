"""Directory archive: ``manifest.json`` plus raw little-endian float64 arrays.

Every array is stored row-major as ``<f8``. Complex arrays are interleaved
``re, im`` pairs; integer and boolean arrays are stored as exact doubles and
restored to their ``kind`` on read. The manifest records shape, kind and a
sha256 of the bytes for each array, so files can be read from any language.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class ArchiveError(RuntimeError):
    """Missing or unusable archive contents."""


class CorruptArchive(ArchiveError):
    """Stored bytes disagree with the manifest."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _kind(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "complex"
    if arr.dtype == bool:
        return "bool"
    if np.issubdtype(arr.dtype, np.integer):
        return "int"
    return "real"


def _encode(arr: np.ndarray) -> bytes:
    if np.iscomplexobj(arr):
        flat = np.ascontiguousarray(arr, dtype="<c16")
        return flat.view("<f8").tobytes()
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _expected_bytes(shape, kind: str) -> int:
    return int(np.prod(shape, dtype=np.int64)) * 8 * (2 if kind == "complex" else 1)


def _decode(raw: bytes, shape, kind: str) -> np.ndarray:
    vals = np.frombuffer(raw, dtype="<f8")
    if kind == "complex":
        out = vals.view("<c16").astype(complex)
    elif kind == "int":
        out = vals.astype(np.int64)
    elif kind == "bool":
        out = vals != 0.0
    else:
        out = vals.astype(float)
    return out.reshape(shape)


def _file_name(name: str) -> str:
    if not name or any(part in ("", ".", "..") for part in name.split("/")):
        raise ArchiveError(f"bad array name {name!r}")
    return name.replace("/", "__") + ".f8"


class Archive:
    """Single-writer handle on an archive directory."""

    def __init__(self, path: str | Path, manifest: dict):
        self.path = Path(path)
        self.manifest = manifest

    @classmethod
    def create(cls, path: str | Path, config: dict | None = None, overwrite: bool = False) -> "Archive":
        path = Path(path)
        if path.exists():
            if not overwrite:
                raise ArchiveError(f"{path} already exists")
            shutil.rmtree(path)
        path.mkdir(parents=True)
        stamp = _now()
        manifest = {
            "format": "ergoquot-archive",
            "version": FORMAT_VERSION,
            "created": stamp,
            "updated": stamp,
            "config": config or {},
            "lattice": None,
            "stages": {},
            "arrays": {},
        }
        arc = cls(path, manifest)
        arc.save_manifest()
        return arc

    @classmethod
    def open(cls, path: str | Path) -> "Archive":
        path = Path(path)
        try:
            manifest = json.loads((path / MANIFEST).read_text())
        except FileNotFoundError as exc:
            raise ArchiveError(f"no archive at {path}") from exc
        except json.JSONDecodeError as exc:
            raise CorruptArchive(f"manifest is not valid JSON: {exc}") from exc
        if manifest.get("format") != "ergoquot-archive":
            raise CorruptArchive("manifest has the wrong format tag")
        if manifest.get("version") != FORMAT_VERSION:
            raise CorruptArchive(f"unsupported archive version {manifest.get('version')!r}")
        return cls(path, manifest)

    def save_manifest(self) -> None:
        self.manifest["updated"] = _now()
        tmp = self.path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        os.replace(tmp, self.path / MANIFEST)

    def names(self) -> list[str]:
        return sorted(self.manifest["arrays"])

    def has(self, name: str) -> bool:
        return name in self.manifest["arrays"]

    def write(self, name: str, arr, meta: dict | None = None, save: bool = True) -> None:
        arr = np.asarray(arr)
        raw = _encode(arr)
        fname = _file_name(name)
        tmp = self.path / (fname + ".tmp")
        tmp.write_bytes(raw)
        os.replace(tmp, self.path / fname)
        self.manifest["arrays"][name] = {
            "file": fname,
            "kind": _kind(arr),
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
            "meta": meta or {},
        }
        if save:
            self.save_manifest()

    def read(self, name: str, check: bool = True) -> np.ndarray:
        entry = self.manifest["arrays"].get(name)
        if entry is None:
            raise ArchiveError(f"array {name!r} is not in the archive")
        try:
            raw = (self.path / entry["file"]).read_bytes()
        except FileNotFoundError as exc:
            raise CorruptArchive(f"{name}: data file is missing") from exc
        if len(raw) != _expected_bytes(entry["shape"], entry["kind"]):
            raise CorruptArchive(f"{name}: shape mismatch ({len(raw)} bytes for shape {entry['shape']})")
        if check and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CorruptArchive(f"{name}: hash mismatch")
        return _decode(raw, entry["shape"], entry["kind"])

    def meta(self, name: str) -> dict:
        if name not in self.manifest["arrays"]:
            raise ArchiveError(f"array {name!r} is not in the archive")
        return self.manifest["arrays"][name]["meta"]

    def delete(self, name: str, save: bool = True) -> None:
        entry = self.manifest["arrays"].pop(name, None)
        if entry is not None:
            (self.path / entry["file"]).unlink(missing_ok=True)
        if save:
            self.save_manifest()


def verify_archive(path: str | Path) -> list[str]:
    """List every inconsistency found; an empty list means the archive is sound."""
    try:
        arc = Archive.open(path)
    except ArchiveError as exc:
        return [str(exc)]
    issues: list[str] = []
    arrays: dict[str, np.ndarray] = {}
    for name in arc.names():
        try:
            arrays[name] = arc.read(name)
        except CorruptArchive as exc:
            issues.append(str(exc))
            if "hash mismatch" in str(exc):
                # bytes are the right size, so the invariant checks can still name the damage
                arrays[name] = arc.read(name, check=False)

    lattice = arc.manifest.get("lattice")
    if lattice is not None:
        from .observables import make_lattice

        lat = make_lattice(lattice["dim"], lattice["bounds"], half=lattice["half"])
        if lat.digest != lattice["digest"] or lat.waves.tolist() != lattice["waves"]:
            issues.append("manifest lattice: recorded order does not match its digest")
        if arc.has("avg/averages"):
            m = arc.meta("avg/averages")
            if m.get("lattice") != lattice["digest"]:
                issues.append("avg/averages: lattice hash differs from the manifest")
            shape = arc.manifest["arrays"]["avg/averages"]["shape"]
            if len(shape) != 2 or shape[1] != lat.size:
                issues.append("avg/averages: width does not match the lattice size")

    d = arrays.get("dist/matrix")
    if d is not None:
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            issues.append("dist/matrix: not square")
        else:
            if not np.array_equal(d, d.T):
                issues.append("dist/matrix: symmetry violation")
            if np.any(np.diag(d) != 0) or np.any(d < 0) or not np.all(np.isfinite(d)):
                issues.append("dist/matrix: diagonal must be zero and entries finite and nonnegative")

    ev = arrays.get("diff/eigvals")
    if ev is not None and ev.size:
        if abs(ev[0] - 1.0) > 1e-8:
            issues.append(f"diff/eigvals: leading eigenvalue {ev[0]!r} is not 1")
        if np.any(np.abs(ev) > 1.0 + 1e-8):
            issues.append("diff/eigvals: eigenvalue outside [-1, 1]")
        if np.any(np.diff(ev) > 0):
            issues.append("diff/eigvals: not in descending order")
    coords = arrays.get("diff/coords")
    if coords is not None and coords.ndim == 2 and coords.shape[1] and ev is not None and ev.size:
        if np.max(np.abs(coords[:, 0] - ev[0])) > 1e-8:
            issues.append("diff/coords: leading coordinate is not constant")
    h = arrays.get("diff/h")
    if d is not None and h is not None and d.ndim == 2 and d.shape[0] == d.shape[1] and d.size:
        from .diffmaps import build_kernel, density_normalize, transition_matrix

        try:
            S = transition_matrix(density_normalize(build_kernel(d, float(h.ravel()[0]))))
            if np.max(np.abs(S.sum(axis=1) - 1.0)) > 1e-12:
                issues.append("diff/h: rebuilt transition matrix is not row-stochastic")
        except ValueError as exc:
            issues.append(f"diff/h: kernel cannot be rebuilt ({exc})")

    labels = arrays.get("cluster/labels")
    if labels is not None:
        k = arc.meta("cluster/labels").get("k")
        if labels.size and (labels.min() < 0 or (k is not None and labels.max() >= k)):
            issues.append("cluster/labels: label out of range")
        if d is not None and labels.shape[0] != d.shape[0]:
            issues.append("cluster/labels: length differs from dist/matrix")
    return issues
