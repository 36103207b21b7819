import csv
import json
import math

import numpy as np
import pytest

from ergoquot.archive import Archive, ArchiveError, CorruptArchive, verify_archive
from ergoquot.cli import main
from ergoquot.config import ConfigError, build_system, ic_spec, load_config, sample_initial_conditions
from ergoquot.pipeline import STAGES, StageError, export_pointcloud, run_pipeline, stage_current

SMALL = {
    "system": {"name": "abc"},
    "ics": {"kind": "uniform", "n": 16, "seed": 3},
    "basis": {"k": 2},
    "avg": {"atol": 1e-2, "t_min": 10, "t_e": 5},
    "ode": {"max_step": 0.1},
    "diff": {"n_min": 3, "m": 5},
    "cluster": {"k": 3, "dims": 4, "restarts": 4},
}


def small_config(**over):
    raw = json.loads(json.dumps(SMALL))
    for key, value in over.items():
        raw[key] = value
    return load_config(raw)


@pytest.fixture
def archive(tmp_path):
    return run_pipeline(small_config(), tmp_path / "arc")


def test_ic_samplers():
    cfg = small_config(ics={"kind": "uniform", "n": 1000, "seed": 7})
    spec = ic_spec(cfg, build_system(cfg))
    X = sample_initial_conditions(spec)
    assert X.shape == (1000, 3) and X.min() >= 0 and X.max() < 1
    assert np.array_equal(X, sample_initial_conditions(spec))

    cfg = small_config(ics={"kind": "plane", "normal": 0, "value": 0.0, "box": [[0.35, 0.8], [0.6, 0.9]], "n": 500})
    X = sample_initial_conditions(ic_spec(cfg, build_system(cfg)))
    assert X.shape == (500, 3) and np.all(X[:, 0] == 0.0)
    assert X[:, 1].min() >= 0.35 and X[:, 1].max() <= 0.8 and X[:, 2].min() >= 0.6 and X[:, 2].max() <= 0.9

    hill = small_config(
        system={"name": "hill", "params": {"c": 0.3495, "eps": 0.3495}},
        ics={"kind": "plane", "normal": 2, "value": 0.0, "box": [[0.2, 0.3], [-0.1, 0.1]], "n": 1000},
    )
    X = sample_initial_conditions(ic_spec(hill, build_system(hill)))
    assert X.shape == (1000, 3) and np.all(X[:, 2] == 0.0)
    assert X[:, 0].min() >= 0.2 and X[:, 0].max() <= 0.3

    cfg = small_config(ics={"kind": "grid", "shape": [2, 3, 1]})
    X = sample_initial_conditions(ic_spec(cfg, build_system(cfg)))
    assert X.shape == (6, 3)
    assert sorted(set(X[:, 1].round(12))) == [round(1 / 6, 12), 0.5, round(5 / 6, 12)]


@pytest.mark.parametrize(
    "ics",
    [
        {"kind": "uniform", "n": 0},
        {"kind": "uniform", "n": 5, "box": [[0, 2], [0, 1], [0, 1]]},
        {"kind": "plane", "normal": 0, "box": [[0.3, 0.3], [0.1, 0.2]], "n": 4},
        {"kind": "sphere", "n": 4},
    ],
)
def test_bad_ic_specs(ics):
    with pytest.raises(ConfigError):
        small_config(ics=ics)


def test_bad_configs():
    with pytest.raises(ConfigError):
        small_config(system={"name": "lorenz"})
    with pytest.raises(ConfigError):
        small_config(avg={"atol": -1})
    with pytest.raises(ConfigError):
        small_config(basis={"k": 2, "half": True}, avg={"omega": 1.0})
    with pytest.raises(ConfigError):
        load_config({"bogus": {}})


def test_pipeline_outputs(archive):
    assert list(archive.manifest["stages"]) == list(STAGES)
    d = archive.read("dist/matrix")
    assert d.shape == (16, 16) and np.array_equal(d, d.T)
    labels = archive.read("cluster/labels")
    assert labels.dtype == np.int64 and labels.max() < 3
    assert archive.read("avg/averages").dtype == complex
    assert archive.read("avg/converged").dtype == bool
    assert archive.manifest["lattice"]["waves"][0] == [0, 0, 0]
    assert verify_archive(archive.path) == []


def test_roundtrip_bitwise(tmp_path, rng):
    arc = Archive.create(tmp_path / "a")
    arrays = {
        "x/real": rng.normal(size=(4, 3)),
        "x/complex": rng.normal(size=(2, 5)) + 1j * rng.normal(size=(2, 5)),
        "x/int": np.array([3, -1, 7], dtype=np.int64),
        "x/bool": np.array([True, False]),
        "x/scalar": np.array([math.pi]),
    }
    for name, arr in arrays.items():
        arc.write(name, arr)
    again = Archive.open(tmp_path / "a")
    for name, arr in arrays.items():
        out = again.read(name)
        assert out.dtype == arr.dtype and np.array_equal(out, arr)
        assert out.tobytes() == arr.tobytes()
    raw = (tmp_path / "a" / "x__complex.f8").read_bytes()
    inter = np.frombuffer(raw, "<f8")
    assert inter[0] == arrays["x/complex"][0, 0].real and inter[1] == arrays["x/complex"][0, 0].imag


def test_resume_recomputes_only_downstream(archive):
    cfg = small_config()
    avg_bytes = (archive.path / "avg__averages.f8").read_bytes()
    stamps = {s: archive.manifest["stages"][s]["completed"] for s in STAGES}
    archive.delete("diff/coords")
    archive.delete("cluster/labels")
    assert stage_current(archive, cfg, "distances") and not stage_current(archive, cfg, "embed")
    arc = run_pipeline(cfg, archive.path)
    assert (arc.path / "avg__averages.f8").read_bytes() == avg_bytes
    for s in ("sample", "average", "distances"):
        assert arc.manifest["stages"][s]["completed"] == stamps[s]
    assert arc.has("diff/coords") and arc.has("cluster/labels")
    assert verify_archive(arc.path) == []


def test_stage_rerun_is_bitwise(archive):
    before = {n: (archive.path / archive.manifest["arrays"][n]["file"]).read_bytes() for n in archive.names()}
    arc = run_pipeline(small_config(), archive.path, force=("sample",))
    after = {n: (arc.path / arc.manifest["arrays"][n]["file"]).read_bytes() for n in arc.names()}
    assert before == after


def test_config_change_invalidates(archive):
    cfg = small_config(cluster={"k": 2, "dims": 4})
    assert not stage_current(archive, cfg, "cluster")
    assert stage_current(archive, cfg, "embed")
    arc = run_pipeline(cfg, archive.path)
    assert arc.read("cluster/labels").max() <= 1


def test_single_sample_pipeline(tmp_path):
    cfg = small_config(ics={"kind": "uniform", "n": 1, "seed": 0})
    arc = run_pipeline(cfg, tmp_path / "one")
    assert arc.read("dist/matrix").tolist() == [[0.0]]
    assert arc.read("diff/eigvals").tolist() == [1.0]
    assert arc.read("cluster/labels").tolist() == [0]


def test_drop_unconverged(tmp_path):
    cfg = small_config(avg={"atol": 1e-9, "t_min": 5, "t_e": 5, "t_max": 10}, ics={"kind": "uniform", "n": 6, "seed": 1})
    kept = run_pipeline(cfg, tmp_path / "keep", until="distances")
    assert kept.read("dist/matrix").shape == (6, 6)
    assert not kept.read("avg/converged").any()
    with pytest.raises(StageError):
        run_pipeline(cfg, tmp_path / "drop", until="distances", drop_unconverged=True)


def test_failed_samples_excluded(tmp_path):
    cfg = small_config(
        system={"name": "hill", "params": {"c": 0.01, "eps": 0.01}},
        ics={"kind": "grid", "shape": [2, 2, 1], "box": [[0.0, 0.3], [-0.2, 0.2], [0.0, 0.0]]},
        basis={"k": 1},
        avg={"atol": 1e-2, "t_min": 2, "t_e": 1},
        ode={"max_step": 0.05},
        diff={"n_min": 1, "m": 2},
        cluster={"k": 1, "dims": 1},
    )
    # grid cell centres put no point on the axis; force one onto it
    arc = run_pipeline(cfg, tmp_path / "h", until="sample")
    X = arc.read("ics/x0")
    X[0, 0] = 0.0
    arc.write("ics/x0", X, meta=arc.meta("ics/x0"))
    from ergoquot.pipeline import run_stage

    run_stage(arc, cfg, "average")
    run_stage(arc, cfg, "distances")
    assert arc.read("avg/failed").tolist() == [True, False, False, False]
    assert arc.read("dist/sample_ids").tolist() == [1, 2, 3]
    assert "0" in arc.manifest["failures"]


def test_export_labels_and_coords(archive, tmp_path):
    out = tmp_path / "labels.csv"
    assert export_pointcloud(archive, out) == 16
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["x0", "x1", "x2", "converged", "label"]
    X0 = archive.read("ics/x0")
    assert [float(v) for v in rows[1][:3]] == X0[0].tolist()
    assert all(0 <= int(r[4]) < 3 for r in rows[1:])

    out = tmp_path / "c4.csv"
    export_pointcloud(archive, out, what=4)
    col = np.array([float(r[-1]) for r in list(csv.reader(open(out)))[1:]])
    assert np.array_equal(col, archive.read("diff/coords")[:, 4])
    with pytest.raises(StageError):
        export_pointcloud(archive, out, what=9)


def test_export_slice(archive, tmp_path):
    out = tmp_path / "s.csv"
    n = export_pointcloud(archive, out, slice_spec="2:0.0:0.5")
    X0 = archive.read("ics/x0")
    assert n == int(np.sum((X0[:, 2] >= 0) & (X0[:, 2] <= 0.5)))


def test_export_missing_stage(tmp_path):
    arc = run_pipeline(small_config(), tmp_path / "a", until="average")
    with pytest.raises(StageError):
        export_pointcloud(arc, tmp_path / "x.csv")


def test_verify_detects_truncation(archive):
    path = archive.path / "diff__coords.f8"
    path.write_bytes(path.read_bytes()[:-8])
    issues = verify_archive(archive.path)
    assert any("diff/coords" in i and "shape mismatch" in i for i in issues)


def test_verify_detects_asymmetry(archive):
    d = archive.read("dist/matrix")
    d[0, 1] += 1e-3
    raw = np.ascontiguousarray(d, "<f8").tobytes()
    (archive.path / "dist__matrix.f8").write_bytes(raw)
    issues = verify_archive(archive.path)
    assert any("dist/matrix" in i and "symmetry" in i for i in issues)
    assert any("dist/matrix" in i and "hash" in i for i in issues)


def test_verify_detects_lattice_tamper(archive):
    m = json.loads((archive.path / "manifest.json").read_text())
    m["arrays"]["avg/averages"]["meta"]["lattice"] = "0" * 64
    (archive.path / "manifest.json").write_text(json.dumps(m))
    assert any("avg/averages" in i for i in verify_archive(archive.path))


def test_open_errors(tmp_path):
    with pytest.raises(ArchiveError):
        Archive.open(tmp_path / "none")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "manifest.json").write_text("{")
    with pytest.raises(CorruptArchive):
        Archive.open(tmp_path / "bad")


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ERGOQUOT_THREADS", "2")
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({**SMALL, "output": str(tmp_path / "arc")}))
    assert main(["run", "--config", str(cfg_path)]) == 0
    assert main(["verify", "--archive", str(tmp_path / "arc")]) == 0
    out = tmp_path / "o.csv"
    assert main(["export", "--archive", str(tmp_path / "arc"), "--what", "2", "--out", str(out)]) == 0
    assert out.exists()
    assert main(["embed", "--config", str(cfg_path), "--force"]) == 0

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": {"name": "nope"}}))
    assert main(["run", "--config", str(bad), "--archive", str(tmp_path / "x")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2

    assert main(["export", "--archive", str(tmp_path / "arc"), "--what", "40", "--out", str(out)]) == 3

    f = tmp_path / "arc" / "dist__matrix.f8"
    f.write_bytes(f.read_bytes()[:-8])
    assert main(["verify", "--archive", str(tmp_path / "arc")]) == 4
    assert main(["run", "--config", str(cfg_path)]) == 4


def test_cli_stage_failure(tmp_path):
    cfg = {**SMALL, "avg": {"atol": 1e-9, "t_min": 5, "t_e": 5, "t_max": 10}, "ics": {"kind": "uniform", "n": 3}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["distances", "--config", str(p), "--archive", str(tmp_path / "a"), "--drop-unconverged"]) == 3
