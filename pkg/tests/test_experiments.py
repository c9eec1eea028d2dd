import csv
import hashlib
import json

import pytest

from clusterwalk import cli
from clusterwalk.experiments import ExperimentSpec, SpecError, report, run_experiment
from clusterwalk.percolation import read_snapshot


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def data_files(d):
    return {p.name: sha(p) for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_keys_are_errors():
    with pytest.raises(SpecError) as err:
        ExperimentSpec.from_dict({"kind": "sample", "sizez": [4], "trails": 3})
    assert err.value.fields == ["sizez", "trails"]


def test_validation_lists_every_offending_field():
    with pytest.raises(SpecError) as err:
        ExperimentSpec.from_dict({"kind": "kernel", "p": 1.5, "times": [2, 1], "sizes": [0]})
    assert err.value.fields == ["p", "sizes", "times"]


def test_vertex_cap_enforced():
    with pytest.raises(SpecError, match="cap"):
        ExperimentSpec.from_dict({"kind": "harnack", "sizes": [5000]})


def test_yaml_spec(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("kind: geometry\nsizes: [10, 12]\nseed: 5\n")
    spec = ExperimentSpec.from_yaml(path)
    assert spec.sizes == [10, 12] and spec.seed == 5


def test_sample_writes_snapshot_and_manifest(tmp_path):
    out = run_experiment(ExperimentSpec.from_dict({"kind": "sample", "p": 1.0, "sizes": [6]}), tmp_path / "a")
    manifest = json.loads((out / "manifest.json").read_text())
    snap = read_snapshot(out / "snapshot_n6_r0.bin")
    assert snap.n_open == snap.box.n_edges
    assert set(manifest["artifacts"]) == set(data_files(out))
    for name, digest in manifest["artifacts"].items():
        assert sha(out / name) == digest
    assert "wall_times" in manifest and manifest["code_version"]


@pytest.mark.parametrize("kind,extra", [
    ("geometry", {"sizes": [16, 20], "replicates": 2}),
    ("events", {"sizes": [4, 8], "trials": 6, "events": ["K", "R"], "p": 0.9}),
])
def test_byte_identical_reruns_across_thread_counts(tmp_path, kind, extra):
    spec = ExperimentSpec.from_dict({"kind": kind, **extra})
    a = data_files(run_experiment(spec, tmp_path / "a", threads=1))
    b = data_files(run_experiment(spec, tmp_path / "b", threads=2))
    c = data_files(run_experiment(spec, tmp_path / "c", threads=1))
    assert a == b == c


def test_bounds_at_full_density_records_slope(tmp_path):
    spec = ExperimentSpec.from_dict({"kind": "bounds", "p": 1.0, "sizes": [300],
                                     "times": [4, 8, 16, 32, 64, 100]})
    out = run_experiment(spec, tmp_path / "b")
    od = json.loads((out / "ondiagonal_n300_r0.json").read_text())
    assert od["diagnostics"]["slope"] == pytest.approx(-1.0, abs=0.05)
    row = rows(out / "summary.csv")[0]
    assert float(row["S_x"]) == 4.0 and row["envelope_violations"] == "0"


@pytest.mark.parametrize("kind,extra", [
    ("inequalities", {"sizes": [20], "radii": [3, 5]}),
    ("kernel", {"sizes": [30], "times": [1, 2, 4]}),
    ("harnack", {"p": 1.0, "sizes": [30], "radii": [6], "datasets": 5}),
])
def test_other_kinds_produce_summaries(tmp_path, kind, extra):
    out = run_experiment(ExperimentSpec.from_dict({"kind": kind, **extra}), tmp_path / kind)
    assert len(rows(out / "summary.csv")) == 1
    assert json.loads((out / "summary.json").read_text())["kind"] == kind


def tail_dir(tmp_path, name, sizes):
    spec = ExperimentSpec.from_dict({"kind": "events", "name": name, "sizes": sizes, "trials": 4,
                                     "events": ["K"], "p": 0.9})
    return run_experiment(spec, tmp_path / name)


def test_report_union_grid_marks_gaps(tmp_path):
    a = tail_dir(tmp_path, "small", [4, 8])
    b = tail_dir(tmp_path, "large", [8, 12])
    out = report([a, b], tmp_path / "rep")
    table = rows(out / "tails.csv")
    assert [r["size"] for r in table] == ["4", "8", "12"]
    assert table[0]["large:K"] == "NA" and table[2]["small:K"] == "NA"
    assert table[1]["large:K"] != "NA" and table[1]["small:K"] != "NA"


def test_report_single_directory_passthrough(tmp_path):
    a = tail_dir(tmp_path, "only", [4, 8])
    out = report([a], tmp_path / "rep")
    merged = rows(out / "merged.csv")
    src = rows(a / "summary.csv")
    assert [r["failure_frequency"] for r in merged] == [r["failure_frequency"] for r in src]


def test_report_errors_and_version_warning(tmp_path):
    with pytest.raises(ValueError):
        report([], tmp_path / "rep")
    a = tail_dir(tmp_path, "one", [4])
    b = tail_dir(tmp_path, "two", [4])
    m = json.loads((b / "manifest.json").read_text())
    m["code_version"] = "0.0.0+other"
    (b / "manifest.json").write_text(json.dumps(m))
    with pytest.warns(UserWarning, match="code versions"):
        report([a, b], tmp_path / "rep")


def test_cli_success_and_seed_override(tmp_path, capsys):
    spec = tmp_path / "s.yaml"
    spec.write_text("kind: sample\nsizes: [4]\nseed: 1\n")
    assert cli.main(["sample", "--spec", str(spec), "--out", str(tmp_path / "o"), "--seed", "77"]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["spec"]["seed"] == 77


def test_cli_validation_exit_code(tmp_path, capsys):
    spec = tmp_path / "s.yaml"
    spec.write_text("kind: sample\nbogus: 1\n")
    assert cli.main(["sample", "--spec", str(spec)]) == 2
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["kernel", "--spec", str(spec)]) == 2
    assert cli.main(["sample", "--spec", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense"])
    assert exc.value.code == 2


def test_cli_runtime_exit_code(tmp_path, capsys):
    spec = tmp_path / "s.yaml"
    # times far beyond what a side-10 box can hold away from its boundary
    spec.write_text("kind: bounds\np: 1.0\nsizes: [10]\ntimes: [500, 1000]\n")
    assert cli.main(["bounds", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 3
    assert "error" in capsys.readouterr().err


def test_cli_report(tmp_path):
    a = tail_dir(tmp_path, "x", [4])
    assert cli.main(["report", str(a), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "merged.csv").exists()
