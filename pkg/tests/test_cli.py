"""
Tests for the command line, config loading and report artifacts
"""

import csv
import json
import logging
import math
import os

import pytest

from main import apply_overrides, main
import montecarlo
from models import CurveRow, PlanBlock, RunConfig, VerificationReport
from reports import config_hash, emit_report

FAST = ["--set", "plan.caps.max_steps=50000", "--set", "plan.caps.max_range_vertices=200000"]


def report_files(directory, suffix):
    return sorted(name for name in os.listdir(directory) if name.endswith(suffix))


def test_validate_writes_reports(tmp_path):
    assert main(["validate", "--kappa", "3", "--out", str(tmp_path)]) == 0
    [report] = report_files(tmp_path, ".json")
    assert report.startswith("validate_")
    assert report_files(tmp_path, "_summary.txt")
    with open(tmp_path / report) as f:
        data = json.load(f)
    assert data["passed"] is True
    assert data["estimates"]["regime"] == "null-recurrent"


def test_psi_prints_the_value_first(tmp_path, capsys):
    assert main(["psi", "--kappa", "3", "--t", "1", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "0.0"
    assert main(["psi", "--kappa", "3", "--t", "2", "--out", str(tmp_path)]) == 0
    value = float(capsys.readouterr().out.splitlines()[0])
    assert value == pytest.approx(-math.log(2.0) + 2.0 * math.log(2.0) / 3.0, abs=1e-12)


def test_stochastic_kinds_need_a_seed(tmp_path, caplog):
    with caplog.at_level(logging.ERROR, logger='treewalk'):
        assert main(["walk", "--kappa", "3", "--out", str(tmp_path)]) == 1
    assert "plan.master_seed" in caplog.text


def test_config_file_without_seed(tmp_path, caplog):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"kind": "range", "environment": {"kappa": 3.0}, "plan": {"n_grid": [10]}}))
    with caplog.at_level(logging.ERROR, logger='treewalk'):
        assert main(["--config", str(path), "--out", str(tmp_path)]) == 1
    assert "plan.master_seed" in caplog.text


def test_bad_configs_are_usage_errors(tmp_path):
    out = str(tmp_path)
    assert main(["range", "--kappa", "3", "--seed", "1", "--set", "plan.bogus=1", "--out", out]) == 1
    assert main(["range", "--kappa", "3", "--seed", "1", "--set", "plan.n_grid", "--out", out]) == 1
    assert main(["range", "--kappa", "0.5", "--seed", "1", "--out", out]) == 1
    assert main(["--config", str(tmp_path / "missing.json"), "--out", out]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["--config", str(broken), "--out", out]) == 1


@pytest.mark.parametrize("kind", ["walk", "range"])
def test_same_config_gives_identical_json(tmp_path, kind):
    args = [kind, "--kappa", "3", "--seed", "11"] + FAST
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b"), "--workers", "2"])
    [first] = report_files(tmp_path / "a", ".json")
    [second] = report_files(tmp_path / "b", ".json")
    assert first == second
    assert (tmp_path / "a" / first).read_bytes() == (tmp_path / "b" / second).read_bytes()


def test_range_writes_its_level_table(tmp_path):
    main(["range", "--kappa", "3", "--seed", "4", "--out", str(tmp_path)] + FAST)
    [table] = report_files(tmp_path, "_range_levels.csv")
    with open(tmp_path / table, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["k", "Z_k", "L_k", "vertex_count_k"]
    assert rows[1][:2] == ["0", "1"]


def test_config_hash_tracks_semantic_fields():
    base = RunConfig(kind="walk", plan=PlanBlock(master_seed=1))
    same = RunConfig(kind="walk", plan=PlanBlock(master_seed=1), workers=8, output_directory="/tmp/x",
                     formats=["json"])
    other = RunConfig(kind="walk", plan=PlanBlock(master_seed=2))
    assert config_hash(base) == config_hash(same)
    assert config_hash(base) != config_hash(other)
    assert len(config_hash(base)) == 12


def test_emit_report_files(tmp_path):
    config = RunConfig(kind="yaglom", plan=PlanBlock(master_seed=3))
    report = VerificationReport(kind="yaglom", passed=True, master_seed=3)
    report.curves.append(CurveRow(n=10, lam=0.5, empirical=0.6, band_lo=0.55, band_hi=0.65, target=0.62))
    report.tables["joint"] = [[0.5, 0.5, 0.4, 0.01, 0.41]]
    written = emit_report(report, config, str(tmp_path / "out"))
    stem = f"yaglom_{config_hash(config)}"
    assert [os.path.basename(p) for p in written] == [
        f"{stem}.json", f"{stem}.csv", f"{stem}_joint.csv", f"{stem}_summary.txt",
    ]
    with open(written[1], newline='') as f:
        assert next(csv.reader(f)) == ["lambda", "empirical", "band_lo", "band_hi", "target"]
    with open(written[2], newline='') as f:
        assert next(csv.reader(f)) == ["lambda1", "lambda2", "empirical", "se", "target"]
    with open(written[0]) as f:
        data = json.load(f)
    assert data["config_hash"] == config_hash(config)
    assert "tables" not in data


def test_curve_csv_per_n(tmp_path):
    config = RunConfig(kind="theorem2", plan=PlanBlock(master_seed=3))
    report = VerificationReport(kind="theorem2", passed=True, master_seed=3)
    for n in (10, 20):
        for lam in (0.5, 1.0):
            report.curves.append(CurveRow(n=n, lam=lam, empirical=0.5 / n, band_lo=0.0, band_hi=1.0, target=0.5))
    written = emit_report(report, config, str(tmp_path))
    stem = f"theorem2_{config_hash(config)}"
    assert [os.path.basename(p) for p in written][1:4] == [f"{stem}.csv", f"{stem}_n10.csv", f"{stem}_n20.csv"]
    with open(written[1], newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["lambda", "empirical", "band_lo", "band_hi", "target"]
    assert [float(r[1]) for r in rows[1:]] == [0.025, 0.025]
    with open(written[2], newline='') as f:
        assert [float(r[1]) for r in list(csv.reader(f))[1:]] == [0.05, 0.05]


def test_unwritable_output_directory_is_a_usage_error(tmp_path, caplog):
    blocker = tmp_path / "plain-file"
    blocker.write_text("not a directory")
    target = blocker / "reports"
    with caplog.at_level(logging.ERROR, logger='treewalk'):
        assert main(["validate", "--kappa", "3", "--out", str(target)]) == 1
    assert str(target) in caplog.text


def test_theorem_kinds_refuse_when_the_oracle_fails(tmp_path, monkeypatch):
    failed = VerificationReport(kind="oracle-check", passed=False, master_seed=1)
    monkeypatch.setattr(montecarlo, "oracle_check", lambda plan: failed)
    assert main(["yaglom", "--kappa", "3", "--seed", "1", "--out", str(tmp_path)]) == 2
    reports = report_files(tmp_path, ".json")
    assert len(reports) == 1
    assert reports[0].startswith("oracle-check_")


def test_failed_assumptions_land_in_the_warnings_log(tmp_path):
    lattice = {
        "kind": "validate",
        "environment": {"family_id": "finite-support",
                        "table": [{"probability": 1.0, "marks": [math.log(2.0), math.log(2.0)]}]},
    }
    path = tmp_path / "lattice.json"
    path.write_text(json.dumps(lattice))
    assert main(["--config", str(path), "--out", str(tmp_path)]) == 2
    with open(tmp_path / "warnings.jsonl") as f:
        entries = [json.loads(line) for line in f]
    assert entries
    assert all(e["kind"] == "validate" for e in entries)
    assert any("kappa exists" in e["message"] for e in entries)


def test_output_directory_precedence(tmp_path, monkeypatch):
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("TREEWALK_OUTPUT_DIR", str(env_dir))
    assert main(["validate", "--kappa", "3"]) == 0
    assert report_files(env_dir, ".json")
    flag_dir = tmp_path / "from-flag"
    assert main(["validate", "--kappa", "3", "--out", str(flag_dir)]) == 0
    assert report_files(flag_dir, ".json")


def test_apply_overrides_builds_nested_blocks():
    data = apply_overrides({"kind": "walk"}, {"plan.master_seed": 3, "plan.caps.max_steps": 10})
    assert data == {"kind": "walk", "plan": {"master_seed": 3, "caps": {"max_steps": 10}}}
