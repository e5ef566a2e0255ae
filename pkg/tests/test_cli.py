"""Command-line interface: argument wiring, file emission, exit codes."""

import json
import subprocess
import sys

import pytest

from coefinv.cli import main
from coefinv.report import parse_report

FAST = ["--n", "12", "--delta", "1e-4", "--seed", "5"]


def test_run_emits_report_files(tmp_path):
    out = tmp_path / "rep"
    rv = main(["run", "--run", "1", "--algorithm", "fom", *FAST,
               "--out", str(out)])
    assert rv == 0
    for name in ("history.csv", "summary.json", "q_reconstructed.csv",
                 "pointwise_error.csv"):
        assert (out / name).exists(), name
    rep = parse_report(out)
    assert rep.algorithm == "fom"
    assert rep.config["n"] == 12
    assert rep.summary["converged"] is True


def test_run_without_out_prints_summary(capsys):
    rv = main(["run", "--run", "1", "--algorithm", "fom", *FAST])
    assert rv == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["algorithm"] == "fom"
    assert payload["converged"] is True
    assert payload["fom_solves"] > 0


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "run: 1\nalgorithm: fom\nn: 8\ndelta: 1.0e-4\nseed: 5\n"
    )
    out = tmp_path / "rep"
    rv = main(["run", "--config", str(cfg), "--n", "12",
               "--out", str(out)])
    assert rv == 0
    rep = parse_report(out)
    assert rep.config["n"] == 12  # flag wins over file
    assert rep.config["seed"] == 5  # file value survives


def test_config_file_must_be_mapping(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("- just\n- a\n- list\n")
    with pytest.raises(SystemExit):
        main(["run", "--config", str(cfg)])


def test_nonconverged_run_exits_3(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("run: 1\nalgorithm: fom\nn: 12\ndelta: 1.0e-4\n"
                   "seed: 5\nmax_outer: 1\n")
    rv = main(["run", "--config", str(cfg)])
    assert rv == 3


def test_export_basis(tmp_path, capsys):
    out = tmp_path / "rep"
    rv = main(["run", "--run", "1", "--algorithm", "qr", *FAST,
               "--out", str(out), "--export-basis"])
    assert rv == 0
    manifest = json.loads((out / "basis" / "manifest.json").read_text())
    assert manifest["n_q"] == len(manifest["vectors"])
    for entry in manifest["vectors"]:
        assert (out / "basis" / entry["file"]).exists()
    # arrival outer-iteration tags never decrease
    tags = [entry["enriched_at"] for entry in manifest["vectors"]]
    assert tags == sorted(tags)
    assert tags[0] == 0


def test_export_basis_for_fom_warns_and_skips(tmp_path, caplog):
    out = tmp_path / "rep"
    rv = main(["run", "--run", "1", "--algorithm", "fom", *FAST,
               "--out", str(out), "--export-basis"])
    assert rv == 0
    assert not (out / "basis").exists()


def test_problem_override_switches_kind(tmp_path):
    out = tmp_path / "rep"
    rv = main(["run", "--run", "1", "--problem", "diffusion",
               "--algorithm", "fom", *FAST, "--out", str(out)])
    assert rv == 0
    rep = parse_report(out)
    assert rep.config["kind"] == "diffusion"


def test_compare_identical_reports(tmp_path, capsys):
    out = tmp_path / "rep"
    main(["run", "--run", "1", "--algorithm", "fom", *FAST,
          "--out", str(out)])
    capsys.readouterr()
    cmp_out = tmp_path / "cmp.json"
    rv = main(["compare", str(out), str(out), "--out", str(cmp_out)])
    assert rv == 0
    printed = json.loads(capsys.readouterr().out)
    stored = json.loads(cmp_out.read_text())
    assert printed == stored
    assert stored["rel_l2"] == 0.0
    assert stored["rel_q"] == 0.0
    assert stored["pointwise_max"] == 0.0


def test_case_study_emits_three_reports(tmp_path, capsys):
    out = tmp_path / "cs"
    rv = main(["case-study", *FAST, "--out", str(out)])
    assert rv == 0
    table = json.loads((out / "case_study.json").read_text())
    assert set(table) == {"offline", "online", "mixed"}
    for mode in table:
        assert table[mode]["converged"] is True
        rep = parse_report(out / mode)
        assert rep.algorithm == "qr-vr"


def test_module_help_runs_as_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "coefinv.cli", "run", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "--algorithm" in proc.stdout
