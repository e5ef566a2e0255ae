"""Report serialization: exact round-trips and field comparisons."""

import dataclasses
import json

import numpy as np
import pytest

from coefinv import StructuredGrid
from coefinv.report import (
    CSV_COLUMNS,
    TR_COLUMNS,
    IterationRow,
    RunReport,
    compare_reconstructions,
    emit_report,
    parse_report,
    read_history_csv,
    write_history_csv,
)


def plain_rows():
    return [
        IterationRow(k=0, time_s=0.0, discrepancy=0.123456789012345678,
                     fom_solves=1, bu_apps=0, riesz_solves=0),
        IterationRow(k=1, time_s=0.517, discrepancy=3.0000000000000004e-05,
                     alpha=1 / 3, fom_solves=41, bu_apps=40, riesz_solves=0,
                     accepted=True),
    ]


def tr_rows():
    return plain_rows() + [
        IterationRow(k=2, time_s=1.1, discrepancy=2e-5, alpha=0.25, eta=0.1,
                     n_q=4, n_v=6, fom_solves=45, bu_apps=41, riesz_solves=20,
                     accepted=False, rho=-0.75, branch="reject_cheap",
                     k_ass=8, k_online=14, r_trial=0.09999999999999998),
    ]


class TestHistoryCsv:
    def test_round_trip_is_exact(self, tmp_path):
        path = tmp_path / "history.csv"
        rows = tr_rows()
        write_history_csv(path, rows)
        back = read_history_csv(path)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            assert dataclasses.asdict(a) == dataclasses.asdict(b)

    def test_plain_rows_get_plain_header(self, tmp_path):
        path = tmp_path / "history.csv"
        write_history_csv(path, plain_rows())
        header = path.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)

    def test_tr_rows_extend_the_header(self, tmp_path):
        path = tmp_path / "history.csv"
        write_history_csv(path, tr_rows())
        header = path.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS + TR_COLUMNS)

    def test_unknown_header_rejected(self, tmp_path):
        path = tmp_path / "history.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            read_history_csv(path)


class TestEmitParse:
    def make_report(self, with_fields=True):
        grid = StructuredGrid(4)
        q = 3.0 + 0.1 * grid.coords[:, 0]
        q_exact = np.full(grid.n_nodes, 3.0)
        return RunReport(
            algorithm="qr-vr",
            config={"run": 2, "n": 4, "delta": 1e-5, "seed": 7},
            rows=tr_rows(),
            summary={"converged": True, "fom_solves": 45, "discrepancy": 2e-5},
            q=q if with_fields else None,
            q_exact=q_exact if with_fields else None,
        )

    def test_round_trip(self, tmp_path):
        report = self.make_report()
        emit_report(report, tmp_path)
        back = parse_report(tmp_path)
        assert back.algorithm == report.algorithm
        assert back.config == report.config
        assert back.summary == report.summary
        for a, b in zip(report.rows, back.rows):
            assert dataclasses.asdict(a) == dataclasses.asdict(b)
        assert np.array_equal(back.q, report.q)

    def test_emitted_files(self, tmp_path):
        emit_report(self.make_report(), tmp_path)
        for name in ("history.csv", "summary.json", "q_reconstructed.csv",
                     "pointwise_error.csv"):
            assert (tmp_path / name).exists()
        payload = json.loads((tmp_path / "summary.json").read_text())
        assert payload["algorithm"] == "qr-vr"
        assert payload["fom_solves"] == 45

    def test_no_field_emission_without_q(self, tmp_path):
        emit_report(self.make_report(with_fields=False), tmp_path)
        assert not (tmp_path / "q_reconstructed.csv").exists()

    def test_summary_keys_sorted(self, tmp_path):
        emit_report(self.make_report(), tmp_path)
        text = (tmp_path / "summary.json").read_text()
        keys = [line.split('"')[1] for line in text.splitlines()
                if line.startswith('  "')]
        assert keys == sorted(keys)


class TestCompareReconstructions:
    def test_identical_fields_are_at_distance_zero(self):
        grid = StructuredGrid(5)
        q = 3.0 + grid.coords[:, 0]
        out = compare_reconstructions(q, q, "reaction")
        assert out["rel_l2"] == 0.0
        assert out["rel_q"] == 0.0
        assert np.all(out["pointwise"] == 0.0)

    def test_uniform_offset_has_known_relative_error(self):
        grid = StructuredGrid(6)
        base = np.full(grid.n_nodes, 4.0)
        out = compare_reconstructions(base * 1.05, base, "diffusion")
        assert out["rel_l2"] == pytest.approx(0.05, rel=1e-12)
        assert out["rel_q"] == pytest.approx(0.05, rel=1e-12)
        assert np.allclose(out["pointwise"], 0.05)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compare_reconstructions(np.ones(25), np.ones(36))

    def test_q_metric_differs_between_kinds(self):
        grid = StructuredGrid(8)
        x = grid.coords[:, 0]
        a = 3.0 + np.sin(4 * np.pi * x)
        b = np.full(grid.n_nodes, 3.0)
        reaction = compare_reconstructions(a, b, "reaction")
        diffusion = compare_reconstructions(a, b, "diffusion")
        assert reaction["rel_l2"] == pytest.approx(diffusion["rel_l2"])
        # the oscillation is penalized by the derivative part of the metric
        assert diffusion["rel_q"] > 2.0 * reaction["rel_q"]
