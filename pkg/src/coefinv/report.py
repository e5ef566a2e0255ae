"""Run reports: per-iteration history rows, summaries, and their file formats.

``history.csv`` always carries the fixed column prefix

    k,time_s,discrepancy,alpha,eta,n_Q,n_V,fom_solves,bu_apps,riesz_solves,accepted

with counter columns cumulative at the end of each outer iteration. Trust
region runs append their extra diagnostics (rho, branch, K_ass, K_online,
r_trial) after the prefix. Floats are written with 17 significant digits so
parsing a written report reproduces it exactly.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem

CSV_COLUMNS = [
    "k",
    "time_s",
    "discrepancy",
    "alpha",
    "eta",
    "n_Q",
    "n_V",
    "fom_solves",
    "bu_apps",
    "riesz_solves",
    "accepted",
]
TR_COLUMNS = ["rho", "branch", "k_ass", "k_online", "r_trial"]


@dataclass
class IterationRow:
    k: int
    time_s: float
    discrepancy: float
    fom_solves: int
    bu_apps: int
    riesz_solves: int
    alpha: float = None
    eta: float = None
    n_q: int = None
    n_v: int = None
    accepted: bool = None
    rho: float = None
    branch: str = None
    k_ass: int = None
    k_online: int = None
    r_trial: float = None


@dataclass
class RunReport:
    algorithm: str
    config: dict
    rows: list
    summary: dict
    q: np.ndarray = None
    q_exact: np.ndarray = None

    @property
    def converged(self):
        return bool(self.summary.get("converged"))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def _row_values(row, tr_columns):
    values = [
        row.k,
        row.time_s,
        row.discrepancy,
        row.alpha,
        row.eta,
        row.n_q,
        row.n_v,
        row.fom_solves,
        row.bu_apps,
        row.riesz_solves,
        row.accepted,
    ]
    if tr_columns:
        values += [row.rho, row.branch, row.k_ass, row.k_online, row.r_trial]
    return values


def _has_tr_fields(rows):
    return any(
        r.rho is not None
        or r.branch is not None
        or r.k_ass is not None
        or r.k_online is not None
        or r.r_trial is not None
        for r in rows
    )


def write_history_csv(path, rows):
    tr = _has_tr_fields(rows)
    columns = CSV_COLUMNS + (TR_COLUMNS if tr else [])
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in _row_values(row, tr)) + "\n")


def _parse_cell(name, text):
    if text == "":
        return None
    if name == "branch":
        return text
    if name in ("k", "n_Q", "n_V", "fom_solves", "bu_apps", "riesz_solves",
                "k_ass", "k_online"):
        return int(text)
    if name == "accepted":
        return text == "1"
    return float(text)


def read_history_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    columns = lines[0].split(",")
    if columns[: len(CSV_COLUMNS)] != CSV_COLUMNS:
        raise ValueError(f"unexpected history columns in {path}: {columns}")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        named = {c: _parse_cell(c, v) for c, v in zip(columns, cells)}
        rows.append(
            IterationRow(
                k=named["k"],
                time_s=named["time_s"],
                discrepancy=named["discrepancy"],
                alpha=named.get("alpha"),
                eta=named.get("eta"),
                n_q=named.get("n_Q"),
                n_v=named.get("n_V"),
                fom_solves=named["fom_solves"],
                bu_apps=named["bu_apps"],
                riesz_solves=named["riesz_solves"],
                accepted=named.get("accepted"),
                rho=named.get("rho"),
                branch=named.get("branch"),
                k_ass=named.get("k_ass"),
                k_online=named.get("k_online"),
                r_trial=named.get("r_trial"),
            )
        )
    return rows


def emit_report(report, outdir):
    """Write history.csv, summary.json, and the reconstruction fields."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_history_csv(outdir / "history.csv", report.rows)
    with open(outdir / "summary.json", "w") as fh:
        json.dump(
            {"algorithm": report.algorithm, "config": report.config,
             **report.summary},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    if report.q is not None:
        n = int(round(np.sqrt(report.q.size))) - 1
        grid = fem.StructuredGrid(n)
        fem.write_field_csv(outdir / "q_reconstructed.csv", grid, report.q)
        if report.q_exact is not None:
            err = np.abs(report.q - report.q_exact) / np.abs(report.q_exact)
            fem.write_field_csv(outdir / "pointwise_error.csv", grid, err)
    return outdir


def parse_report(outdir):
    """Read a report directory back; inverse of emit_report."""
    outdir = Path(outdir)
    rows = read_history_csv(outdir / "history.csv")
    with open(outdir / "summary.json") as fh:
        payload = json.load(fh)
    algorithm = payload.pop("algorithm")
    config = payload.pop("config")
    q = None
    if (outdir / "q_reconstructed.csv").exists():
        _, q = fem.read_field_csv(outdir / "q_reconstructed.csv")
    return RunReport(
        algorithm=algorithm, config=config, rows=rows, summary=payload, q=q
    )


def compare_reconstructions(field_a, field_b, kind="reaction"):
    """Distances between two nodal parameter fields (b is the reference).

    Returns relative L2 and Q-metric distances plus the pointwise relative
    error field.
    """
    field_a = np.asarray(field_a, dtype=np.float64)
    field_b = np.asarray(field_b, dtype=np.float64)
    if field_a.shape != field_b.shape:
        raise ValueError("fields must live on the same grid")
    n = int(round(np.sqrt(field_a.size))) - 1
    grid = fem.StructuredGrid(n)
    mass = fem.assemble_mass(grid)
    if str(kind) in ("reaction", "ProblemKind.REACTION"):
        q_metric = mass
    else:
        q_metric = mass + fem.assemble_stiffness(grid)
    diff = field_a - field_b

    def norm(mat, v):
        return float(np.sqrt(max(v @ (mat @ v), 0.0)))

    rel_l2 = norm(mass, diff) / norm(mass, field_b)
    rel_q = norm(q_metric, diff) / norm(q_metric, field_b)
    pointwise = np.abs(diff) / np.abs(field_b)
    return {"rel_l2": rel_l2, "rel_q": rel_q, "pointwise": pointwise}
