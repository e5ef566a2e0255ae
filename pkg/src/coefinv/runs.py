"""Benchmark problem definitions and drivers for the four standard runs.

Runs 1 and 3 reconstruct a reaction coefficient, runs 2 and 4 a diffusion
coefficient, each from the same noisy-observation setup: exact data computed
on a refined grid, uniform nodal noise scaled to the requested level, initial
guess equal to the constant background. Any of the three algorithms can be
pointed at any run.
"""

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import fem
from .irgnm import IrgnmConfig, fom_irgnm
from .model import ForwardModel, ProblemKind, generate_noisy_data
from .param_space import QrConfig, qr_irgnm
from .report import RunReport
from .trust_region import TrConfig, tr_irgnm

logger = logging.getLogger(__name__)

ALGORITHMS = ("fom", "qr", "qr-vr")
_ALGORITHM_ALIASES = {"qrvr": "qr-vr", "qr_vr": "qr-vr"}


def normalize_algorithm(token):
    token = str(token).lower()
    token = _ALGORITHM_ALIASES.get(token, token)
    if token not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {token!r}, expected one of {ALGORITHMS}")
    return token


# -- exact coefficient fields ------------------------------------------------


class SumField:
    """Exact coefficient as a constant background plus additive terms.

    Evaluable at arbitrary points (scalar or array coordinates), which is
    what fine-grid data generation needs.
    """

    def __init__(self, background, terms=()):
        self.background = float(background)
        self.terms = tuple(terms)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.full(np.broadcast_shapes(x.shape, y.shape), self.background)
        for term in self.terms:
            out = out + term(x, y)
        return out


def gaussian_term(center, widths, amplitude):
    cx, cy = center
    try:
        wx, wy = widths
    except TypeError:
        wx = wy = widths

    def term(x, y):
        return amplitude * np.exp(
            -0.5 * (((x - cx) / wx) ** 2 + ((y - cy) / wy) ** 2)
        )

    return term


def indicator_term(region, amplitude):
    """region: callable of (x, y) returning a boolean mask."""

    def term(x, y):
        return amplitude * region(x, y).astype(np.float64)

    return term


def hat_term(center, half_width, height):
    """Pyramid with square max-norm footprint, linear decay to the edge."""
    cx, cy = center

    def term(x, y):
        reach = np.maximum(np.abs(x - cx), np.abs(y - cy)) / half_width
        return height * np.maximum(0.0, 1.0 - reach)

    return term


def gaussian_peaks_field(sigma=0.1, background=3.0):
    """Two bell-shaped peaks on a constant background (run 1).

    The peak positions and widths are fixed; sigma only sets the common
    amplitude 1/(2 pi sigma^2), about 15.9 above background at the default.
    """
    amp = 1.0 / (2.0 * np.pi * sigma * sigma)
    return SumField(background, [
        gaussian_term((0.25, 0.25), 0.05, amp),
        gaussian_term((0.625, 0.625), 0.125, amp),
    ])


def channels_and_disk_field(background=3.0, contrast=2.0):
    """Piecewise constant: raised U-shaped channel, sunken disk (run 2)."""

    def channel(x, y):
        stem = (5 / 30 <= x) & (x <= 9 / 30) & (3 / 30 <= y) & (y <= 27 / 30)
        arms = ((9 / 30 <= x) & (x <= 27 / 30)
                & (((3 / 30 <= y) & (y <= 7 / 30))
                   | ((23 / 30 <= y) & (y <= 27 / 30))))
        return stem | arms

    def disk(x, y):
        return (x - 18 / 30) ** 2 + (y - 15 / 30) ** 2 < (4 / 30) ** 2

    return SumField(background, [
        indicator_term(channel, contrast),
        indicator_term(disk, -2.0),
    ])


def mixed_features_field(background=3.0):
    """Gaussian, pyramid hat, and two rectangular obstacles (runs 3 and 4)."""

    def raised(x, y):
        return (0.55 <= x) & (x <= 0.75) & (0.15 <= y) & (y <= 0.35)

    def sunken(x, y):
        return (0.15 <= x) & (x <= 0.35) & (0.15 <= y) & (y <= 0.35)

    return SumField(background, [
        gaussian_term((0.25, 0.75), 0.05, 2.0),
        hat_term((0.75, 0.75), 0.15, 2.0),
        indicator_term(raised, 2.0),
        indicator_term(sunken, -1.5),
    ])


_RUN_KINDS = {
    1: ProblemKind.REACTION,
    2: ProblemKind.DIFFUSION,
    3: ProblemKind.REACTION,
    4: ProblemKind.DIFFUSION,
}


@dataclass
class RunConfig:
    run: int = None
    kind: ProblemKind = ProblemKind.REACTION
    algorithm: str = "fom"
    n: int = 100
    delta: float = 1e-5
    seed: int = 1
    estimator: str = "mixed"
    alpha0: float = None  # resolved per problem kind when unset
    eta0: float = 0.1
    tau: float = 3.5
    tau_inner: float = 1.0
    l_inner_max: int = 2
    max_outer: int = None  # per-algorithm default when unset
    gaussian_sigma: float = 0.1
    fine_factor: int = 2
    background: float = 3.0
    q_floor: float = 0.001
    h1_metric: str = "full"
    out: str = None

    def resolved_alpha0(self):
        if self.alpha0 is not None:
            return self.alpha0
        return 1.0 if self.kind is ProblemKind.REACTION else 1e-3

    def as_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["algorithm"] = normalize_algorithm(self.algorithm)
        return d


def build_run(run, **overrides):
    """Config for one of the standard runs, with field-name-checked overrides."""
    run = int(run)
    if run not in _RUN_KINDS:
        raise ValueError(f"unknown run {run}, expected 1-4")
    config = RunConfig(run=run, kind=_RUN_KINDS[run])
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise TypeError(f"unknown config field {key!r}")
        setattr(config, key, value)
    config.kind = ProblemKind(config.kind)
    return config


def exact_field(config):
    if config.run == 1:
        return gaussian_peaks_field(config.gaussian_sigma, config.background)
    if config.run == 2:
        return channels_and_disk_field(config.background)
    if config.run in (3, 4):
        return mixed_features_field(config.background)
    raise ValueError(f"run {config.run} has no built-in exact field")


def make_problem(config, q_exact_fn=None):
    """Noisy data, forward model, and initial guess for a run config."""
    fn = q_exact_fn if q_exact_fn is not None else exact_field(config)
    data = generate_noisy_data(
        config.kind, config.n, fn, config.delta, config.seed,
        fine_factor=config.fine_factor,
    )
    model = ForwardModel(
        fem.StructuredGrid(config.n), config.kind, data.y_delta, config.delta,
        q_floor=config.q_floor, h1_metric=config.h1_metric,
    )
    q0 = np.full(model.grid.n_nodes, config.background)
    return model, data, q0


def run_benchmark(config, q_exact_fn=None):
    """Execute the configured algorithm on the configured problem."""
    algorithm = normalize_algorithm(config.algorithm)
    model, data, q0 = make_problem(config, q_exact_fn)
    alpha0 = config.resolved_alpha0()
    logger.info("run %s: %s on %s, n=%d, delta=%.3e, seed=%d",
                config.run, algorithm, config.kind.value, config.n,
                config.delta, config.seed)

    t0 = time.perf_counter()
    if algorithm == "fom":
        acfg = IrgnmConfig(tau=config.tau, alpha0=alpha0)
        if config.max_outer is not None:
            acfg.max_outer = config.max_outer
        result = fom_irgnm(model, q0, acfg, time_origin=t0)
        n_q = n_v = None
    elif algorithm == "qr":
        acfg = QrConfig(tau=config.tau, tau_inner=config.tau_inner,
                        l_inner_max=config.l_inner_max, alpha0=alpha0)
        if config.max_outer is not None:
            acfg.max_outer = config.max_outer
        result = qr_irgnm(model, q0, acfg, time_origin=t0)
        n_q, n_v = result.space.n_q, None
    else:
        acfg = TrConfig(tau=config.tau, tau_inner=config.tau_inner,
                        eta0=config.eta0, alpha0=alpha0,
                        estimator_mode=config.estimator)
        if config.max_outer is not None:
            acfg.max_outer = config.max_outer
        result = tr_irgnm(model, q0, acfg, time_origin=t0)
        n_q, n_v = result.space.n_q, result.reduced.n_v

    counters = model.counters
    rel_exact = (model.l2_norm(result.q - data.q_exact)
                 / model.l2_norm(data.q_exact))
    summary = {
        "time_s": result.rows[-1].time_s,
        "outer_iterations": result.outer_iterations,
        "converged": result.converged,
        "discrepancy": result.discrepancy,
        "fom_solves": counters.fom_solves,
        "bu_apps": counters.bu_applications,
        "riesz_solves": counters.riesz_solves,
        "q_solves": counters.q_solves,
        "n_q": n_q,
        "n_v": n_v,
        "rel_error_exact": rel_exact,
        "events": result.events,
    }
    report = RunReport(
        algorithm=algorithm, config=config.as_dict(), rows=result.rows,
        summary=summary, q=result.q, q_exact=data.q_exact,
    )
    # runtime-only handle for basis export; not serialized with the report
    report.result = result
    return report


def estimator_case_study(n=100, delta=1e-5, seed=1, eta0=10.0, **overrides):
    """Run 2 with a wide initial region under all three estimator routes."""
    reports = {}
    for mode in ("offline", "online", "mixed"):
        config = build_run(2, algorithm="qr-vr", estimator=mode,
                           n=n, delta=delta, seed=seed, eta0=eta0, **overrides)
        reports[mode] = run_benchmark(config)
        logger.info("estimator %s: %d representative solves", mode,
                    reports[mode].summary["riesz_solves"])
    return reports
