"""Error-aware trust-region Gauss-Newton on the doubly reduced model.

Iterates live in the reduced parameter span and states come from the reduced
state basis, so a whole outer iteration costs no full-order solve until its
acceptance decision. The trust region is not a ball: a candidate is inside
whenever the relative error bound of the reduced objective stays below eta,
which shrinks on rejected steps and grows on very successful ones. Full
solves happen only when the error bound cannot decide acceptance on its own
and after an accepted step, where state, adjoint, and gradient of the new
iterate enrich both bases.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .irgnm import backtrack_alpha
from .model import InadmissibleParameterError
from .param_space import ReducedParameterSpace
from .report import IterationRow
from .state_space import DiscrepancyEstimator, ReducedStateModel, rom_subproblem

logger = logging.getLogger(__name__)


class TrustRegionError(RuntimeError):
    """The backtracking search could not produce an admissible point."""


@dataclass
class TrConfig:
    tau: float = 3.5
    tau_inner: float = 1.0
    delta_inner: float = None  # defaults to the model noise level
    eta0: float = 0.1
    beta1: float = 0.95
    beta2: float = 0.75
    beta3: float = 0.5
    kappa_arm: float = 1e-12
    theta: float = 0.4
    big_theta: float = 0.9
    alpha0: float = 1.0
    alpha_factor: float = 2.0
    cg_tol: float = 1e-10
    cg_maxit: int = 2000
    max_outer: int = 100
    max_inner: int = 20
    max_alpha_tries: int = 60
    max_halvings: int = 60
    discard_tol: float = 1e-10
    estimator_mode: str = "mixed"


@dataclass
class TrResult:
    q: np.ndarray
    theta: np.ndarray
    space: ReducedParameterSpace
    reduced: ReducedStateModel
    estimator: DiscrepancyEstimator
    rows: list
    converged: bool
    discrepancy: float
    outer_iterations: int
    events: dict = field(default_factory=dict)


def acceptance_branch(jhat_trial, bound, jhat_ref):
    """Classify a trial point against a reference objective value.

    The reduced objective is trusted only up to ``bound``: when the error
    interval around the trial value lies entirely below or above the
    reference, the decision is free; otherwise it needs a full-order check.
    """
    if jhat_trial + bound < jhat_ref:
        return "accept_cheap"
    if jhat_trial - bound > jhat_ref:
        return "reject_cheap"
    return "fom"


def armijo_cauchy_point(reduced, estimator, ev_k, grad, t_init, eta,
                        kappa=1e-12, max_halvings=60):
    """Backtracked steepest-descent candidate inside the trust region.

    Halves the step until the reduced objective decreases sufficiently and
    the relative error bound stays below eta; inadmissible candidates just
    shorten the step further. Returns (ev, indicator, accepted step size).
    """
    gnorm2 = float(grad @ grad)
    if gnorm2 == 0.0:
        return ev_k, estimator.relative_indicator(ev_k), t_init
    t = t_init
    for _ in range(max_halvings):
        try:
            ev = reduced.evaluate(ev_k.theta - t * grad)
            indicator = estimator.relative_indicator(ev)
            if ev.jhat - ev_k.jhat <= -kappa * t * gnorm2 and indicator <= eta:
                return ev, indicator, t
        except InadmissibleParameterError:
            pass
        t *= 0.5
    raise TrustRegionError(
        f"no admissible descent candidate above step size {t:.3e}"
    )


def _tr_inner(reduced, estimator, ev, indicator, prior_coeffs, eta, alpha,
              inner_target, cfg, events):
    """Gauss-Newton iteration on the reduced model, kept inside the region.

    Each accepted update must satisfy the error-bound condition; steps are
    shortened from t=1 until it holds. Stops at the reduced discrepancy
    target, near the region boundary, on a failed line search, or after
    max_inner steps. Returns the final evaluation, its indicator, and the
    first accepted regularization weight for warm starting.
    """
    first_alpha = None
    for _ in range(cfg.max_inner):
        if ev.discrepancy <= inner_target:
            break
        if indicator >= cfg.beta1 * eta:
            break
        sub = rom_subproblem(reduced, ev, prior_coeffs,
                             cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit)
        alpha, step, _, tries, cg_iters, _ = backtrack_alpha(
            sub, ev.jhat, alpha,
            theta=cfg.theta, big_theta=cfg.big_theta,
            factor=cfg.alpha_factor, max_tries=cfg.max_alpha_tries,
        )
        events["cg_iters"] += cg_iters
        events["alpha_tries"] += tries
        if first_alpha is None:
            first_alpha = alpha
        if not np.any(step):
            break
        t = 1.0
        candidate = None
        for _ in range(cfg.max_halvings):
            try:
                ev_t = reduced.evaluate(ev.theta + t * step)
                ind_t = estimator.relative_indicator(ev_t)
                if ind_t <= eta:
                    candidate = (ev_t, ind_t)
                    break
            except InadmissibleParameterError:
                pass
            t *= 0.5
        if candidate is None:
            logger.debug("inner line search exhausted, keeping the iterate")
            break
        ev, indicator = candidate
    return ev, indicator, first_alpha if first_alpha is not None else alpha, alpha


def tr_irgnm(model, q0, config=None, q_prior=None, time_origin=None):
    """Run the trust-region iteration with on-the-fly model reduction.

    Acceptance of a trial point is decided by the error bound whenever the
    bound separates the trial's objective from the descent candidate's;
    only the undecided middle case spends a full-order solve.
    """
    cfg = config if config is not None else TrConfig()
    t0 = time.perf_counter() if time_origin is None else time_origin
    q = np.asarray(q0, dtype=np.float64).copy()
    prior = q.copy() if q_prior is None else np.asarray(q_prior, np.float64).copy()
    delta_inner = model.delta if cfg.delta_inner is None else cfg.delta_inner
    target = cfg.tau * model.delta
    inner_target = cfg.tau_inner * delta_inner
    events = {"states": 0, "adjoints": 0, "snapshots": 0, "fom_checks": 0,
              "cg_iters": 0, "alpha_tries": 0,
              "accepted_steps": 0, "rejected_steps": 0}

    u = model.solve_state(q)
    events["states"] += 1
    disc = model.l2_norm(model.observation_residual(u))
    jhat_full = 0.5 * disc * disc
    converged = disc <= target

    space = ReducedParameterSpace(model, discard_tol=cfg.discard_tol)
    space.enrich(prior, tag=0)
    space.enrich(q, tag=0)
    reduced = ReducedStateModel(model, space, discard_tol=cfg.discard_tol)
    snap_norm = None
    if not converged:
        p = model.solve_adjoint(q)
        events["adjoints"] += 1
        snap = model.q_riesz(model.apply_bt(u, p))
        events["snapshots"] += 1
        space.enrich(snap, tag=0)
        snap_norm = model.q_norm(snap)
        reduced.sync_parameter_space()
        reduced.enrich_state(u, tag=0)
        reduced.enrich_state(p, tag=0)
    estimator = DiscrepancyEstimator(reduced, mode=cfg.estimator_mode)

    theta = space.project(q)
    prior_coeffs = space.project(prior)
    eta = cfg.eta0
    alpha = cfg.alpha0
    t_agc = 0.5 / snap_norm if snap_norm else 1.0
    rows = [_tr_row(model, reduced, 0, t0, disc, eta)]

    k = 0
    while not converged and k < cfg.max_outer:
        k += 1
        ev_k = reduced.evaluate(theta)
        grad = reduced.gradient_reduced(ev_k)
        ev_agc, ind_agc, t_agc = armijo_cauchy_point(
            reduced, estimator, ev_k, grad, t_agc, eta,
            kappa=cfg.kappa_arm, max_halvings=cfg.max_halvings,
        )
        ev_trial, ind_trial, alpha_first, alpha = _tr_inner(
            reduced, estimator, ev_agc, ind_agc, prior_coeffs, eta, alpha,
            inner_target, cfg, events,
        )

        bound_trial = ev_trial.jhat * ind_trial if np.isfinite(ind_trial) else np.inf
        q_trial = space.lift(ev_trial.theta)
        jhat_trial_full = None
        branch = acceptance_branch(ev_trial.jhat, bound_trial, ev_agc.jhat)
        if branch == "fom":
            jhat_trial_full = model.jhat(q_trial)
            events["states"] += 1
            events["fom_checks"] += 1
            accepted = jhat_trial_full <= ev_agc.jhat
            branch = "accept_fom" if accepted else "reject_fom"
        else:
            accepted = branch == "accept_cheap"

        rho = None
        k_ass = k_online = None
        if accepted:
            events["accepted_steps"] += 1
            if jhat_trial_full is None:
                jhat_trial_full = model.jhat(q_trial)
                events["states"] += 1
            denom = ev_k.jhat - ev_trial.jhat
            rho = (jhat_full - jhat_trial_full) / denom if denom != 0.0 else None
            q = q_trial
            jhat_full = jhat_trial_full
            disc = float(np.sqrt(2.0 * jhat_full))
            theta = ev_trial.theta
            converged = disc <= target
            if not converged:
                u_new = model.solve_state(q)
                p_new = model.solve_adjoint(q)
                events["adjoints"] += 1
                snap = model.q_riesz(model.apply_bt(u_new, p_new))
                events["snapshots"] += 1
                if space.enrich(snap, tag=k):
                    theta = np.append(theta, 0.0)
                    prior_coeffs = np.append(prior_coeffs, 0.0)
                reduced.sync_parameter_space()
                reduced.enrich_state(u_new, tag=k)
                reduced.enrich_state(p_new, tag=k)
                k_ass, k_online = estimator.conclude_outer(k)
            if rho is not None and rho > cfg.beta2:
                eta_next = eta / cfg.beta3
            else:
                eta_next = eta
        else:
            events["rejected_steps"] += 1
            if jhat_trial_full is not None:
                denom = ev_k.jhat - ev_trial.jhat
                rho = (jhat_full - jhat_trial_full) / denom if denom != 0.0 else None
            k_ass, k_online = estimator.conclude_outer(k)
            eta_next = eta * cfg.beta3

        rows.append(_tr_row(
            model, reduced, k, t0, disc, eta,
            alpha=alpha, accepted=accepted, rho=rho, branch=branch,
            k_ass=k_ass, k_online=k_online, r_trial=ind_trial,
        ))
        eta = eta_next
        alpha = alpha_first
        logger.info("outer %d: %s, discrepancy %.6e, eta %.3e, bases (%d, %d)",
                    k, branch, disc, eta, space.n_q, reduced.n_v)

    return TrResult(
        q=q, theta=theta, space=space, reduced=reduced, estimator=estimator,
        rows=rows, converged=converged, discrepancy=disc,
        outer_iterations=k, events=events,
    )


def _tr_row(model, reduced, k, t0, disc, eta, alpha=None, accepted=None,
            rho=None, branch=None, k_ass=None, k_online=None, r_trial=None):
    counters = model.counters
    return IterationRow(
        k=k,
        time_s=time.perf_counter() - t0,
        discrepancy=disc,
        alpha=alpha,
        eta=eta,
        n_q=reduced.space.n_q,
        n_v=reduced.n_v,
        fom_solves=counters.fom_solves,
        bu_apps=counters.bu_applications,
        riesz_solves=counters.riesz_solves,
        accepted=accepted,
        rho=rho,
        branch=branch,
        k_ass=k_ass,
        k_online=k_online,
        r_trial=float(r_trial) if r_trial is not None else None,
    )
