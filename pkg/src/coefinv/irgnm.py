"""Iteratively regularized Gauss-Newton method on the full discrete model.

Each outer iteration solves the Tikhonov-regularized normal equations of the
linearized problem with CG and adapts the regularization weight until the
linearized discrepancy lands in a fixed bracket relative to the current
objective value. The number of PDE-sized solves is tracked explicitly: one
state and one adjoint solve per outer iteration, two solves per CG iteration.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .report import IterationRow

logger = logging.getLogger(__name__)


class CgError(RuntimeError):
    """Normal-equation CG failed to reach its tolerance."""


@dataclass
class CgResult:
    x: np.ndarray
    du: np.ndarray
    iterations: int
    residual: float


def cg_normal(apply_normal, metric_solve, b, tol=1e-10, maxit=2000):
    """CG on a normal system in the metric induced by ``metric_solve``.

    ``apply_normal(p)`` returns the dual vector of the (SPD) operator applied
    to ``p`` together with an auxiliary vector that depends linearly on the
    solution; the same linear combination that builds x accumulates the aux
    vectors, so callers get e.g. the linearized state update for free.
    ``b`` is a dual vector. Residuals are measured in the dual norm of the
    metric, relative to ``b``.
    """
    x = np.zeros_like(b)
    aux = None
    r = b.copy()
    s = metric_solve(r)
    rz = float(r @ s)
    if rz < 0.0:
        raise CgError(f"metric produced a negative dual norm: {rz:.3e}")
    rz0 = rz
    if rz0 == 0.0:
        return CgResult(x=x, du=None, iterations=0, residual=0.0)
    p = s.copy()
    for it in range(1, maxit + 1):
        w, waux = apply_normal(p)
        pw = float(p @ w)
        if pw <= 0.0:
            # curvature exhausted by roundoff; the iterate is as good as
            # this arithmetic allows
            logger.debug("cg curvature %.3e at iteration %d, stopping", pw, it)
            return CgResult(x=x, du=aux, iterations=it - 1,
                            residual=float(np.sqrt(rz / rz0)))
        gamma = rz / pw
        x += gamma * p
        if waux is not None:
            aux = gamma * waux if aux is None else aux + gamma * waux
        r -= gamma * w
        s = metric_solve(r)
        rz_new = float(r @ s)
        if rz_new <= tol * tol * rz0:
            return CgResult(x=x, du=aux, iterations=it,
                            residual=float(np.sqrt(max(rz_new, 0.0) / rz0)))
        p = s + (rz_new / rz) * p
        rz = rz_new
    raise CgError(
        f"no convergence in {maxit} iterations, "
        f"relative residual {np.sqrt(rz / rz0):.3e}"
    )


def apply_linearized(model, q, d):
    """Directional state derivative u'(q) d on interior dofs."""
    u = model.solve_state(q)
    factor = model.operator_factor(q)
    model.counters.fom_solves += 1
    return factor.solve(-model.apply_b(u, d))


def apply_linearized_adjoint(model, q, r):
    """Dual vector of the adjoint of u'(q) applied to an all-nodes field."""
    u = model.solve_state(q)
    factor = model.operator_factor(q)
    rhs = (model.mass @ np.asarray(r, dtype=np.float64))[model.grid.interior]
    model.counters.fom_solves += 1
    z = factor.solve(rhs)
    return -model.apply_bt(u, z)


def make_subproblem_solver(model, q_k, q_prior, cg_tol=1e-10, cg_maxit=2000):
    """Gauss-Newton subproblem at q_k, reusable across regularization weights.

    The state, adjoint, operator factorization, and the adjoint-gradient dual
    vector are computed once; each call solves for the step e minimizing

        0.5 ||F(q_k) + F'(q_k) e - y||^2 + 0.5 alpha ||q_k + e - q_prior||_Q^2

    and returns (e, linearized discrepancy norm, cg iterations). The
    linearized discrepancy comes from the accumulated state update inside CG,
    not from an extra solve.
    """
    grid = model.grid
    free = grid.interior
    u = model.solve_state(q_k)
    p_adj = model.solve_adjoint(q_k)
    bt = model.apply_bt(u, p_adj)
    factor = model.operator_factor(q_k)
    mq_offset = model.q_metric @ (q_k - q_prior)
    residual_full = model.observation_residual(u)

    def fom_solve(rhs):
        model.counters.fom_solves += 1
        return factor.solve(rhs)

    def solve(alpha):
        def apply_normal(pvec):
            du = fom_solve(-model.apply_b(u, pvec))
            m_free = (model.mass @ grid.extend(du))[free]
            z = fom_solve(m_free)
            out = -model.apply_bt(u, z) + alpha * (model.q_metric @ pvec)
            return out, du

        b = -bt - alpha * mq_offset
        result = cg_normal(apply_normal, model.q_riesz, b,
                           tol=cg_tol, maxit=cg_maxit)
        du = result.du if result.du is not None else np.zeros_like(u)
        lin_disc = model.l2_norm(residual_full + grid.extend(du))
        return result.x, lin_disc, result.iterations

    return solve


def backtrack_alpha(solve, jhat_k, alpha0, theta=0.4, big_theta=0.9,
                    factor=2.0, max_tries=60):
    """Adapt the regularization weight until the linearized discrepancy
    squared lands in [theta, big_theta] * jhat_k.

    Doubling and halving revisit the same weights exactly, so a seen-set
    detects cycles (bracket narrower than one factor step); the least
    violating candidate is returned in that case, as after max_tries.
    Returns (alpha, step, lin_disc, tries, cg_iters, in_bracket).
    """
    lo = theta * jhat_k
    hi = big_theta * jhat_k
    alpha = float(alpha0)
    seen = set()
    best = None
    cg_total = 0
    for tries in range(1, max_tries + 1):
        seen.add(alpha)
        step, lin_disc, cg_iters = solve(alpha)
        cg_total += cg_iters
        lin2 = lin_disc * lin_disc
        if lo <= lin2 <= hi:
            return alpha, step, lin_disc, tries, cg_total, True
        violation = (lo - lin2) if lin2 < lo else (lin2 - hi)
        if best is None or violation < best[0]:
            best = (violation, alpha, step, lin_disc)
        alpha_next = alpha * factor if lin2 < lo else alpha / factor
        if alpha_next in seen:
            logger.warning(
                "regularization bracket narrower than a factor-%g step at "
                "alpha=%.3e, keeping the least violating weight", factor, alpha
            )
            _, alpha, step, lin_disc = best
            return alpha, step, lin_disc, tries, cg_total, False
        alpha = alpha_next
    logger.warning(
        "no bracket match in %d tries, keeping the least violating weight",
        max_tries,
    )
    _, alpha, step, lin_disc = best
    return alpha, step, lin_disc, max_tries, cg_total, False


@dataclass
class IrgnmConfig:
    tau: float = 3.5
    theta: float = 0.4
    big_theta: float = 0.9
    alpha0: float = 1.0
    alpha_factor: float = 2.0
    cg_tol: float = 1e-10
    cg_maxit: int = 2000
    max_outer: int = 50
    max_alpha_tries: int = 60


@dataclass
class IrgnmResult:
    q: np.ndarray
    rows: list
    converged: bool
    discrepancy: float
    outer_iterations: int
    alpha: float
    events: dict = field(default_factory=dict)


def fom_irgnm(model, q0, config=None, q_prior=None, time_origin=None):
    """Run the regularized Gauss-Newton iteration on the full model.

    Stops once the discrepancy falls to tau * delta. The events dict counts
    states, adjoints, gradient dual vectors, and CG iterations separately so
    the aggregate solver counters can be cross-checked against them.
    """
    cfg = config if config is not None else IrgnmConfig()
    q = np.asarray(q0, dtype=np.float64).copy()
    prior = q.copy() if q_prior is None else np.asarray(q_prior, np.float64).copy()
    t0 = time.perf_counter() if time_origin is None else time_origin
    events = {"states": 0, "adjoints": 0, "rhs_bt": 0,
              "cg_iters": 0, "alpha_tries": 0}

    target = cfg.tau * model.delta
    disc = model.discrepancy_norm(q)
    events["states"] += 1
    rows = [_fom_row(model, 0, t0, disc)]
    alpha = cfg.alpha0
    converged = disc <= target

    k = 0
    while not converged and k < cfg.max_outer:
        k += 1
        solve = make_subproblem_solver(model, q, prior,
                                       cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit)
        events["adjoints"] += 1
        events["rhs_bt"] += 1
        jhat_k = 0.5 * disc * disc
        alpha, step, lin_disc, tries, cg_iters, _ = backtrack_alpha(
            solve, jhat_k, alpha,
            theta=cfg.theta, big_theta=cfg.big_theta,
            factor=cfg.alpha_factor, max_tries=cfg.max_alpha_tries,
        )
        events["cg_iters"] += cg_iters
        events["alpha_tries"] += tries
        q = q + step
        disc = model.discrepancy_norm(q)
        events["states"] += 1
        converged = disc <= target
        rows.append(_fom_row(model, k, t0, disc, alpha=alpha, accepted=True))
        logger.info(
            "outer %d: discrepancy %.6e alpha %.3e (%d weights, %d cg)",
            k, disc, alpha, tries, cg_iters,
        )

    return IrgnmResult(
        q=q, rows=rows, converged=converged, discrepancy=disc,
        outer_iterations=k, alpha=alpha, events=events,
    )


def _fom_row(model, k, t0, disc, alpha=None, accepted=None):
    c = model.counters
    return IterationRow(
        k=k,
        time_s=time.perf_counter() - t0,
        discrepancy=disc,
        alpha=alpha,
        fom_solves=c.fom_solves,
        bu_apps=c.bu_applications,
        riesz_solves=c.riesz_solves,
        accepted=accepted,
    )
