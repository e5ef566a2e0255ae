"""Adaptive low-dimensional parameter spaces and the Gauss-Newton
iteration restricted to them.

The parameter iterates of the full iteration stay in the span of the prior,
the initial guess, and the gradients encountered along the way. Restricting
the search to that growing span keeps every state solve full-dimensional but
shrinks the normal equations to a handful of coefficients; the basis is
orthonormal in the parameter metric, so the reduced metric is the identity
and the regularization term needs no matrix at all.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .irgnm import backtrack_alpha, cg_normal
from .model import ProblemKind
from .report import IterationRow

logger = logging.getLogger(__name__)


class ReducedParameterSpace:
    """Orthonormal basis of parameter fields plus their operator components.

    For each basis vector psi the interior-restricted weighted form matrix
    (mass for reaction, stiffness for diffusion) is kept, so the system
    operator for any reduced coefficient vector is an affine combination and
    directional derivatives of the state equation reduce to matrix-vector
    products with precomputed components.
    """

    def __init__(self, model, vectors=(), discard_tol=1e-10):
        self.model = model
        self.discard_tol = float(discard_tol)
        self.basis = []
        self.a2 = []
        self.enriched_at = []
        for v in vectors:
            self.enrich(v)

    @property
    def n_q(self):
        return len(self.basis)

    def enrich(self, vector, tag=None):
        """Add the new orthogonal component of a field; True when added."""
        psi = fem.orthonormal_insert(
            self.basis, vector, self.model.q_inner, self.discard_tol
        )
        if psi is None:
            logger.debug("enrichment vector already in span, discarded")
            return False
        self.a2.append(self._component_matrix(psi))
        self.enriched_at.append(tag)
        return True

    def _component_matrix(self, psi):
        grid = self.model.grid
        form = "mass" if self.model.kind is ProblemKind.REACTION else "grad"
        free = grid.interior
        return fem.assemble_weighted(grid, psi, form)[free][:, free].tocsr()

    def matrix(self):
        return np.column_stack(self.basis)

    def lift(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (self.n_q,):
            raise ValueError(f"expected {self.n_q} coefficients, got {coeffs.shape}")
        return self.matrix() @ coeffs

    def project(self, q_full):
        """Coefficients of the metric-orthogonal projection onto the span."""
        return np.array([self.model.q_inner(b, q_full) for b in self.basis])

    def operator_matrix(self, coeffs):
        """System matrix A(q) for q = lift(coeffs), assembled affinely."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        acc = None
        for ci, a2 in zip(coeffs, self.a2):
            acc = ci * a2 if acc is None else acc + ci * a2
        if self.model.a1 is not None:
            acc = self.model.a1 if acc is None else acc + self.model.a1
        return acc.tocsr()


def export_basis(space, outdir):
    """Write one grid CSV per basis vector plus a manifest of arrival times."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (psi, tag) in enumerate(zip(space.basis, space.enriched_at)):
        name = f"basis_{i:03d}.csv"
        fem.write_field_csv(outdir / name, space.model.grid, psi)
        entries.append({"file": name, "enriched_at": tag})
    manifest = outdir / "manifest.json"
    with open(manifest, "w") as fh:
        json.dump({"n_q": space.n_q, "vectors": entries}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _copy_metric(r):
    return np.copy(r)


def reduced_subproblem(model, space, u, p_adj, c_k, c_prior, q_current,
                       cg_tol=1e-10, cg_maxit=2000):
    """Gauss-Newton subproblem restricted to the reduced parameter span.

    State and adjoint at the current iterate are passed in; each CG
    iteration costs two full-dimensional solves and only dense dot products
    against the precomputed operator components.
    """
    w = np.column_stack([a2 @ u for a2 in space.a2])
    g = w.T @ p_adj
    factor = model.operator_factor(q_current)
    residual_full = model.observation_residual(u)
    offset = c_k - c_prior
    mass_ff = model.mass_ff
    grid = model.grid

    def fom_solve(rhs):
        model.counters.fom_solves += 1
        return factor.solve(rhs)

    def solve(alpha):
        def apply_normal(e):
            du = fom_solve(-(w @ e))
            z = fom_solve(mass_ff @ du)
            return -(w.T @ z) + alpha * e, du

        b = -g - alpha * offset
        result = cg_normal(apply_normal, _copy_metric, b, tol=cg_tol, maxit=cg_maxit)
        du = result.du if result.du is not None else np.zeros_like(u)
        lin_disc = model.l2_norm(residual_full + grid.extend(du))
        return result.x, lin_disc, result.iterations

    return solve


@dataclass
class QrConfig:
    tau: float = 3.5
    tau_inner: float = 1.0
    delta_inner: float = None  # defaults to the model noise level
    l_inner_max: int = 2
    theta: float = 0.4
    big_theta: float = 0.9
    alpha0: float = 1.0
    alpha_factor: float = 2.0
    cg_tol: float = 1e-10
    cg_maxit: int = 2000
    max_outer: int = 60
    max_alpha_tries: int = 60
    discard_tol: float = 1e-10


@dataclass
class QrResult:
    q: np.ndarray
    coeffs: np.ndarray
    space: ReducedParameterSpace
    rows: list
    converged: bool
    discrepancy: float
    outer_iterations: int
    alpha: float
    events: dict = field(default_factory=dict)


def qr_irgnm(model, q0, config=None, q_prior=None, time_origin=None):
    """Gauss-Newton iteration on an adaptively enriched parameter span.

    Each outer iteration runs at most l_inner_max restricted Gauss-Newton
    steps, then appends the gradient at the new iterate to the span. The
    regularization weight warm-starts from the first accepted weight of the
    previous outer iteration. Per outer iteration the full-dimensional work
    is one state and one adjoint solve per inner step plus two solves per CG
    iteration; the single dual vector for the enrichment direction is the
    only operator application against the full parameter space.
    """
    cfg = config if config is not None else QrConfig()
    t0 = time.perf_counter() if time_origin is None else time_origin
    q = np.asarray(q0, dtype=np.float64).copy()
    prior = q.copy() if q_prior is None else np.asarray(q_prior, np.float64).copy()
    delta_inner = model.delta if cfg.delta_inner is None else cfg.delta_inner
    target = cfg.tau * model.delta
    inner_target = cfg.tau_inner * delta_inner
    events = {"states": 0, "adjoints": 0, "cg_iters": 0,
              "snapshots": 0, "alpha_tries": 0, "enrichments": 0}

    u = model.solve_state(q)
    events["states"] += 1
    disc = model.l2_norm(model.observation_residual(u))
    converged = disc <= target

    space = ReducedParameterSpace(model, discard_tol=cfg.discard_tol)
    space.enrich(prior, tag=0)
    space.enrich(q, tag=0)
    p = None
    if not converged:
        p = model.solve_adjoint(q)
        events["adjoints"] += 1
        snap = model.q_riesz(model.apply_bt(u, p))
        events["snapshots"] += 1
        space.enrich(snap, tag=0)
    events["enrichments"] = space.n_q
    c = space.project(q)
    c_prior = space.project(prior)

    rows = [_qr_row(model, 0, t0, disc, space.n_q)]
    alpha = cfg.alpha0
    k = 0
    while not converged and k < cfg.max_outer:
        k += 1
        cycle_first_alpha = None
        for _ in range(cfg.l_inner_max):
            sub = reduced_subproblem(
                model, space, u, p, c, c_prior, q,
                cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit,
            )
            alpha, e, _, tries, cg_iters, _ = backtrack_alpha(
                sub, 0.5 * disc * disc, alpha,
                theta=cfg.theta, big_theta=cfg.big_theta,
                factor=cfg.alpha_factor, max_tries=cfg.max_alpha_tries,
            )
            events["cg_iters"] += cg_iters
            events["alpha_tries"] += tries
            if cycle_first_alpha is None:
                cycle_first_alpha = alpha
            dq = space.lift(e)
            if not np.any(dq):
                logger.debug("stationary restricted step, ending the cycle")
                break
            c = c + e
            q = q + dq
            u = model.solve_state(q)
            events["states"] += 1
            disc = model.l2_norm(model.observation_residual(u))
            if disc <= target:
                converged = True
                break
            p = model.solve_adjoint(q)
            events["adjoints"] += 1
            if disc <= inner_target:
                break
        if not converged:
            snap = model.q_riesz(model.apply_bt(u, p))
            events["snapshots"] += 1
            if space.enrich(snap, tag=k):
                events["enrichments"] += 1
                c = np.append(c, 0.0)
                c_prior = np.append(c_prior, 0.0)
        rows.append(_qr_row(model, k, t0, disc, space.n_q,
                            alpha=alpha, accepted=True))
        alpha = cycle_first_alpha
        logger.info("outer %d: discrepancy %.6e with %d basis vectors",
                    k, disc, space.n_q)

    return QrResult(
        q=q, coeffs=c, space=space, rows=rows, converged=converged,
        discrepancy=disc, outer_iterations=k, alpha=alpha, events=events,
    )


def _qr_row(model, k, t0, disc, n_q, alpha=None, accepted=None):
    counters = model.counters
    return IterationRow(
        k=k,
        time_s=time.perf_counter() - t0,
        discrepancy=disc,
        alpha=alpha,
        n_q=n_q,
        fom_solves=counters.fom_solves,
        bu_apps=counters.bu_applications,
        riesz_solves=counters.riesz_solves,
        accepted=accepted,
    )
