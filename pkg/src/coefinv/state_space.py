"""Galerkin state reduction with a certified discrepancy estimator.

A second orthonormal basis, this one for the state space in the H1_0 inner
product, turns every state and adjoint solve into dense algebra of a few
coefficients. The price is a model error, which is controlled by a rigorous
bound built from the primal and dual equation residuals: the bound needs two
dual norms per evaluation, and those can either be computed directly (two
stiffness solves each time) or assembled once per basis extension into a
Gram matrix of Riesz representatives and evaluated for free afterwards.
Which of the two pays off depends on how often the bound is queried between
extensions, so a third mode tracks both costs and switches permanently to
the direct route once assembly outpaces use.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fem
from .model import ProblemKind

logger = logging.getLogger(__name__)


@dataclass
class RomEvaluation:
    """Reduced state and adjoint at one parameter coefficient vector."""

    theta: np.ndarray
    c_u: np.ndarray
    c_p: np.ndarray
    jhat: float
    discrepancy: float


class ReducedStateModel:
    """Dense projection of the forward model onto a growing state basis.

    The state basis is orthonormal w.r.t. the H1_0 product. All parameter
    dependence enters through the operator components of the parameter
    space, so the blocks (component @ basis) are kept as dense arrays and
    every reduced quantity is recomputed from them on extension.
    """

    def __init__(self, model, space, discard_tol=1e-10):
        self.model = model
        self.space = space
        self.discard_tol = float(discard_tol)
        self.basis = []
        self.enriched_at = []
        n_free = model.load.shape[0]
        self.psi = np.zeros((n_free, 0))
        self.m_psi = np.zeros((n_free, 0))
        self.a1_psi = np.zeros((n_free, 0)) if model.a1 is not None else None
        self.a2_psi = [np.zeros((n_free, 0)) for _ in space.a2]
        self.y2 = model.y_mass_norm2
        self._rebuild_projections()

    @property
    def n_v(self):
        return len(self.basis)

    def _v_inner(self, a, b):
        return float(a @ (self.model.v_product @ b))

    def enrich_state(self, u_int, tag=None):
        """Add the orthogonal component of a state vector; True when added."""
        psi = fem.orthonormal_insert(
            self.basis, u_int, self._v_inner, self.discard_tol
        )
        if psi is None:
            logger.debug("state snapshot already in span, discarded")
            return False
        self.enriched_at.append(tag)
        col = psi[:, None]
        self.psi = np.hstack([self.psi, col])
        self.m_psi = np.hstack([self.m_psi, self.model.mass_ff @ col])
        if self.a1_psi is not None:
            self.a1_psi = np.hstack([self.a1_psi, self.model.a1 @ col])
        for i, a2 in enumerate(self.space.a2):
            self.a2_psi[i] = np.hstack([self.a2_psi[i], a2 @ col])
        self._rebuild_projections()
        return True

    def sync_parameter_space(self):
        """Pick up operator components added to the parameter space."""
        added = 0
        for i in range(len(self.a2_psi), len(self.space.a2)):
            self.a2_psi.append(self.space.a2[i] @ self.psi)
            added += 1
        if added:
            self._rebuild_projections()
        return added

    def _rebuild_projections(self):
        self.ahat1 = None if self.a1_psi is None else self.psi.T @ self.a1_psi
        self.ahat2 = [self.psi.T @ block for block in self.a2_psi]
        self.ghat = self.psi.T @ self.m_psi
        self.load_hat = self.psi.T @ self.model.load
        self.m_hat = self.psi.T @ self.model.my_free

    def operator_reduced(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        acc = np.zeros((self.n_v, self.n_v))
        if self.ahat1 is not None:
            acc = acc + self.ahat1
        for ti, a2h in zip(theta, self.ahat2):
            acc = acc + ti * a2h
        return acc

    def lift_state(self, c_u):
        return self.psi @ c_u

    def discrepancy_of(self, c_u):
        value = float(c_u @ (self.ghat @ c_u) - 2.0 * (self.m_hat @ c_u) + self.y2)
        return float(np.sqrt(max(value, 0.0)))

    def evaluate(self, theta):
        """Reduced state and adjoint; raises for inadmissible parameters."""
        theta = np.asarray(theta, dtype=np.float64)
        self.model.check_admissible(self.space.lift(theta))
        lu = sla.lu_factor(self.operator_reduced(theta))
        c_u = sla.lu_solve(lu, self.load_hat)
        c_p = sla.lu_solve(lu, self.m_hat - self.ghat @ c_u)
        disc = self.discrepancy_of(c_u)
        return RomEvaluation(
            theta=theta, c_u=c_u, c_p=c_p, jhat=0.5 * disc * disc, discrepancy=disc
        )

    def gradient_reduced(self, ev):
        """Gradient of the reduced objective in the parameter coefficients."""
        return np.array([ev.c_u @ (a2h @ ev.c_p) for a2h in self.ahat2])


def rom_subproblem(reduced, ev, theta_prior, cg_tol=1e-10, cg_maxit=2000):
    """Gauss-Newton subproblem on the reduced model, all dense and uncounted.

    Same structure as the full-order subproblem: CG on the normal equations
    with identity parameter metric, two reduced solves per iteration, and
    the linearized discrepancy accumulated along the way.
    """
    from .irgnm import cg_normal

    lu = sla.lu_factor(reduced.operator_reduced(ev.theta))
    w = np.column_stack([a2h @ ev.c_u for a2h in reduced.ahat2])
    g = w.T @ ev.c_p
    offset = ev.theta - theta_prior
    ghat = reduced.ghat
    m_hat = reduced.m_hat
    y2 = reduced.y2

    def solve(alpha):
        def apply_normal(e):
            du = sla.lu_solve(lu, -(w @ e))
            z = sla.lu_solve(lu, ghat @ du)
            return -(w.T @ z) + alpha * e, du

        b = -g - alpha * offset
        result = cg_normal(apply_normal, np.copy, b, tol=cg_tol, maxit=cg_maxit)
        c_lin = ev.c_u if result.du is None else ev.c_u + result.du
        lin2 = float(c_lin @ (ghat @ c_lin) - 2.0 * (m_hat @ c_lin) + y2)
        return result.x, float(np.sqrt(max(lin2, 0.0))), result.iterations

    return solve


class DiscrepancyEstimator:
    """Bound on the objective error of the reduced model.

    With e the state error and rho_pr, rho_du the primal and dual equation
    residuals of the reduced solution, Galerkin orthogonality leaves

        |jhat - jhat_r| <= ||rho_du||_* Delta_pr + 0.5 Delta_pr^2,
        Delta_pr = ||rho_pr||_* / coercivity(q),

    with dual norms w.r.t. the H1_0 product. modes: "offline" always extends
    the Riesz Gram family on basis growth, "online" always solves for the
    two dual norms directly, "mixed" starts offline and switches permanently
    once an extension would cost more solves than the direct evaluations of
    the preceding iteration.
    """

    def __init__(self, reduced, mode="mixed"):
        if mode not in ("offline", "online", "mixed"):
            raise ValueError(f"unknown estimator mode {mode!r}")
        self.reduced = reduced
        self.model = reduced.model
        self.mode = mode
        self.offline_enabled = mode in ("offline", "mixed")
        self.stale = False
        self._duals = []
        self._riesz = []
        self._index = {}
        self._gram = np.zeros((0, 0))
        self._n_q_done = 0
        self._n_v_done = 0
        self.evals_this_outer = 0
        if self.offline_enabled:
            self.extend()
        self._n_q_prev = len(reduced.a2_psi)
        self._n_v_prev = reduced.n_v

    # -- offline family ------------------------------------------------------

    def _riesz_solve(self, dual):
        self.model.counters.riesz_solves += 1
        return self.model.v_factor.solve(dual)

    def _add_member(self, key, dual, riesz=None):
        if riesz is None:
            riesz = self._riesz_solve(dual)
        t = len(self._duals)
        grown = np.zeros((t + 1, t + 1))
        grown[:t, :t] = self._gram
        for r, dual_r in enumerate(self._duals):
            grown[r, t] = grown[t, r] = float(dual_r @ riesz)
        grown[t, t] = float(dual @ riesz)
        self._gram = grown
        self._duals.append(np.asarray(dual, dtype=np.float64))
        self._riesz.append(riesz)
        self._index[key] = t

    def extend(self):
        """Bring the Riesz family up to the current basis sizes."""
        if not self.offline_enabled:
            self.stale = True
            return
        red = self.reduced
        if "load" not in self._index:
            self._add_member("load", self.model.load)
            self._add_member("ydata", self.model.my_free)
        for j in range(self._n_v_done, red.n_v):
            self._add_member(("m", j), red.m_psi[:, j])
            if red.a1_psi is not None:
                # the first operator part is the H1_0 product itself, so its
                # Riesz representative is the basis vector, no solve needed
                self._add_member(("a1", j), red.a1_psi[:, j], riesz=red.basis[j])
        for i in range(len(red.a2_psi)):
            j_start = self._n_v_done if i < self._n_q_done else 0
            for j in range(j_start, red.n_v):
                self._add_member(("a2", i, j), red.a2_psi[i][:, j])
        self._n_q_done = len(red.a2_psi)
        self._n_v_done = red.n_v
        self.stale = False

    def _offline_usable(self):
        return (
            self.offline_enabled
            and not self.stale
            and self._n_q_done == len(self.reduced.a2_psi)
            and self._n_v_done == self.reduced.n_v
        )

    # -- residual norms -------------------------------------------------------

    def residual_norms(self, ev, route=None):
        """Dual norms (primal, dual) of the equation residuals at ev."""
        if route is None:
            route = "offline" if self._offline_usable() else "online"
        if route == "offline":
            if not self._offline_usable():
                raise RuntimeError("offline data out of date for this basis")
            return self._norms_offline(ev)
        return self._norms_online(ev)

    def _coefficients(self, ev):
        size = len(self._duals)
        pr = np.zeros(size)
        du = np.zeros(size)
        pr[self._index["load"]] = 1.0
        du[self._index["ydata"]] = 1.0
        red = self.reduced
        for j in range(red.n_v):
            du[self._index[("m", j)]] = -ev.c_u[j]
            if red.a1_psi is not None:
                idx = self._index[("a1", j)]
                pr[idx] = -ev.c_u[j]
                du[idx] = -ev.c_p[j]
        for i, ti in enumerate(ev.theta):
            for j in range(red.n_v):
                idx = self._index[("a2", i, j)]
                pr[idx] -= ti * ev.c_u[j]
                du[idx] -= ti * ev.c_p[j]
        return pr, du

    def _norms_offline(self, ev):
        pr, du = self._coefficients(ev)
        norm_pr = float(np.sqrt(max(pr @ (self._gram @ pr), 0.0)))
        norm_du = float(np.sqrt(max(du @ (self._gram @ du), 0.0)))
        return norm_pr, norm_du

    def _residual_vectors(self, ev):
        red = self.reduced
        au = np.zeros_like(self.model.load)
        ap = np.zeros_like(au)
        if red.a1_psi is not None:
            au = au + red.a1_psi @ ev.c_u
            ap = ap + red.a1_psi @ ev.c_p
        for ti, block in zip(ev.theta, red.a2_psi):
            au = au + ti * (block @ ev.c_u)
            ap = ap + ti * (block @ ev.c_p)
        rho_pr = self.model.load - au
        rho_du = self.model.my_free - red.m_psi @ ev.c_u - ap
        return rho_pr, rho_du

    def _norms_online(self, ev):
        rho_pr, rho_du = self._residual_vectors(ev)
        self.model.counters.riesz_solves += 2
        factor = self.model.v_factor
        return fem.dual_norm(factor, rho_pr), fem.dual_norm(factor, rho_du)

    # -- the bound -------------------------------------------------------------

    def error_bound(self, ev, route=None):
        """Upper bound on |jhat(lift(theta)) - jhat_r(theta)|."""
        self.evals_this_outer += 1
        norm_pr, norm_du = self.residual_norms(ev, route=route)
        a_low = self.model.coercivity_lower_bound(self.reduced.space.lift(ev.theta))
        delta_pr = norm_pr / a_low
        return 0.5 * delta_pr * delta_pr + norm_du * delta_pr

    def relative_indicator(self, ev, route=None):
        """error_bound relative to the reduced objective; inf at zero."""
        bound = self.error_bound(ev, route=route)
        if ev.jhat == 0.0:
            return np.inf
        return bound / ev.jhat

    # -- assembly policy --------------------------------------------------------

    def should_assemble(self, outer_k, k_ass, k_online):
        """Extend the Gram family at this boundary, or go (and stay) direct?"""
        if self.mode == "offline":
            return True
        if self.mode == "online" or not self.offline_enabled:
            return False
        if outer_k <= 2:
            return True
        return k_ass <= k_online

    def conclude_outer(self, outer_k):
        """End-of-iteration bookkeeping after the bases were extended.

        Computes the assembly cost of the pending extension by the telescoped
        pair count, compares it with the hypothetical direct cost of the
        evaluations since the last boundary, applies the switching policy,
        and either extends the family or marks it stale.
        Returns (k_ass, k_online) for reporting.
        """
        n_q_new = len(self.reduced.a2_psi)
        n_v_new = self.reduced.n_v
        k_ass = n_v_new * (n_q_new - self._n_q_prev) + self._n_q_prev * (
            n_v_new - self._n_v_prev
        )
        self._n_q_prev = n_q_new
        self._n_v_prev = n_v_new
        k_online = 2 * self.evals_this_outer
        self.evals_this_outer = 0
        if self.should_assemble(outer_k, k_ass, k_online):
            self.extend()
        else:
            if self.offline_enabled and self.mode == "mixed":
                logger.info(
                    "iteration %d: extension costs %d solves, direct use cost "
                    "%d, switching to direct evaluation for good",
                    outer_k, k_ass, k_online,
                )
            self.offline_enabled = False
            if n_q_new != self._n_q_done or n_v_new != self._n_v_done:
                self.stale = True
        return k_ass, k_online
