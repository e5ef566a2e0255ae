"""Forward models for reaction and diffusion coefficient identification.

Both problems live on the unit square with homogeneous Dirichlet data:

* reaction:   -Laplace(u) + q u = f, parameter metric L2
* diffusion:  -div(q grad u) = f, parameter metric H1

The model owns the assembled matrices, the observation data, per-instance
work counters, and small memo caches so that repeated state/adjoint
evaluations at the same parameter are counted once, reflecting what the
algorithms actually need.
"""

import enum
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import fem

logger = logging.getLogger(__name__)


class ProblemKind(enum.Enum):
    REACTION = "reaction"
    DIFFUSION = "diffusion"


class InadmissibleParameterError(ValueError):
    """Raised when a parameter renders the problem non-coercive."""


class _ArrayCache:
    """Tiny LRU memo keyed by raw array bytes."""

    def __init__(self, maxsize=8):
        self._data = OrderedDict()
        self.maxsize = maxsize

    def get(self, key):
        if key in self._data:
            self._data.move_to_end(key)
            return self._data[key]
        return None

    def put(self, key, value):
        self._data[key] = value
        self._data.move_to_end(key)
        while len(self._data) > self.maxsize:
            self._data.popitem(last=False)


class ForwardModel:
    """Discrete parameter-to-state map q -> u(q) plus adjoint machinery.

    Parameters
    ----------
    grid : StructuredGrid
    kind : ProblemKind
    y_delta : observed state, nodal values on all nodes
    delta : noise level used by the discrepancy principle
    f : source term as nodal values (default: constant one)
    q_floor : admissible lower bound, checked and logged but not enforced
    h1_metric : "full" for stiffness+mass, "neumann_shifted" for
        stiffness plus a tiny mass shift (diffusion only)
    """

    def __init__(
        self,
        grid,
        kind,
        y_delta,
        delta,
        f=None,
        q_floor=1e-3,
        h1_metric="full",
        solver_tol=1e-12,
        counters=None,
    ):
        self.grid = grid
        self.kind = ProblemKind(kind)
        self.delta = float(delta)
        self.q_floor = float(q_floor)
        self.solver_tol = float(solver_tol)
        self.counters = counters if counters is not None else fem.Counters()

        y_delta = np.asarray(y_delta, dtype=np.float64)
        if y_delta.shape != (grid.n_nodes,):
            raise ValueError(
                f"y_delta must have {grid.n_nodes} nodal values, got {y_delta.shape}"
            )
        self.y_delta = y_delta.copy()

        if f is None:
            f = np.ones(grid.n_nodes)
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (grid.n_nodes,):
            raise ValueError(f"f must have {grid.n_nodes} nodal values, got {f.shape}")
        self.f = f.copy()

        self.mass = fem.assemble_mass(grid)
        self.stiffness = fem.assemble_stiffness(grid)
        free = grid.interior
        self._free = free
        self.v_product = self.stiffness[free][:, free].tocsr()
        self.mass_ff = self.mass[free][:, free].tocsr()

        if self.kind is ProblemKind.REACTION:
            self.a1 = self.v_product
            self.q_metric = self.mass
        else:
            self.a1 = None
            if h1_metric == "full":
                self.q_metric = (self.stiffness + self.mass).tocsr()
            elif h1_metric == "neumann_shifted":
                self.q_metric = (self.stiffness + 1e-8 * self.mass).tocsr()
            else:
                raise ValueError(f"unknown h1_metric {h1_metric!r}")
        self.h1_metric = h1_metric

        self.load = (self.mass @ self.f)[free]
        self._my = self.mass @ self.y_delta
        self.my_free = self._my[free]
        self.y_mass_norm2 = float(self.y_delta @ self._my)

        self._v_factor = None
        self._q_factor = None
        self._op_cache = _ArrayCache(maxsize=4)
        self._state_cache = _ArrayCache(maxsize=8)
        self._adjoint_cache = _ArrayCache(maxsize=8)

    # -- products and norms -------------------------------------------------

    @property
    def v_factor(self):
        if self._v_factor is None:
            self._v_factor = fem.SpdFactor(self.v_product, tol=self.solver_tol)
        return self._v_factor

    @property
    def q_factor(self):
        if self._q_factor is None:
            self._q_factor = fem.SpdFactor(self.q_metric, tol=self.solver_tol)
        return self._q_factor

    def q_inner(self, a, b):
        return float(a @ (self.q_metric @ b))

    def q_norm(self, a):
        return float(np.sqrt(max(self.q_inner(a, a), 0.0)))

    def l2_inner(self, a, b):
        return float(a @ (self.mass @ b))

    def l2_norm(self, a):
        return float(np.sqrt(max(self.l2_inner(a, a), 0.0)))

    def v_norm(self, u_int):
        return float(np.sqrt(max(float(u_int @ (self.v_product @ u_int)), 0.0)))

    # -- operator assembly ---------------------------------------------------

    def check_admissible(self, q):
        qmin = float(np.min(q))
        if self.kind is ProblemKind.DIFFUSION and qmin <= 0.0:
            raise InadmissibleParameterError(
                f"diffusion coefficient must stay positive, min nodal value {qmin:.3e}"
            )
        if qmin < self.q_floor:
            logger.debug("parameter dips below the floor: min %.3e", qmin)

    def assemble_operator(self, q):
        """Interior-restricted system matrix A(q)."""
        q = np.asarray(q, dtype=np.float64)
        self.check_admissible(q)
        free = self._free
        if self.kind is ProblemKind.REACTION:
            weighted = fem.assemble_weighted(self.grid, q, "mass")
            return (self.a1 + weighted[free][:, free]).tocsr()
        weighted = fem.assemble_weighted(self.grid, q, "grad")
        return weighted[free][:, free].tocsr()

    def operator_factor(self, q):
        """Factorized A(q); cached so repeated solves share one factorization."""
        key = np.asarray(q, dtype=np.float64).tobytes()
        hit = self._op_cache.get(key)
        if hit is not None:
            return hit
        factor = fem.SpdFactor(self.assemble_operator(q), tol=self.solver_tol)
        self._op_cache.put(key, factor)
        return factor

    # -- state, adjoint, objective -------------------------------------------

    def solve_state(self, q):
        """State u(q) on interior dofs; memoized, counts one solve on a miss."""
        q = np.asarray(q, dtype=np.float64)
        key = q.tobytes()
        hit = self._state_cache.get(key)
        if hit is not None:
            return hit.copy()
        u = self.operator_factor(q).solve(self.load)
        self.counters.fom_solves += 1
        self._state_cache.put(key, u)
        return u.copy()

    def observation_residual(self, u_int):
        """C u - y_delta on all nodes (u zero-extended)."""
        return self.grid.extend(u_int) - self.y_delta

    def discrepancy_norm(self, q):
        """||F(q) - y_delta|| in L2."""
        res = self.observation_residual(self.solve_state(q))
        return self.l2_norm(res)

    def jhat(self, q):
        """Objective 0.5 ||F(q) - y_delta||^2."""
        return 0.5 * self.discrepancy_norm(q) ** 2

    def solve_adjoint(self, q):
        """Adjoint p(q) solving a(v, p; q) = -(C u - y_delta, C v)."""
        q = np.asarray(q, dtype=np.float64)
        key = q.tobytes()
        hit = self._adjoint_cache.get(key)
        if hit is not None:
            return hit.copy()
        u = self.solve_state(q)
        rhs = -(self.mass @ self.observation_residual(u))[self._free]
        p = self.operator_factor(q).solve(rhs)
        self.counters.fom_solves += 1
        self._adjoint_cache.put(key, p)
        return p.copy()

    # -- parameter-direction operator B_u ------------------------------------

    def apply_b(self, u_int, d):
        """<B_u d, v> for v in V: dual vector on interior dofs."""
        u_full = self.grid.extend(u_int)
        d = np.asarray(d, dtype=np.float64)
        self.counters.bu_applications += 1
        if self.kind is ProblemKind.REACTION:
            out = fem.triple_mass(self.grid, d, u_full)
        else:
            out = fem.weighted_grad_apply(self.grid, d, u_full)
        return out[self._free]

    def apply_bt(self, u_int, p_int):
        """<B_u' p, .> over the parameter space: dual vector on all nodes."""
        u_full = self.grid.extend(u_int)
        p_full = self.grid.extend(p_int)
        self.counters.bu_applications += 1
        if self.kind is ProblemKind.REACTION:
            return fem.triple_mass(self.grid, u_full, p_full)
        return fem.grad_dot_apply(self.grid, u_full, p_full)

    # -- gradient / enrichment direction --------------------------------------

    def q_riesz(self, dual):
        """Riesz representative w.r.t. the parameter metric; counted."""
        self.counters.q_solves += 1
        return self.q_factor.solve(dual)

    def gradient(self, q):
        """Riesz representative of the discrepancy gradient in the Q metric.

        For the reaction problem this is the plain L2 gradient; for
        diffusion it is the H1-smoothed direction used for snapshots.
        """
        u = self.solve_state(q)
        p = self.solve_adjoint(q)
        return self.q_riesz(self.apply_bt(u, p))

    smoothed_snapshot = gradient

    def coercivity_lower_bound(self, q):
        """Coercivity constant of a(.,.;q) w.r.t. the H1_0 norm."""
        if self.kind is ProblemKind.REACTION:
            return 1.0
        qmin = float(np.min(q))
        if qmin <= 0.0:
            raise InadmissibleParameterError(
                f"coercivity bound requires positive q, min nodal value {qmin:.3e}"
            )
        return qmin


@dataclass
class NoisyData:
    """Synthetic observation data produced on a twice-refined grid."""

    y_delta: np.ndarray
    u_exact: np.ndarray
    q_exact: np.ndarray
    delta: float
    seed: int


def _solve_dirichlet(grid, kind, q_nodal, f_nodal):
    mass = fem.assemble_mass(grid)
    free = grid.interior
    if kind is ProblemKind.REACTION:
        matrix = fem.assemble_stiffness(grid) + fem.assemble_weighted(
            grid, q_nodal, "mass"
        )
    else:
        matrix = fem.assemble_weighted(grid, q_nodal, "grad")
    a_ff = matrix[free][:, free].tocsr()
    load = (mass @ f_nodal)[free]
    return grid.extend(fem.SpdFactor(a_ff).solve(load))


def generate_noisy_data(kind, n, q_exact_fn, delta, seed, f_fn=None, fine_factor=2):
    """Build observations by solving on a refined grid and adding noise.

    The exact state is computed with ``fine_factor`` times as many cells per
    side, restricted to the computational grid, and perturbed by a uniform
    i.i.d. nodal noise field scaled to L2 norm ``delta`` exactly.
    """
    kind = ProblemKind(kind)
    coarse = fem.StructuredGrid(n)
    fine = fem.StructuredGrid(fine_factor * n)

    def evaluate(grid, fn):
        return np.asarray(fn(grid.coords[:, 0], grid.coords[:, 1]), dtype=np.float64)

    q_fine = evaluate(fine, q_exact_fn)
    f_fine = np.ones(fine.n_nodes) if f_fn is None else evaluate(fine, f_fn)
    u_fine = _solve_dirichlet(fine, kind, q_fine, f_fine)
    u_exact = fem.interpolate(u_fine, fine, coarse)

    y_delta = u_exact.copy()
    if delta > 0.0:
        rng = np.random.default_rng(seed)
        xi = rng.uniform(-1.0, 1.0, coarse.n_nodes)
        mass = fem.assemble_mass(coarse)
        xi_norm = float(np.sqrt(xi @ (mass @ xi)))
        y_delta = u_exact + (delta / xi_norm) * xi

    q_exact = evaluate(coarse, q_exact_fn)
    return NoisyData(
        y_delta=y_delta,
        u_exact=u_exact,
        q_exact=q_exact,
        delta=float(delta),
        seed=int(seed),
    )
