"""Uniform bilinear finite elements on the unit square.

Provides the structured grid, exact assembly of (weighted) mass and
stiffness forms with a tensorized 2-point Gauss rule, trilinear form
applications, SPD solves with residual verification, Riesz representatives,
nodal interpolation between nested grids, and the field CSV format.

Parameter fields live on all ``(n+1)^2`` nodes (lexicographic, x fastest);
state fields live on the ``(n-1)^2`` interior nodes. Dirichlet conditions
are imposed by row/column elimination, i.e. by restricting assembled
matrices to the interior index set.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from ._tensors import T_MASS, T_STIFF

# output-index-first view of T_STIFF: T_STIFF_OUT[i, l, m] = int N_l grad N_m . grad N_i
T_STIFF_OUT = np.ascontiguousarray(np.transpose(T_STIFF, (2, 0, 1)))


class SolverError(RuntimeError):
    """A linear solve failed its residual verification."""


@dataclass
class Counters:
    """Work counters threaded through every full-order operation.

    ``fom_solves`` counts state-space (interior-dof) solves, ``riesz_solves``
    the state-space solves spent on error-estimator residual norms,
    ``bu_applications`` the full-order trilinear form applications, and
    ``q_solves`` the parameter-metric solves (mass or H1 matrix).
    """

    fom_solves: int = 0
    bu_applications: int = 0
    riesz_solves: int = 0
    q_solves: int = 0

    def as_dict(self):
        return {
            "fom_solves": self.fom_solves,
            "bu_applications": self.bu_applications,
            "riesz_solves": self.riesz_solves,
            "q_solves": self.q_solves,
        }

    def copy(self):
        return Counters(**self.as_dict())


@dataclass(frozen=True)
class CsrPattern:
    indptr: np.ndarray
    indices: np.ndarray
    slots: np.ndarray
    nnz: int


class StructuredGrid:
    """Uniform quadrilateral grid with n x n cells on (0,1)^2."""

    def __init__(self, n):
        n = int(n)
        if n < 2:
            raise ValueError(f"grid needs at least 2 cells per side, got {n}")
        self.n = n
        self.h = 1.0 / n
        self.nodes_per_side = n + 1
        self.n_nodes = (n + 1) ** 2
        self.n_cells = n * n
        self.n_interior = (n - 1) ** 2

    def __repr__(self):
        return f"StructuredGrid(n={self.n})"

    @cached_property
    def coords(self):
        """Node coordinates, shape (n_nodes, 2), x varying fastest."""
        side = np.linspace(0.0, 1.0, self.nodes_per_side)
        x, y = np.meshgrid(side, side, indexing="xy")
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def boundary_mask(self):
        nps = self.nodes_per_side
        idx = np.arange(self.n_nodes)
        ix = idx % nps
        iy = idx // nps
        return (ix == 0) | (ix == self.n) | (iy == 0) | (iy == self.n)

    @cached_property
    def interior(self):
        """Indices of interior nodes (the state dofs), lexicographic."""
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def cell_nodes(self):
        """Global node ids per cell, shape (n_cells, 4), order SW SE NW NE."""
        nps = self.nodes_per_side
        ix, iy = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="xy")
        base = (iy * nps + ix).ravel()
        return np.column_stack([base, base + 1, base + nps, base + nps + 1]).astype(
            np.int64
        )

    @cached_property
    def csr_pattern(self):
        """Canonical CSR sparsity shared by every assembled form on this grid.

        ``slots`` maps the 16 local entries of each cell (row-major in the
        4 x 4 local matrix) to positions in the CSR data array.
        """
        cn = self.cell_nodes
        rows = np.repeat(cn, 4, axis=1).ravel()
        cols = np.tile(cn, (1, 4)).ravel()
        keys = rows * np.int64(self.n_nodes) + cols
        unique_keys, slots = np.unique(keys, return_inverse=True)
        indices = (unique_keys % self.n_nodes).astype(np.int32)
        urows = unique_keys // self.n_nodes
        indptr = np.searchsorted(urows, np.arange(self.n_nodes + 1)).astype(np.int32)
        return CsrPattern(
            indptr=indptr,
            indices=indices,
            slots=np.ascontiguousarray(slots.astype(np.int64)),
            nnz=int(unique_keys.size),
        )

    def cell_values(self, nodal):
        """Gather nodal values to per-cell corner arrays, shape (n_cells, 4)."""
        nodal = np.asarray(nodal, dtype=np.float64)
        if nodal.shape != (self.n_nodes,):
            raise ValueError(
                f"expected nodal field of length {self.n_nodes}, got {nodal.shape}"
            )
        return np.ascontiguousarray(nodal[self.cell_nodes])

    def extend(self, interior_values):
        """Zero-extend interior dof values to all nodes."""
        interior_values = np.asarray(interior_values, dtype=np.float64)
        if interior_values.shape != (self.n_interior,):
            raise ValueError(
                f"expected interior field of length {self.n_interior}, "
                f"got {interior_values.shape}"
            )
        out = np.zeros(self.n_nodes)
        out[self.interior] = interior_values
        return out

    def restrict(self, nodal):
        """Restrict an all-nodes vector to the interior dofs."""
        nodal = np.asarray(nodal, dtype=np.float64)
        if nodal.shape != (self.n_nodes,):
            raise ValueError(
                f"expected nodal field of length {self.n_nodes}, got {nodal.shape}"
            )
        return nodal[self.interior]


def _assemble(grid, cellvals, tensor, scale):
    pat = grid.csr_pattern
    data = kernels.form_csr_data(
        np.ascontiguousarray(cellvals), tensor, pat.slots, pat.nnz, scale
    )
    return sp.csr_matrix(
        (data, pat.indices.copy(), pat.indptr.copy()),
        shape=(grid.n_nodes, grid.n_nodes),
    )


def assemble_mass(grid):
    """L2 mass matrix on all nodes."""
    ones = np.ones((grid.n_cells, 4))
    return _assemble(grid, ones, T_MASS, grid.h**2)


def assemble_stiffness(grid):
    """Dirichlet-free stiffness matrix (grad-grad form) on all nodes."""
    ones = np.ones((grid.n_cells, 4))
    return _assemble(grid, ones, T_STIFF, 1.0)


def assemble_weighted(grid, weight, form):
    """Weighted form matrix with a bilinear nodal weight.

    ``form = "mass"`` gives int w u v, ``form = "grad"`` gives
    int w grad u . grad v. The 2x2 Gauss rule is exact for both.
    """
    cellvals = grid.cell_values(weight)
    if form == "mass":
        return _assemble(grid, cellvals, T_MASS, grid.h**2)
    if form == "grad":
        return _assemble(grid, cellvals, T_STIFF, 1.0)
    raise ValueError(f"unknown form {form!r}")


def triple_mass(grid, a, b):
    """Dual vector c_i = int a b phi_i for nodal fields a, b."""
    return kernels.triple_apply(
        grid.cell_values(a),
        grid.cell_values(b),
        T_MASS,
        grid.cell_nodes,
        grid.n_nodes,
        grid.h**2,
    )


def weighted_grad_apply(grid, q, u):
    """Dual vector c_i = int q grad u . grad phi_i."""
    return kernels.triple_apply(
        grid.cell_values(q),
        grid.cell_values(u),
        T_STIFF_OUT,
        grid.cell_nodes,
        grid.n_nodes,
        1.0,
    )


def grad_dot_apply(grid, u, p):
    """Dual vector c_j = int phi_j grad u . grad p."""
    return kernels.triple_apply(
        grid.cell_values(u),
        grid.cell_values(p),
        T_STIFF,
        grid.cell_nodes,
        grid.n_nodes,
        1.0,
    )


class SpdFactor:
    """Direct factorization of a sparse SPD matrix with verified solves."""

    def __init__(self, matrix, tol=1e-12):
        self.matrix = matrix.tocsr()
        self.tol = tol
        try:
            self._lu = spla.splu(
                sp.csc_matrix(matrix),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        self.n = matrix.shape[0]
        self._norm = spla.norm(self.matrix, np.inf)

    def solve(self, rhs):
        """Solve to normwise backward error ``tol``; raises SolverError otherwise.

        The residual is measured against ||A|| ||x|| + ||b|| so that solves
        with tiny right-hand sides are not rejected for hitting the roundoff
        floor of an ill-conditioned system.
        """
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape != (self.n,):
            raise ValueError(f"rhs has shape {rhs.shape}, expected ({self.n},)")
        x = self._lu.solve(rhs)
        res = rhs - self.matrix @ x

        def backward_error(x_, res_):
            scale = self._norm * np.linalg.norm(x_) + np.linalg.norm(rhs)
            return np.linalg.norm(res_) / scale if scale > 0.0 else 0.0

        err = backward_error(x, res)
        if err > self.tol:
            # one step of iterative refinement before giving up
            x = x + self._lu.solve(res)
            res = rhs - self.matrix @ x
            err = backward_error(x, res)
            if err > self.tol:
                raise SolverError(
                    f"linear solve backward error {err:.3e} exceeds {self.tol:.1e}"
                )
        return x


def solve_spd(matrix, rhs, tol=1e-12):
    """One-shot SPD solve; prefer SpdFactor when the matrix is reused."""
    return SpdFactor(matrix, tol=tol).solve(rhs)


def riesz_representative(factor, dual):
    """Riesz representative of a dual vector w.r.t. the factored inner product."""
    return factor.solve(dual)


def dual_norm(factor, dual):
    """Dual norm sqrt(<dual, P^{-1} dual>); clamps tiny negative roundoff."""
    rep = factor.solve(dual)
    return float(np.sqrt(max(float(dual @ rep), 0.0)))


def orthonormal_insert(basis, vector, inner, discard_tol=1e-10):
    """Append the normalized component of ``vector`` orthogonal to ``basis``.

    Classical Gram-Schmidt, applied twice for numerical orthogonality.
    Returns the appended unit vector, or None when the remaining component
    falls below ``discard_tol`` relative to the input norm (then the basis
    is left unchanged).
    """
    w = np.array(vector, dtype=np.float64)
    norm0 = np.sqrt(max(inner(w, w), 0.0))
    if norm0 == 0.0:
        return None
    for _ in range(2):
        for b in basis:
            w = w - inner(b, w) * b
    norm = np.sqrt(max(inner(w, w), 0.0))
    if norm <= discard_tol * norm0:
        return None
    psi = w / norm
    basis.append(psi)
    return psi


def interpolate(values_fine, grid_fine, grid_coarse):
    """Nodal restriction from a nested fine grid to a coarse grid.

    Exact for fields that are bilinear per coarse cell. The fine cell count
    must be an integer multiple of the coarse one.
    """
    if grid_fine.n % grid_coarse.n != 0:
        raise ValueError(
            f"fine grid n={grid_fine.n} is not a multiple of coarse n={grid_coarse.n}"
        )
    values_fine = np.asarray(values_fine, dtype=np.float64)
    if values_fine.shape != (grid_fine.n_nodes,):
        raise ValueError(
            f"expected fine field of length {grid_fine.n_nodes}, "
            f"got {values_fine.shape}"
        )
    ratio = grid_fine.n // grid_coarse.n
    nps = grid_fine.nodes_per_side
    return values_fine.reshape(nps, nps)[::ratio, ::ratio].ravel().copy()


def write_field_csv(path, grid, values):
    """Write a nodal field as ``x,y,value`` rows in node order."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.n_nodes,):
        raise ValueError(
            f"expected nodal field of length {grid.n_nodes}, got {values.shape}"
        )
    coords = grid.coords
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for (x, y), v in zip(coords, values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")


def read_field_csv(path):
    """Read a field CSV back into (grid, values); validates the node layout."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != 3:
        raise ValueError(f"field CSV must have 3 columns, got {raw.shape[1]}")
    nps = int(round(np.sqrt(raw.shape[0])))
    if nps * nps != raw.shape[0] or nps < 3:
        raise ValueError(f"row count {raw.shape[0]} is not a valid node grid")
    grid = StructuredGrid(nps - 1)
    if not np.allclose(raw[:, :2], grid.coords, atol=1e-12):
        raise ValueError("node coordinates do not match the expected ordering")
    return grid, raw[:, 2].copy()
