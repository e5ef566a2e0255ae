"""NumPy reference implementation of the element kernels.

The compiled backend in ``_kernels_cy`` implements the same three functions
with identical signatures; ``coefinv.kernels`` picks one at import time.
All kernels take per-cell corner values (shape ``(n_cells, 4)`` in local
node order SW, SE, NW, NE) plus one of the reference tensors from
``_tensors`` and leave global scaling to the caller.
"""

import numpy as np


def form_csr_data(cellvals, tensor, slots, nnz, scale):
    """Accumulate per-cell weighted-form entries into canonical CSR data.

    Entry (j, k) of cell e is ``scale * sum_l cellvals[e, l] * tensor[l, j, k]``
    and lands in CSR slot ``slots[16 e + 4 j + k]``.
    """
    entries = np.einsum("el,ljk->ejk", cellvals, tensor, optimize=True)
    return scale * np.bincount(slots, weights=entries.ravel(), minlength=nnz)


def triple_apply(a_cells, b_cells, tensor, cell_nodes, n_nodes, scale):
    """Nodal vector c with c_i = scale * sum_e sum_jk a_j b_k tensor[i, j, k]."""
    local = np.einsum("ej,ek,ijk->ei", a_cells, b_cells, tensor, optimize=True)
    return scale * np.bincount(
        cell_nodes.ravel(), weights=local.ravel(), minlength=n_nodes
    )


def local_form_vectors(cellvals, tensor):
    """Per-cell 4x4 form matrices contracted against the weight, no scatter.

    Returned array has shape (n_cells, 4, 4); used by tests and by callers
    that scatter into custom layouts.
    """
    return np.einsum("el,ljk->ejk", cellvals, tensor, optimize=True)
