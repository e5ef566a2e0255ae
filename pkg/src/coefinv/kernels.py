"""Backend selection for the element kernels.

The compiled extension is preferred when importable; the NumPy fallback is
always available. ``set_backend`` exists for tests and benchmarks that need
to pin one implementation.
"""

from . import _kernels_np

try:
    from . import _kernels_cy

    _DEFAULT = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    _kernels_cy = None
    _DEFAULT = "numpy"

_BACKENDS = {"numpy": _kernels_np}
if _kernels_cy is not None:
    _BACKENDS["compiled"] = _kernels_cy

_active_name = _DEFAULT
_active = _BACKENDS[_active_name]


def available_backends():
    return tuple(sorted(_BACKENDS))


def backend_name():
    return _active_name


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        ) from None


def set_backend(name):
    """Switch the process-wide kernel backend; returns the previous name."""
    global _active, _active_name
    previous = _active_name
    _active = get_backend(name)
    _active_name = name
    return previous


def form_csr_data(cellvals, tensor, slots, nnz, scale):
    return _active.form_csr_data(cellvals, tensor, slots, nnz, scale)


def triple_apply(a_cells, b_cells, tensor, cell_nodes, n_nodes, scale):
    return _active.triple_apply(a_cells, b_cells, tensor, cell_nodes, n_nodes, scale)


def local_form_vectors(cellvals, tensor):
    return _active.local_form_vectors(cellvals, tensor)
