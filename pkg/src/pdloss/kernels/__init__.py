"""Pair enumeration, neighbour ranking and binning kernels.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``PDLOSS_PURE_PYTHON`` is set to a non-empty value
other than ``0``) the numpy implementation is selected.  ``BACKEND`` names
the active choice.
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("PDLOSS_PURE_PYTHON", "0") in ("", "0"):
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = python_backend
    BACKEND = "python"

pair_indices = _impl.pair_indices
pair_partition = _impl.pair_partition
first_hit_ranks = _impl.first_hit_ranks
histogram_counts = _impl.histogram_counts
triplet_indices = _impl.triplet_indices

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "pair_indices",
    "pair_partition",
    "first_hit_ranks",
    "histogram_counts",
    "triplet_indices",
]
