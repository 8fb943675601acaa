"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled module is built from ``_ckernels.pyx`` at install time. If it is
missing (or ``HAMFLOW_PURE_PYTHON=1`` is set) the numpy versions in
``_pykernels`` are used instead. Both expose the same three functions:

gmm_logpdf_score
    Log-density and score of an isotropic Gaussian mixture, one pass.
leapfrog_gmm
    Batched kick-drift-kick leapfrog under a mixture score force.
mean_pairwise_distance
    Mean Euclidean distance between two point sets (energy distance core).
"""

import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("HAMFLOW_PURE_PYTHON", "") in ("", "0"):
    backend = compiled_backend
    BACKEND_NAME = "compiled"
else:
    backend = python_backend
    BACKEND_NAME = "python"

gmm_logpdf_score = backend.gmm_logpdf_score
leapfrog_gmm = backend.leapfrog_gmm
mean_pairwise_distance = backend.mean_pairwise_distance


def available_backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["compiled"] = compiled_backend
    return out
