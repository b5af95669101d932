"""Backend selection for the time-stepping kernels.

The compiled extension is used when it imports; setting the environment
variable ``COUPLEDWAVE_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("COUPLEDWAVE_PURE_PYTHON", "") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

leapfrog = backend.leapfrog
leapfrog_adjoint = backend.leapfrog_adjoint
