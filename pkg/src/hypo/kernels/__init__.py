"""Batch kernels behind the objectives and the trainer's inner loop.

The compiled extension is preferred; set ``HYPO_PURE_PYTHON=1`` to force the
numpy fallback.  ``BACKEND`` names the implementation in use.
"""

import os

import numpy as np

from . import _pykernels

DPO, REF_FREE, HYPO_HARD, HYPO_SOFT = 0, 1, 2, 3

_impl = _pykernels
BACKEND = "python"
if os.environ.get("HYPO_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list:
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def objective_terms(code, dtheta, dref, beta, gamma, alpha, h):
    """Per-record ``(loss, weight, effective_ref_margin)`` arrays."""
    return _impl.objective_terms(code, dtheta, dref, beta, gamma, alpha, h)


def tabular_margins(logits, prompts, chosen, rejected):
    return _impl.tabular_margins(
        np.ascontiguousarray(logits, dtype=np.float64),
        np.ascontiguousarray(prompts, dtype=np.int64),
        np.ascontiguousarray(chosen, dtype=np.int64),
        np.ascontiguousarray(rejected, dtype=np.int64),
    )


def scatter_pairs(grad, prompts, chosen, rejected, coef):
    """In place: ``grad[x, c] += coef`` and ``grad[x, r] -= coef`` per record."""
    if not (grad.flags.c_contiguous and grad.dtype == np.float64):
        raise ValueError("grad must be a C-contiguous float64 array")
    _impl.scatter_pairs(
        grad,
        np.ascontiguousarray(prompts, dtype=np.int64),
        np.ascontiguousarray(chosen, dtype=np.int64),
        np.ascontiguousarray(rejected, dtype=np.int64),
        np.ascontiguousarray(coef, dtype=np.float64),
    )
