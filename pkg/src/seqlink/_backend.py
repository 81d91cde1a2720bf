"""Pick the kernel implementation once, at import.

Set ``SEQLINK_BACKEND=python`` to force the numpy fallback even when the
compiled extension is importable.
"""
import logging
import os

from seqlink import _fallback

logger = logging.getLogger(__name__)

_requested = os.environ.get("SEQLINK_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _fallback
    BACKEND = "python"
else:
    try:
        from seqlink import _core as kernels  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        logger.debug("seqlink._core not built; using numpy fallback")
        kernels = _fallback
        BACKEND = "python"

EMI_OK = _fallback.EMI_OK
EMI_INVERSION_FAILED = _fallback.EMI_INVERSION_FAILED
EMI_NOT_CONVERGED = _fallback.EMI_NOT_CONVERGED


def estimate_coherence(slc, shp, rows, cols, threads=1):
    if kernels is _fallback:
        return kernels.estimate_coherence(slc, shp, rows, cols)
    return kernels.estimate_coherence(slc, shp, rows, cols, threads=threads)


def emi_batch(coh, shift0=0.99, max_iter=100, cond_limit=1e12, beta=0.0, threads=1):
    if kernels is _fallback:
        return kernels.emi_batch(coh, shift0, max_iter, cond_limit, beta)
    return kernels.emi_batch(coh, shift0, max_iter, cond_limit, beta, threads=threads)


def admm_l1_batch(a, chol, b, rho=1.0, max_iter=1000, tol_abs=1e-6, tol_rel=1e-4, warm_start=True):
    if kernels is _fallback:
        return kernels.admm_l1_batch(a, chol, b, rho, max_iter, tol_abs, tol_rel)
    return kernels.admm_l1_batch(a, chol, b, rho, max_iter, tol_abs, tol_rel, warm_start)
