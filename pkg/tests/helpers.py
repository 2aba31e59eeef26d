"""Shared test utilities: finite-difference oracles and tolerances."""

import numpy as np


def numeric_gradient(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. array ``x``.

    ``f`` takes no arguments and must read ``x`` by reference; entries are
    perturbed in place and restored.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rel_tol: float = 1e-3):
    """Elementwise check: relative error below ``rel_tol``; entries where
    both gradients are below 1e-6 are compared absolutely."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    tiny = scale < 1e-6
    abs_err = np.abs(analytic - numeric)
    if tiny.any():
        assert abs_err[tiny].max() < 1e-6, f"tiny-gradient mismatch: max {abs_err[tiny].max()}"
    rel = abs_err[~tiny] / scale[~tiny]
    assert rel.size == 0 or rel.max() < rel_tol, f"relative gradient error {rel.max():.3e}"
