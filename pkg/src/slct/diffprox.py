"""Periodic finite differences, shrinkage operators and FFT solvers for 2D maps.

Vector fields are stored component-first: a gradient field has shape
``(2, ny, nx)`` holding ``(d/dx, d/dy)``; a symmetric Hessian field has shape
``(3, ny, nx)`` holding ``(xx, xy, yy)``. Hessian fields use the Frobenius
inner product, in which the off-diagonal entry counts twice.
"""

from functools import lru_cache

import numpy as np
from scipy import ndimage


def _dx(f):
    return np.roll(f, -1, axis=-1) - f


def _dy(f):
    return np.roll(f, -1, axis=-2) - f


def _dxt(g):
    # transpose of the forward difference
    return np.roll(g, 1, axis=-1) - g


def _dyt(g):
    return np.roll(g, 1, axis=-2) - g


def grad2d(f):
    f = np.asarray(f, dtype=float)
    return np.stack([_dx(f), _dy(f)])


def div2d(v):
    """Discrete divergence, the negative adjoint of ``grad2d``."""
    return -(_dxt(v[0]) + _dyt(v[1]))


def hessian2d(f):
    """Second differences from composed forward differences."""
    f = np.asarray(f, dtype=float)
    fx = _dx(f)
    return np.stack([_dx(fx), _dy(fx), _dy(_dy(f))])


def div2_2d(w):
    """Adjoint of ``hessian2d`` under the Frobenius inner product."""
    return _dxt(_dxt(w[0])) + 2.0 * _dxt(_dyt(w[1])) + _dyt(_dyt(w[2]))


def hess_inner(a, b) -> float:
    return float(np.sum(a[0] * b[0]) + 2.0 * np.sum(a[1] * b[1]) + np.sum(a[2] * b[2]))


def frob_norm(w):
    return np.sqrt(w[0] ** 2 + 2.0 * w[1] ** 2 + w[2] ** 2)


def laplacian2d(f):
    """Five-point periodic Laplacian, ``div2d(grad2d(f))``."""
    return div2d(grad2d(f))


def shrink_vec(a, xi):
    """Group soft-thresholding ``max(|a| - xi, 0) a / |a|``.

    ``a`` has its vector components on axis 0; ``xi`` is a scalar or a field
    broadcastable to ``a.shape[1:]``. Returns 0 where ``a`` is 0.
    """
    a = np.asarray(a, dtype=float)
    if np.any(np.asarray(xi) < 0):
        raise ValueError("shrinkage threshold must be nonnegative")
    norm = np.sqrt(np.sum(a * a, axis=0))
    scale = np.divide(np.maximum(norm - xi, 0.0), norm, out=np.zeros_like(norm), where=norm > 0)
    return a * scale


def shrink_frob(w, xi):
    """Frobenius-norm shrinkage of symmetric 2x2 fields stored as (xx, xy, yy)."""
    w = np.asarray(w, dtype=float)
    if np.any(np.asarray(xi) < 0):
        raise ValueError("shrinkage threshold must be nonnegative")
    norm = frob_norm(w)
    scale = np.divide(np.maximum(norm - xi, 0.0), norm, out=np.zeros_like(norm), where=norm > 0)
    return w * scale


def alpha_beta(D):
    """Adaptive first- and second-order weights of a depth field.

    ``beta = 1 / sqrt(1 + |grad D|^2)`` and ``alpha = |grad beta|``; the
    magnitude of the gradient is what thresholds the first-order term.
    """
    g = grad2d(D)
    beta = 1.0 / np.sqrt(1.0 + np.sum(g * g, axis=0))
    gb = grad2d(beta)
    alpha = np.sqrt(np.sum(gb * gb, axis=0))
    return alpha, beta


@lru_cache(maxsize=32)
def laplace_symbol(ny: int, nx: int) -> np.ndarray:
    """Fourier symbol of the periodic five-point Laplacian (always <= 0)."""
    ky = 2.0 * np.cos(2.0 * np.pi * np.arange(ny) / ny)
    kx = 2.0 * np.cos(2.0 * np.pi * np.arange(nx) / nx)
    sym = ky[:, None] + kx[None, :] - 4.0
    sym.setflags(write=False)
    return sym


def solve_screened_biharmonic(rhs, r1, r2):
    """Solve ``(Id - r1 Lap + r2 Lap^2) D = rhs`` exactly on the periodic grid."""
    if r1 < 0 or r2 < 0:
        raise ValueError("r1 and r2 must be nonnegative")
    rhs = np.asarray(rhs, dtype=float)
    sym = laplace_symbol(*rhs.shape)
    denom = 1.0 - r1 * sym + r2 * sym * sym
    return np.real(np.fft.ifft2(np.fft.fft2(rhs) / denom))


def solve_screened_poisson(rhs, r3):
    """Solve ``(Id - r3 Lap) I = rhs`` exactly on the periodic grid."""
    return solve_screened_biharmonic(rhs, r3, 0.0)


def apply_screened_biharmonic(D, r1, r2):
    """Explicit finite-difference application of the screened operator."""
    lap = laplacian2d(D)
    return D - r1 * lap + r2 * laplacian2d(lap)


# -------------------------------------------------------------- post-processing


def gaussian_smooth(img, sigma):
    """Periodic Gaussian blur; kernel cut at 4 sigma and renormalized."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    img = np.asarray(img, dtype=float)
    if sigma == 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma, mode="wrap", truncate=4.0)


def truncate(img, lo_pct, hi_pct):
    """Clip to the given lower/upper percentiles."""
    if not 0 <= lo_pct <= hi_pct <= 100:
        raise ValueError("need 0 <= lo_pct <= hi_pct <= 100")
    img = np.asarray(img, dtype=float)
    lo, hi = np.percentile(img, [lo_pct, hi_pct])
    return np.clip(img, lo, hi)


def threshold(img, frac):
    """Zero values below ``frac * max(img)``."""
    if not 0 <= frac <= 1:
        raise ValueError("frac must lie in [0, 1]")
    img = np.asarray(img, dtype=float)
    out = img.copy()
    out[img < frac * img.max()] = 0.0
    return out
