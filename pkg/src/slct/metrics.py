"""Image-level quality metrics on front-view projections."""

import numpy as np
from scipy import ndimage

from .grid import VoxelAlbedo

INF = float("inf")

# canonical SSIM configuration (dynamic range 1)
SSIM_SIGMA = 1.5
SSIM_WIN = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def max_intensity_projection(u, axis="z"):
    """Per-pixel maximum over depth, min-max normalized to [0, 1].

    A constant image (including an all-zero volume) maps to all zeros.
    """
    if axis != "z":
        raise ValueError("only depth ('z') projections are supported")
    data = u.data if isinstance(u, VoxelAlbedo) else np.asarray(u, dtype=float)
    img = data.max(axis=2)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(ref, test) -> float:
    """Peak signal-to-noise ratio for images with peak 1; +inf when identical."""
    ref, test = _same_shape(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return INF
    return 10.0 * np.log10(1.0 / mse)


def ssim(ref, test) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    The mean is taken over positions where the whole window fits inside the
    image (the classic "valid" convention); images smaller than the window
    fall back to the mean over all pixels.
    """
    x, y = _same_shape(ref, test)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    radius = SSIM_WIN // 2
    filt = lambda a: ndimage.gaussian_filter(a, SSIM_SIGMA, mode="reflect", truncate=radius / SSIM_SIGMA)  # noqa: E731
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    smap = num / den
    if min(smap.shape) > 2 * radius:
        smap = smap[radius:-radius, radius:-radius]
    return float(np.mean(smap))


def rel_error(u_new, u_old) -> float:
    """``|u_new - u_old| / |u_old|``; +inf when ``u_old`` is zero."""
    a = u_new.data if isinstance(u_new, VoxelAlbedo) else np.asarray(u_new, dtype=float)
    b = u_old.data if isinstance(u_old, VoxelAlbedo) else np.asarray(u_old, dtype=float)
    a, b = _same_shape(a, b)
    den = float(np.linalg.norm(b))
    if den == 0.0:
        return INF
    return float(np.linalg.norm(a - b)) / den


def ssim_config() -> str:
    return f"ssim window={SSIM_WIN}x{SSIM_WIN} gaussian sigma={SSIM_SIGMA} K1={SSIM_K1} K2={SSIM_K2} L=1"
