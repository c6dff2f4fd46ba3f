"""Weighted projection of a volume onto albedo/depth maps and its inverse."""

import numpy as np

from .grid import AlbedoMap, DepthMap, GridError, SceneGrid, VoxelAlbedo

ZERO_REL = 1e-12


def _round_half_up(x):
    return np.floor(x + 0.5)


def project_arrays(u: np.ndarray, p: int = 4, zero_rel: float = ZERO_REL):
    """Column-wise projection on raw arrays.

    Returns the albedo map and the integer depth map with the +1 EMPTY
    offset. Only entries above ``zero_rel * max(u)`` take part; negative
    entries never do.
    """
    if int(p) != p or p < 1:
        raise GridError("projection power p must be a positive integer >= 1")
    u = np.asarray(u, dtype=float)
    umax = float(u.max()) if u.size else 0.0
    ny, nx, nz = u.shape
    if umax <= 0.0:
        return np.zeros((ny, nx)), np.zeros((ny, nx), dtype=np.int64)
    keep = u > zero_rel * umax
    vals = np.where(keep, u, 0.0)
    colmax = vals.max(axis=2, keepdims=True)
    occupied = colmax[..., 0] > 0
    # scale by the column maximum so u**p neither under- nor overflows
    scaled = np.divide(vals, colmax, out=np.zeros_like(vals), where=colmax > 0)
    wraw = scaled ** int(p)
    wsum = wraw.sum(axis=2, keepdims=True)
    w = np.divide(wraw, wsum, out=np.zeros_like(wraw), where=wsum > 0)
    albedo = (w * vals).sum(axis=2)
    depth = (w * np.arange(nz)).sum(axis=2)
    idx = np.where(occupied, _round_half_up(depth).astype(np.int64) + 1, 0)
    albedo = np.where(occupied, albedo, 0.0)
    return albedo, idx


def project(u: VoxelAlbedo, p: int = 4):
    """Collapse a volume into ``(AlbedoMap, DepthMap)``.

    Per column the nonzero entries ``u_i`` at depth indices ``z_i`` get
    weights ``u_i**p / sum_j u_j**p``; the albedo is the weighted mean of
    ``u_i`` and the depth is the rounded weighted mean of ``z_i`` (stored
    +1, 0 meaning no surface).
    """
    albedo, idx = project_arrays(u.data, p)
    return AlbedoMap(albedo), DepthMap(idx, u.grid.nz)


def back_project_arrays(albedo, idx, nz: int) -> np.ndarray:
    idx = np.asarray(idx)
    if np.any((idx < 0) | (idx > nz)):
        raise GridError(f"depth index outside [0, {nz}]")
    albedo = np.asarray(albedo, dtype=float)
    if albedo.shape != idx.shape:
        raise GridError("albedo and depth maps differ in shape")
    out = np.zeros(idx.shape + (nz,))
    iy, ix = np.nonzero(idx)
    out[iy, ix, idx[iy, ix] - 1] = albedo[iy, ix]
    return out


def back_project(I: AlbedoMap, D: DepthMap, grid: SceneGrid) -> VoxelAlbedo:
    """Place each column's albedo at its depth; EMPTY columns stay zero."""
    if I.val.shape != grid.map_shape or D.idx.shape != grid.map_shape:
        raise GridError("map shapes do not match the grid")
    if D.nz != grid.nz:
        raise GridError("depth map was built for a different nz")
    return VoxelAlbedo(grid, back_project_arrays(I.val, D.idx, grid.nz))


def depth_from_real(D: np.ndarray, nz: int) -> np.ndarray:
    """Round a real-valued working depth field to a valid sentinel map."""
    return np.clip(_round_half_up(D), 0, nz).astype(np.int64)
