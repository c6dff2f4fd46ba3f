"""Discrete confocal light transport.

A voxel of albedo ``u`` at distance ``d`` from a scan point contributes
``u / d**4`` to the single time bin that contains its round trip. The
operator is laterally shift invariant, so it is stored as lookup tables over
absolute lateral offsets rather than as an explicit sparse matrix.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import _accel
from .grid import GridError, ScanMask, SceneGrid, TransientCube, VoxelAlbedo

SCENE_KINDS = ("plane", "sphere_cap", "letter_T")


class ConfocalOperator:
    """Forward model ``A`` and its exact transpose on raw arrays.

    With ``compensated=True`` the operator is ``W A`` where ``W`` multiplies
    every time bin by ``falloff_compensation``; this removes the ``d**-4``
    dynamic range along the light cone and is what the iterative solvers
    work with.
    """

    def __init__(self, grid: SceneGrid, compensated: bool = False):
        self.grid = grid
        self.compensated = compensated
        self.tbin, self.wt = transport_tables(grid)
        if compensated:
            w = np.append(falloff_compensation(grid), 0.0)
            self.wt = np.ascontiguousarray(self.wt * w[self.tbin])
        self.tbin.setflags(write=False)
        self.wt.setflags(write=False)

    def forward(self, u: np.ndarray) -> np.ndarray:
        return _accel.render(u, self.tbin, self.wt, self.grid.nt)

    def adjoint(self, tau: np.ndarray) -> np.ndarray:
        return _accel.adjoint(tau, self.tbin, self.wt, self.grid.nz)


def transport_tables(grid: SceneGrid):
    """Time-bin and falloff tables indexed ``[|dy|, |dx|, iz]``."""
    oy = np.arange(grid.ny)[:, None, None] * grid.pitch
    ox = np.arange(grid.nx)[None, :, None] * grid.pitch
    z = grid.depth_of(np.arange(grid.nz))[None, None, :]
    d = np.sqrt(oy**2 + ox**2 + z**2)
    tbin = grid.time_bin(d)
    dropped = (tbin < 0) | (tbin >= grid.nt)
    tbin[dropped] = grid.nt
    wt = np.where(dropped, 0.0, d**-4.0)
    return np.ascontiguousarray(tbin), np.ascontiguousarray(wt)


def falloff_compensation(grid: SceneGrid) -> np.ndarray:
    """Per-bin factor ``r_t**4`` with ``r_t`` the one-way distance of bin ``t``'s centre."""
    r = (np.arange(grid.nt) + 0.5) * grid.bin_length / 2.0
    return r**4


def compensate(tau, grid: SceneGrid) -> np.ndarray:
    data = tau.data if isinstance(tau, TransientCube) else np.asarray(tau, dtype=float)
    return data * falloff_compensation(grid)


@lru_cache(maxsize=8)
def get_operator(grid: SceneGrid, compensated: bool = False) -> ConfocalOperator:
    return ConfocalOperator(grid, compensated)


def render_transient(u: VoxelAlbedo) -> TransientCube:
    """Render the confocal transient of a voxel volume."""
    if not isinstance(u, VoxelAlbedo):
        raise GridError("render_transient expects a VoxelAlbedo")
    op = get_operator(u.grid)
    return TransientCube(u.grid, op.forward(u.data))


def adjoint_transient(tau: TransientCube) -> VoxelAlbedo:
    if not isinstance(tau, TransientCube):
        raise GridError("adjoint_transient expects a TransientCube")
    op = get_operator(tau.grid)
    return VoxelAlbedo(tau.grid, op.adjoint(tau.data))


def _mask_array(mask):
    return mask.mask if isinstance(mask, ScanMask) else np.asarray(mask, dtype=bool)


def apply_selection(tau, mask):
    """Zero the transient at scan positions the mask does not select."""
    m = _mask_array(mask)
    data = tau.data if isinstance(tau, TransientCube) else np.asarray(tau, dtype=float)
    if m.shape != data.shape[:2]:
        raise GridError(f"mask shape {m.shape} does not match transient {data.shape[:2]}")
    out = data * m[:, :, None]
    if isinstance(tau, TransientCube):
        return TransientCube(tau.grid, out)
    return out


def add_noise(tau, gauss_sigma=0.0, poisson_scale=0.0, seed=0):
    """Optional shot noise followed by additive Gaussian noise.

    With ``poisson_scale > 0`` each bin is replaced by
    ``Poisson(scale * max(tau, 0)) / scale``. Deterministic for a given seed.
    """
    if gauss_sigma < 0 or poisson_scale < 0:
        raise ValueError("noise levels must be nonnegative")
    data = tau.data if isinstance(tau, TransientCube) else np.asarray(tau, dtype=float)
    out = data.copy()
    rng = np.random.default_rng(seed)
    if poisson_scale > 0:
        out = rng.poisson(np.clip(out, 0.0, None) * poisson_scale) / poisson_scale
    if gauss_sigma > 0:
        out = out + rng.normal(0.0, gauss_sigma, size=out.shape)
    if isinstance(tau, TransientCube):
        return TransientCube(tau.grid, out)
    return out


def synth_scene(kind: str, grid: SceneGrid) -> VoxelAlbedo:
    """Single-layer test scenes with unit albedo.

    ``plane`` fills the whole lateral extent at ``iz = nz // 2``;
    ``sphere_cap`` is a spherical cap bulging towards the wall;
    ``letter_T`` is a flat T-shaped glyph at mid depth.
    """
    u = np.zeros(grid.volume_shape)
    ny, nx, nz = grid.volume_shape
    if kind == "plane":
        u[:, :, nz // 2] = 1.0
    elif kind == "sphere_cap":
        yy, xx = np.meshgrid(grid.lateral_of(np.arange(ny)), grid.lateral_of(np.arange(nx)), indexing="ij")
        cy, cx = ny * grid.pitch / 2.0, nx * grid.pitch / 2.0
        r2 = (yy - cy) ** 2 + (xx - cx) ** 2
        rim = 0.3 * min(ny, nx) * grid.pitch
        radius = 2.0 * rim
        z_rim = 0.7 * nz * grid.voxel_depth
        centre = z_rim + np.sqrt(radius**2 - rim**2)
        inside = r2 <= rim**2
        z = centre - np.sqrt(radius**2 - np.minimum(r2, rim**2))
        iz = np.clip(np.round(z / grid.voxel_depth - 0.5).astype(int), 0, nz - 1)
        iy, ix = np.nonzero(inside)
        u[iy, ix, iz[inside]] = 1.0
    elif kind == "letter_T":
        glyph = np.zeros((ny, nx), dtype=bool)
        r0, r1, r2 = (int(round(f * ny)) for f in (0.2, 0.35, 0.8))
        c0, c1 = int(round(0.2 * nx)), int(round(0.8 * nx))
        s0, s1 = int(round(0.4 * nx)), int(round(0.6 * nx))
        glyph[r0 : max(r1, r0 + 1), c0 : max(c1, c0 + 1)] = True
        glyph[r0 : max(r2, r0 + 1), s0 : max(s1, s0 + 1)] = True
        u[glyph, nz // 2] = 1.0
    else:
        raise GridError(f"unknown scene kind {kind!r}; valid kinds: {', '.join(SCENE_KINDS)}")
    return VoxelAlbedo(grid, u)


def power_norm(forward, adjoint, shape, iters, seed=0):
    """Power-iteration estimate of the spectral norm of a linear map.

    Returns ``||A x_k||`` for the normalized ``k``-th power iterate of
    ``A^T A``; the sequence is nondecreasing in ``iters``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 1.0, size=shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for k in range(iters):
        y = forward(x)
        est = float(np.linalg.norm(y))
        if k == iters - 1 or est == 0.0:
            break
        x = adjoint(y)
        x /= np.linalg.norm(x)
    return est


def estimate_op_norm(grid: SceneGrid, iters: int = 20, mask=None, forward=None, adjoint=None, compensated=False) -> float:
    """Spectral norm of the transport operator (optionally masked).

    ``forward``/``adjoint`` override the operator, e.g. with the identity in
    tests.
    """
    if forward is None or adjoint is None:
        op = get_operator(grid, compensated)
        if mask is None:
            forward, adjoint = op.forward, op.adjoint
        else:
            m = _mask_array(mask)[:, :, None]
            forward = lambda u: op.forward(u) * m  # noqa: E731
            adjoint = lambda t: op.adjoint(t * m)  # noqa: E731
    return power_norm(forward, adjoint, grid.volume_shape, iters)


@lru_cache(maxsize=16)
def _cached_norm(grid, mask_bytes, iters, compensated):
    mask = None
    if mask_bytes is not None:
        mask = np.frombuffer(mask_bytes, dtype=bool).reshape(grid.map_shape)
    return estimate_op_norm(grid, iters, mask=mask, compensated=compensated)


def cached_op_norm(grid: SceneGrid, mask=None, iters: int = 20, compensated: bool = False) -> float:
    """``estimate_op_norm`` memoized per grid, mask and operator variant."""
    key = None
    if mask is not None:
        m = _mask_array(mask)
        key = None if m.all() else m.tobytes()
    return _cached_norm(grid, key, iters, compensated)
