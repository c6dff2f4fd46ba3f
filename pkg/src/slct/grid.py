"""Scene discretization and the array containers shared by every module.

Axis conventions are fixed: lateral axes come first as ``[y][x]`` and the
last axis is depth (volumes) or time (transients). Scan points sit on the
wall plane ``z = 0`` at the lateral voxel centres.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, informational only

# Guard against floor() landing one bin low when 2d/bin_length is an exact
# integer that float arithmetic renders as k - 1ulp.
_BIN_EPS = 1e-9


class GridError(ValueError):
    """Raised for inconsistent grids or arrays that do not match a grid."""


@dataclass(frozen=True)
class SceneGrid:
    """Hidden-volume geometry, wall scan lattice and time binning.

    Parameters
    ----------
    nx, ny : int
        Lateral scan/voxel counts.
    nz : int
        Number of depth voxels.
    nt : int
        Number of time bins.
    wall_size : float
        Lateral extent of the scanned wall in meters.
    bin_length : float
        Distance light travels during one time bin, in meters.
    """

    nx: int
    ny: int
    nz: int
    nt: int
    wall_size: float
    bin_length: float
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("nx", "ny", "nz", "nt"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise GridError(f"{name} must be a positive integer, got {v!r}")
        if not self.wall_size > 0:
            raise GridError(f"wall_size must be positive, got {self.wall_size!r}")
        if not self.bin_length > 0:
            raise GridError(f"bin_length must be positive, got {self.bin_length!r}")

    @property
    def pitch(self) -> float:
        """Lateral voxel / scan pitch in meters."""
        return self.wall_size / self.nx

    @property
    def voxel_depth(self) -> float:
        # the full time window maps exactly onto the nz depth voxels
        return self.nt * self.bin_length / (2.0 * self.nz)

    @property
    def bin_time(self) -> float:
        return self.bin_length / self.c

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        return (self.ny, self.nx, self.nz)

    @property
    def transient_shape(self) -> tuple[int, int, int]:
        return (self.ny, self.nx, self.nt)

    @property
    def map_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def depth_of(self, iz):
        """Depth of voxel centre(s) ``iz`` in meters (always > 0)."""
        return (np.asarray(iz, dtype=float) + 0.5) * self.voxel_depth

    def lateral_of(self, i):
        """Lateral coordinate of scan point / voxel column ``i`` in meters."""
        return (np.asarray(i, dtype=float) + 0.5) * self.pitch

    def time_bin(self, distance):
        """Time bin of a confocal path with one-way length ``distance``.

        Bin ``t`` is centred on round-trip length ``(t + 1/2) * bin_length``,
        so nearest-bin assignment is ``floor(2 d / bin_length)``. Values may
        fall outside ``[0, nt)``; callers drop those.
        """
        x = 2.0 * np.asarray(distance, dtype=float) / self.bin_length
        return np.floor(x + _BIN_EPS).astype(np.int64)

    def bin_of_depth(self, iz):
        """Time bin of the voxel straight in front of a scan point."""
        iz = np.asarray(iz)
        if np.any((iz < 0) | (iz >= self.nz)):
            raise GridError(f"depth index out of range [0, {self.nz})")
        return self.time_bin(self.depth_of(iz))


def make_grid(nx, ny, nz, nt, wall_size, bin_length) -> SceneGrid:
    return SceneGrid(int(nx), int(ny), int(nz), int(nt), float(wall_size), float(bin_length))


def _checked(data, shape, what):
    arr = np.asarray(data, dtype=float)
    if arr.shape != shape:
        raise GridError(f"{what} has shape {arr.shape}, grid expects {shape}")
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class TransientCube:
    """Time-resolved signal indexed ``[iy, ix, it]``."""

    grid: SceneGrid
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _checked(self.data, self.grid.transient_shape, "transient"))


@dataclass(frozen=True, eq=False)
class VoxelAlbedo:
    """Volumetric albedo indexed ``[iy, ix, iz]``."""

    grid: SceneGrid
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _checked(self.data, self.grid.volume_shape, "volume"))


@dataclass(frozen=True, eq=False)
class ScanMask:
    """Scan positions that were actually illuminated; constant over time."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise GridError("scan mask must be 2D [iy, ix]")
        if not m.any():
            raise GridError("scan mask selects no scan positions")
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def full(cls, grid: SceneGrid) -> ScanMask:
        return cls(np.ones(grid.map_shape, dtype=bool))

    @classmethod
    def every_k(cls, grid: SceneGrid, k: int) -> ScanMask:
        """Regular sublattice keeping every ``k``-th scan row and column."""
        if k < 1:
            raise GridError("every_k needs k >= 1")
        m = np.zeros(grid.map_shape, dtype=bool)
        off = (k - 1) // 2
        m[off::k, off::k] = True
        return cls(m)

    @classmethod
    def random(cls, grid: SceneGrid, n: int, seed: int) -> ScanMask:
        total = grid.nx * grid.ny
        if not 1 <= n <= total:
            raise GridError(f"random mask needs 1 <= n <= {total}")
        rng = np.random.default_rng(seed)
        m = np.zeros(total, dtype=bool)
        m[rng.choice(total, size=n, replace=False)] = True
        return cls(m.reshape(grid.map_shape))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Integer depth map; 0 means EMPTY, ``k >= 1`` means depth index ``k - 1``."""

    idx: np.ndarray
    nz: int

    def __post_init__(self):
        a = np.asarray(self.idx)
        if a.ndim != 2:
            raise GridError("depth map must be 2D")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise GridError("depth map must hold integers")
            a = a.astype(np.int64)
        if np.any((a < 0) | (a > self.nz)):
            raise GridError(f"depth map values must lie in [0, {self.nz}]")
        object.__setattr__(self, "idx", a.astype(np.int64))


@dataclass(frozen=True, eq=False)
class AlbedoMap:
    val: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.val, dtype=float)
        if a.ndim != 2:
            raise GridError("albedo map must be 2D")
        if np.any(a < 0):
            raise GridError("albedo map must be nonnegative")
        object.__setattr__(self, "val", a)


AUTO = "auto"


@dataclass
class SolverParams:
    """Model and algorithm parameters.

    ``sigma`` and ``lam`` have no sensible defaults and must be tuned per
    scene. ``u_steps`` is the number of accelerated proximal-gradient steps
    taken on ``u`` per outer iteration; ``fista_iters`` is the iteration count
    of the sparse initialization. With ``compensate`` the solvers multiply
    each time bin by its one-way distance to the fourth power (and the
    operator accordingly), so ``sigma`` and ``lam`` refer to that scale.
    """

    sigma: float
    lam: float
    rho: float = 25.0
    eta: float = 1e-5
    r1: float = 0.1
    r2: float = 2.0
    r3: float = 20.0
    p: int = 4
    k_max: int = 120
    fista_iters: int = 20
    u_steps: int = 1
    admm_iters_D: int = 10
    admm_iters_I: int = 10
    step_t: float | str = AUTO
    nonneg_clamp: bool = False
    reset_multipliers: bool = False
    compensate: bool = True
    power_iters: int = 20
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("sigma", "lam", "rho", "eta"):
            if getattr(self, name) < 0:
                raise GridError(f"{name} must be nonnegative")
        for name in ("r1", "r2", "r3"):
            if not getattr(self, name) > 0:
                raise GridError(f"{name} must be positive")
        if int(self.p) != self.p or self.p < 1:
            raise GridError("p must be a positive integer")
        for name in ("k_max", "fista_iters", "u_steps", "admm_iters_D", "admm_iters_I"):
            if getattr(self, name) < 0:
                raise GridError(f"{name} must be >= 0")
        if self.power_iters < 1:
            raise GridError("power_iters must be >= 1")
        if self.step_t != AUTO and not (isinstance(self.step_t, (int, float)) and self.step_t > 0):
            raise GridError("step_t must be 'auto' or a positive number")


def gamma_from(sigma: float, tau0) -> float:
    """Sparsity weight scaled by the total measured signal."""
    if sigma < 0:
        raise GridError("sigma must be nonnegative")
    data = tau0.data if isinstance(tau0, TransientCube) else np.asarray(tau0, dtype=float)
    return float(sigma) * float(np.sum(data))
