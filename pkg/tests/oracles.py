"""Independent reference implementations used by the tests."""

import math

import numpy as np


def naive_render(u, grid):
    """Direct sum over scan points and voxels with plain Python floats."""
    ny, nx, nz = u.shape
    out = np.zeros((ny, nx, grid.nt))
    p = grid.pitch
    for sy in range(ny):
        for sx in range(nx):
            for iy in range(ny):
                for ix in range(nx):
                    for iz in range(nz):
                        a = u[iy, ix, iz]
                        if a == 0.0:
                            continue
                        z = (iz + 0.5) * grid.voxel_depth
                        d = math.sqrt(((sy - iy) * p) ** 2 + ((sx - ix) * p) ** 2 + z * z)
                        t = math.floor(2.0 * d / grid.bin_length + 1e-9)
                        if 0 <= t < grid.nt:
                            out[sy, sx, t] += a / d**4
    return out


def diff_matrices(ny, nx):
    """Dense periodic forward-difference matrices built entry by entry."""
    n = ny * nx
    Dx = np.zeros((n, n))
    Dy = np.zeros((n, n))
    for i in range(ny):
        for j in range(nx):
            k = i * nx + j
            Dx[k, k] -= 1.0
            Dx[k, i * nx + (j + 1) % nx] += 1.0
            Dy[k, k] -= 1.0
            Dy[k, ((i + 1) % ny) * nx + j] += 1.0
    return Dx, Dy


def dense_screened_systems(ny, nx):
    """``(G, HtH)`` with ``G = -Lap`` and ``HtH`` the Hessian normal matrix (xy counted twice)."""
    Dx, Dy = diff_matrices(ny, nx)
    G = Dx.T @ Dx + Dy.T @ Dy
    H = [Dx @ Dx, Dy @ Dx, Dy @ Dy]
    HtH = H[0].T @ H[0] + 2.0 * H[1].T @ H[1] + H[2].T @ H[2]
    return G, HtH


def ray_bruteforce(a, xi, inner, step=1e-4):
    """Minimize 1/2|x - a|^2 + xi |x| over x = s a/|a|, s on a ``step`` grid.

    The minimizer of this objective is a nonnegative multiple of ``a``, so a
    1D search along the ray is exhaustive.
    """
    na = np.sqrt(inner(a, a))
    if na == 0:
        return np.zeros_like(a)
    s = np.arange(0.0, na + step, step)
    obj = 0.5 * (s - na) ** 2 + xi * s
    return s[np.argmin(obj)] * a / na
