"""Hot kernels of the confocal transport operator.

Each kernel has a numba implementation and a pure-numpy twin with the same
signature. Numba is used when importable unless ``SLCT_DISABLE_NUMBA`` is set
to a truthy value; ``use_numba()`` reports the active path and ``set_backend``
switches it at runtime (the benchmark and the cross-check tests use that).

Both paths consume the same lookup tables, indexed by absolute lateral offset
``(|dy|, |dx|)`` and depth index: ``tbin`` holds the time bin (``nt`` marks a
dropped path) and ``wt`` the ``d**-4`` falloff (0 where dropped).
"""

import os
import warnings

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
else:
    # single TBB probe warning on older runtimes; the omp/workqueue layers are used instead
    warnings.filterwarnings("ignore", message="The TBB threading layer", category=nb.NumbaWarning)

_FLAG = os.environ.get("SLCT_DISABLE_NUMBA", "").strip().lower()
_USE_NUMBA = nb is not None and _FLAG in ("", "0", "false", "no")


def use_numba() -> bool:
    return _USE_NUMBA


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` kernels for subsequent calls."""
    global _USE_NUMBA
    if name == "numba":
        if nb is None:
            raise RuntimeError("numba is not installed")
        _USE_NUMBA = True
    elif name == "numpy":
        _USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


# ---------------------------------------------------------------- numpy path


def _offsets(n):
    for o in range(-(n - 1), n):
        # scan index s = voxel index i + o
        lo, hi = max(0, o), min(n, n + o)
        yield o, slice(lo, hi), slice(lo - o, hi - o)


def _runs(tb, nt):
    """Valid prefix length and run starts of a nondecreasing bin column."""
    m = int(np.searchsorted(tb, nt))
    if m == 0:
        return 0, None, None
    head = np.ones(m, dtype=bool)
    head[1:] = tb[1:m] != tb[: m - 1]
    starts = np.flatnonzero(head)
    return m, starts, tb[starts]


def render_numpy(u, tbin, wt, nt):
    ny, nx, nz = u.shape
    out = np.zeros((ny, nx, nt))
    cache = {}
    for oy, sy, iy in _offsets(ny):
        for ox, sx, ix in _offsets(nx):
            key = (abs(oy), abs(ox))
            if key not in cache:
                cache[key] = _runs(tbin[key], nt)
            m, starts, ut = cache[key]
            if m == 0:
                continue
            contrib = u[iy, ix, :m] * wt[key][:m]
            out[sy, sx, ut] += np.add.reduceat(contrib, starts, axis=2)
    return out


def adjoint_numpy(tau, tbin, wt, nz):
    ny, nx, nt = tau.shape
    out = np.zeros((ny, nx, nz))
    for oy, sy, iy in _offsets(ny):
        for ox, sx, ix in _offsets(nx):
            key = (abs(oy), abs(ox))
            tb = tbin[key]
            m = int(np.searchsorted(tb, nt))
            if m == 0:
                continue
            out[iy, ix, :m] += tau[sy, sx][:, :, tb[:m]] * wt[key][:m]
    return out


# ---------------------------------------------------------------- numba path

if nb is not None:

    @nb.njit(cache=True, parallel=True)
    def _render_nb(u, tbin, wt, nt):
        ny, nx, nz = u.shape
        out = np.zeros((ny, nx, nt))
        for sy in nb.prange(ny):
            for sx in range(nx):
                row = out[sy, sx]
                for iy in range(ny):
                    ady = abs(sy - iy)
                    for ix in range(nx):
                        adx = abs(sx - ix)
                        tb = tbin[ady, adx]
                        w = wt[ady, adx]
                        col = u[iy, ix]
                        for iz in range(nz):
                            t = tb[iz]
                            if t >= nt:
                                break
                            row[t] += w[iz] * col[iz]
        return out

    @nb.njit(cache=True, parallel=True)
    def _adjoint_nb(tau, tbin, wt, nz):
        ny, nx, nt = tau.shape
        out = np.zeros((ny, nx, nz))
        for iy in nb.prange(ny):
            for ix in range(nx):
                col = out[iy, ix]
                for sy in range(ny):
                    ady = abs(sy - iy)
                    for sx in range(nx):
                        adx = abs(sx - ix)
                        tb = tbin[ady, adx]
                        w = wt[ady, adx]
                        row = tau[sy, sx]
                        for iz in range(nz):
                            t = tb[iz]
                            if t >= nt:
                                break
                            col[iz] += w[iz] * row[t]
        return out


def render(u, tbin, wt, nt):
    """Scatter voxel albedo into transient bins (forward operator)."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    if _USE_NUMBA:
        return _render_nb(u, tbin, wt, nt)
    return render_numpy(u, tbin, wt, nt)


def adjoint(tau, tbin, wt, nz):
    """Gather transient bins back onto voxels (transpose of ``render``)."""
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    if _USE_NUMBA:
        return _adjoint_nb(tau, tbin, wt, nz)
    return adjoint_numpy(tau, tbin, wt, nz)
