"""Joint sparse-albedo / surface reconstruction and its baselines.

The outer loop alternates four updates: transient inpainting (closed form),
the depth map (ADMM with shape-operator weights), the albedo map (ADMM TV)
and the volume (accelerated proximal gradient coupled to the back-projected
surface). ``u`` is initialized by an L1-regularized FISTA solve on the
scanned positions only.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .diffprox import (
    alpha_beta,
    div2_2d,
    div2d,
    frob_norm,
    grad2d,
    hessian2d,
    solve_screened_biharmonic,
    solve_screened_poisson,
    shrink_frob,
    shrink_vec,
)
from .forward import cached_op_norm, compensate, get_operator
from .grid import (
    AUTO,
    AlbedoMap,
    DepthMap,
    GridError,
    ScanMask,
    SceneGrid,
    SolverParams,
    TransientCube,
    VoxelAlbedo,
    gamma_from,
)
from .projection import back_project_arrays, depth_from_real, project_arrays

log = logging.getLogger(__name__)

DIVERGENCE_RATIO = 1e3


class SolverDivergence(RuntimeError):
    """Raised when an iterate becomes non-finite or blows up."""


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _data(x):
    return x.data if isinstance(x, (TransientCube, VoxelAlbedo)) else np.asarray(x, dtype=float)


def _mask(mask, grid):
    m = mask.mask if isinstance(mask, ScanMask) else np.asarray(mask, dtype=bool)
    if m.shape != grid.map_shape:
        raise GridError(f"mask shape {m.shape} does not match grid {grid.map_shape}")
    return m


def rel_change(new, old) -> float:
    den = float(np.linalg.norm(old))
    if den == 0.0:
        return 0.0 if not np.any(new) else float("inf")
    return float(np.linalg.norm(new - old)) / den


@dataclass
class SolveState:
    """Working variables of one solve; owned by a single solver call."""

    u: np.ndarray
    tau: np.ndarray
    D: np.ndarray
    I: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    lam3: np.ndarray
    ubar: np.ndarray
    mu: float = 1.0

    @classmethod
    def initial(cls, u0, tau, grid: SceneGrid):
        shape = grid.map_shape
        return cls(
            u=u0,
            tau=tau,
            D=np.zeros(shape),
            I=np.zeros(shape),
            lam1=np.zeros((2,) + shape),
            lam2=np.zeros((3,) + shape),
            lam3=np.zeros((2,) + shape),
            ubar=u0.copy(),
        )


@dataclass
class SolveReport:
    """Per-outer-iteration telemetry; timings are kept apart from the numbers."""

    e1_init: float = float("nan")
    e1: list = field(default_factory=list)
    d_obj: list = field(default_factory=list)
    i_obj: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    init_iters: int = 0

    @property
    def iterations(self) -> int:
        return len(self.e1)

    def numeric_rows(self):
        return list(zip(range(1, self.iterations + 1), self.e1, self.rel_change, self.d_obj, self.i_obj))


# ------------------------------------------------------------------- energies


def energy_e1(Au, tau, tau0, m, rho, gamma, u) -> float:
    """Data fidelity + inpainting consistency + L1 sparsity."""
    fit = 0.5 * float(np.sum((Au - tau) ** 2))
    cons = 0.5 * rho * float(np.sum((tau * m[:, :, None] - tau0) ** 2))
    return fit + cons + gamma * float(np.sum(np.abs(u)))


def depth_objective(D, target, alpha, beta) -> float:
    g = grad2d(D)
    return float(
        0.5 * np.sum((D - target) ** 2)
        + np.sum(alpha * np.sqrt(np.sum(g * g, axis=0)))
        + np.sum(beta * frob_norm(hessian2d(D)))
    )


def albedo_objective(I, target, eta) -> float:
    g = grad2d(I)
    return float(0.5 * np.sum((I - target) ** 2) + eta * np.sum(np.sqrt(np.sum(g * g, axis=0))))


def depth_lagrangian(D, v, w, lam1, lam2, target, alpha, beta, r1, r2) -> float:
    """Augmented Lagrangian of the split depth problem."""
    gd = grad2d(D) - v
    hd = hessian2d(D) - w
    return float(
        0.5 * np.sum((D - target) ** 2)
        + np.sum(alpha * np.sqrt(np.sum(v * v, axis=0)))
        + np.sum(lam1 * gd)
        + 0.5 * r1 * np.sum(gd * gd)
        + np.sum(beta * frob_norm(w))
        + (np.sum(lam2[0] * hd[0]) + 2.0 * np.sum(lam2[1] * hd[1]) + np.sum(lam2[2] * hd[2]))
        + 0.5 * r2 * float(np.sum(frob_norm(hd) ** 2))
    )


# ------------------------------------------------------------------ subproblems


def tau_step(Au, tau0, m, rho):
    """Closed-form transient update on raw arrays."""
    sel = m[:, :, None]
    return np.where(sel, (Au + rho * tau0) / (rho + 1.0), Au)


def update_tau(u, tau0, mask, rho):
    """Inpaint the transient: keep ``A u`` off the mask, blend with data on it."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    grid = u.grid
    Au = get_operator(grid).forward(u.data)
    return TransientCube(grid, tau_step(Au, _data(tau0), _mask(mask, grid), rho))


class DepthUpdate(NamedTuple):
    D: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    objective: float


class AlbedoUpdate(NamedTuple):
    I: np.ndarray
    lam3: np.ndarray
    objective: float


def depth_sweep(D, target, lam1, lam2, alpha, beta, r1, r2):
    """One ADMM sweep of the depth problem; returns ``(D, v, w, lam1, lam2)``."""
    v = shrink_vec(grad2d(D) + lam1 / r1, alpha / r1)
    w = shrink_frob(hessian2d(D) + lam2 / r2, beta / r2)
    rhs = target - div2d(r1 * v - lam1) + div2_2d(r2 * w - lam2)
    D = solve_screened_biharmonic(rhs, r1, r2)
    lam1 = lam1 + r1 * (grad2d(D) - v)
    lam2 = lam2 + r2 * (hessian2d(D) - w)
    return D, v, w, lam1, lam2


def update_D(D_prev, u, params: SolverParams, lam1=None, lam2=None, weights=None) -> DepthUpdate:
    """Depth-map update with explicitly refreshed shape-operator weights.

    ``u`` is a volume (or the already projected real-valued depth target if a
    2D array is passed). ``weights`` replaces ``alpha_beta`` and is meant as a
    test seam.
    """
    D = np.asarray(D_prev, dtype=float)
    target = _depth_target(u, params.p)
    lam1 = np.zeros((2,) + D.shape) if lam1 is None else lam1
    lam2 = np.zeros((3,) + D.shape) if lam2 is None else lam2
    weigh = weights or alpha_beta
    alpha, beta = weigh(D)
    for _ in range(params.admm_iters_D):
        D, _, _, lam1, lam2 = depth_sweep(D, target, lam1, lam2, alpha, beta, params.r1, params.r2)
        alpha, beta = weigh(D)
    return DepthUpdate(D, lam1, lam2, depth_objective(D, target, alpha, beta))


def update_I(I_prev, u, params: SolverParams, lam3=None) -> AlbedoUpdate:
    """Albedo-map update: TV denoising of the projected albedo by ADMM."""
    I = np.asarray(I_prev, dtype=float)
    target = _albedo_target(u, params.p)
    lam3 = np.zeros((2,) + I.shape) if lam3 is None else lam3
    r3, eta = params.r3, params.eta
    for _ in range(params.admm_iters_I):
        q = shrink_vec(grad2d(I) + lam3 / r3, eta / r3)
        I = solve_screened_poisson(target - div2d(r3 * q - lam3), r3)
        lam3 = lam3 + r3 * (grad2d(I) - q)
    return AlbedoUpdate(I, lam3, albedo_objective(I, target, eta))


def _depth_target(u, p):
    if isinstance(u, VoxelAlbedo) or np.ndim(u) == 3:
        return project_arrays(_data(u), p)[1].astype(float)
    return np.asarray(u, dtype=float)


def _albedo_target(u, p):
    if isinstance(u, VoxelAlbedo) or np.ndim(u) == 3:
        return project_arrays(_data(u), p)[0]
    return np.asarray(u, dtype=float)


def fista_momentum(mu):
    return (1.0 + np.sqrt(1.0 + 4.0 * mu * mu)) / 2.0


def u_step(state: SolveState, forward, adjoint, tau, prior, lam, gamma, step, nonneg=False):
    """One accelerated proximal-gradient step on ``u``; updates ``state`` in place."""
    ubar = state.ubar
    grad = adjoint(forward(ubar) - tau)
    if lam:
        grad = grad + lam * (ubar - prior)
    u_new = soft_threshold(ubar - step * grad, gamma * step)
    if nonneg:
        np.maximum(u_new, 0.0, out=u_new)
    mu_new = fista_momentum(state.mu)
    state.ubar = u_new + ((state.mu - 1.0) / mu_new) * (u_new - state.u)
    state.mu = mu_new
    state.u = u_new
    return u_new


def update_u(u_prev, tau, I, D, params: SolverParams, state: SolveState | None = None, gamma=None):
    """Coupled sparse volume update.

    Takes ``params.u_steps`` accelerated steps on
    ``1/2|Au - tau|^2 + lam/2 |u - P^dagger(I, D)|^2 + gamma |u|_1`` starting
    from ``state`` (or a fresh state at ``u_prev``). ``D`` may be a
    ``DepthMap`` or the real-valued working depth field.
    """
    grid = u_prev.grid
    op = get_operator(grid, params.compensate)
    if state is None:
        state = SolveState.initial(u_prev.data.copy(), _data(tau), grid)
    if gamma is None:
        gamma = gamma_from(params.sigma, tau)
    idx = D.idx if isinstance(D, DepthMap) else depth_from_real(D, grid.nz)
    ival = I.val if isinstance(I, AlbedoMap) else np.asarray(I, dtype=float)
    prior = back_project_arrays(ival, idx, grid.nz)
    step = _u_step_size(grid, params)
    for _ in range(params.u_steps):
        u_step(state, op.forward, op.adjoint, _data(tau), prior, params.lam, gamma, step, params.nonneg_clamp)
    return VoxelAlbedo(grid, state.u)


def _u_step_size(grid, params):
    if params.step_t != AUTO:
        return float(params.step_t)
    L = cached_op_norm(grid, iters=params.power_iters, compensated=params.compensate) ** 2
    return 1.0 / (L + params.lam)


# ------------------------------------------------------------------ drivers


def fista_l1(forward, adjoint, b, gamma, step, iters, shape, nonneg=False):
    """FISTA for ``1/2 |F u - b|^2 + gamma |u|_1`` from ``u = 0``."""
    u0 = np.zeros(shape)
    state = SolveState(u=u0, tau=b, D=None, I=None, lam1=None, lam2=None, lam3=None, ubar=u0.copy())
    for _ in range(iters):
        u_step(state, forward, adjoint, b, None, 0.0, gamma, step, nonneg)
    return state.u


def _init_u_array(tau0, m, params, grid, iters):
    """``tau0`` must already be in the solver's (possibly compensated) scale."""
    op = get_operator(grid, params.compensate)
    sel = m[:, :, None]
    fwd = lambda u: op.forward(u) * sel  # noqa: E731
    adj = lambda t: op.adjoint(t * sel)  # noqa: E731
    gamma = gamma_from(params.sigma, tau0)
    if params.step_t == AUTO:
        step = 1.0 / cached_op_norm(grid, mask=m, iters=params.power_iters, compensated=params.compensate) ** 2
    else:
        step = float(params.step_t)
    b = tau0 * sel
    return fista_l1(fwd, adj, b, gamma, step, iters, grid.volume_shape, params.nonneg_clamp)


def init_u(tau0, mask, params: SolverParams, grid: SceneGrid, iters=None) -> VoxelAlbedo:
    """Sparse initialization from the scanned positions only."""
    iters = params.fista_iters if iters is None else iters
    u = _init_u_array(_solver_data(tau0, grid, params), _mask(mask, grid), params, grid, iters)
    return VoxelAlbedo(grid, u)


def _check(u, u_old, k):
    if not np.all(np.isfinite(u)):
        raise SolverDivergence(f"non-finite volume at outer iteration {k}")
    rc = rel_change(u, u_old)
    if rc > DIVERGENCE_RATIO:
        raise SolverDivergence(f"relative change {rc:.3g} exceeds {DIVERGENCE_RATIO:g} at outer iteration {k}")
    return rc


def _solver_data(tau0, grid, params):
    tau0 = _data(tau0)
    if tau0.shape != grid.transient_shape:
        raise GridError(f"transient shape {tau0.shape} does not match grid {grid.transient_shape}")
    return compensate(tau0, grid) if params.compensate else tau0


def energy_at(u, tau0, mask, params: SolverParams, grid: SceneGrid) -> float:
    """E1 of a volume with ``tau`` at its closed-form optimum, in the solver scale."""
    tau0 = _solver_data(tau0, grid, params)
    m = _mask(mask, grid)
    u = _data(u)
    Au = get_operator(grid, params.compensate).forward(u)
    tau = tau_step(Au, tau0, m, params.rho)
    return energy_e1(Au, tau, tau0, m, params.rho, gamma_from(params.sigma, tau0), u)


def _run(tau0, mask, params: SolverParams, grid: SceneGrid, geometry=True, callback=None):
    tau0 = _solver_data(tau0, grid, params)
    m = _mask(mask, grid)
    op = get_operator(grid, params.compensate)
    gamma = gamma_from(params.sigma, tau0)
    report = SolveReport(init_iters=params.fista_iters)

    u0 = _init_u_array(tau0, m, params, grid, params.fista_iters)
    Au = op.forward(u0)
    tau = tau_step(Au, tau0, m, params.rho)
    report.e1_init = energy_e1(Au, tau, tau0, m, params.rho, gamma, u0)
    state = SolveState.initial(u0, tau, grid)

    lam = params.lam if geometry else 0.0
    if params.step_t == AUTO:
        step = 1.0 / (cached_op_norm(grid, iters=params.power_iters, compensated=params.compensate) ** 2 + lam)
    else:
        step = float(params.step_t)
    prior = None

    for k in range(params.k_max):
        t0 = time.perf_counter()
        state.tau = tau_step(Au, tau0, m, params.rho)
        t1 = time.perf_counter()
        d_obj = i_obj = float("nan")
        t2 = t3 = t1
        if geometry:
            if params.reset_multipliers:
                state.lam1[:] = 0.0
                state.lam2[:] = 0.0
                state.lam3[:] = 0.0
            I_target, idx = project_arrays(state.u, params.p)
            dres = update_D(state.D, idx.astype(float), params, state.lam1, state.lam2)
            state.D, state.lam1, state.lam2 = dres.D, dres.lam1, dres.lam2
            d_obj = dres.objective
            t2 = time.perf_counter()
            ires = update_I(state.I, I_target, params, state.lam3)
            state.I, state.lam3 = ires.I, ires.lam3
            i_obj = ires.objective
            t3 = time.perf_counter()
            prior = back_project_arrays(state.I, depth_from_real(state.D, grid.nz), grid.nz)
        u_old = state.u
        for _ in range(params.u_steps):
            u_step(state, op.forward, op.adjoint, state.tau, prior, lam, gamma, step, params.nonneg_clamp)
        rc = _check(state.u, u_old, k + 1)
        Au = op.forward(state.u)
        t4 = time.perf_counter()
        report.e1.append(energy_e1(Au, state.tau, tau0, m, params.rho, gamma, state.u))
        report.d_obj.append(d_obj)
        report.i_obj.append(i_obj)
        report.rel_change.append(rc)
        report.timings.append({"tau": t1 - t0, "D": t2 - t1, "I": t3 - t2, "u": t4 - t3})
        if callback is not None:
            callback(k + 1, state, report)
        log.debug("iter %d  E1=%.6g  rel=%.3g", k + 1, report.e1[-1], rc)
    return state, report


def _outputs(state, grid, params, report):
    u = VoxelAlbedo(grid, state.u)
    albedo, idx = project_arrays(state.u, params.p)
    return u, AlbedoMap(np.clip(albedo, 0.0, None)), DepthMap(idx, grid.nz), report


def slct_reconstruct(tau0, mask, params: SolverParams, grid: SceneGrid, callback=None):
    """Full joint reconstruction.

    Returns ``(VoxelAlbedo, AlbedoMap, DepthMap, SolveReport)``; the maps are
    the projection of the final volume.
    """
    state, report = _run(tau0, mask, params, grid, geometry=True, callback=callback)
    return _outputs(state, grid, params, report)


def inpaint_reconstruct(tau0, mask, params: SolverParams, grid: SceneGrid, callback=None):
    """Sparse reconstruction with transient inpainting but no surface prior."""
    state, report = _run(tau0, mask, params, grid, geometry=False, callback=callback)
    return _outputs(state, grid, params, report)


def l1_baseline(tau0, mask, params: SolverParams, grid: SceneGrid, inpaint=False) -> VoxelAlbedo:
    """L1-only baseline given the same number of proximal-gradient steps.

    With ``inpaint=True`` the transient inpainting loop is added (still no
    surface prior).
    """
    if inpaint:
        return inpaint_reconstruct(tau0, mask, params, grid)[0]
    budget = params.fista_iters + params.k_max * params.u_steps
    return init_u(tau0, mask, params, grid, iters=budget)


class CGResult(NamedTuple):
    u: np.ndarray
    objective: list
    converged: bool


def cgls(forward, adjoint, b, mu, shape, iters=50, tol=1e-6):
    """CGLS for ``min |F u - b|^2 + mu |u|^2``.

    ``objective`` logs the regularized residual after every iteration, which
    CGLS decreases monotonically in exact arithmetic.
    """
    x = np.zeros(shape)
    r = b.copy()
    s = adjoint(r)
    p = s.copy()
    gamma = float(np.sum(s * s))
    gamma0 = gamma
    hist = [float(np.sum(r * r))]
    if gamma0 == 0.0:
        return CGResult(x, hist, True)
    converged = False
    for _ in range(iters):
        q = forward(p)
        delta = float(np.sum(q * q)) + mu * float(np.sum(p * p))
        a = gamma / delta
        x += a * p
        r -= a * q
        s = adjoint(r) - mu * x
        gamma_new = float(np.sum(s * s))
        hist.append(float(np.sum(r * r)) + mu * float(np.sum(x * x)))
        if gamma_new <= tol**2 * gamma0:
            converged = True
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return CGResult(x, hist, converged)


def lct_baseline(tau0, grid: SceneGrid, mu=None, iters=50, tol=1e-6, compensated=True, return_log=False):
    """Tikhonov-regularized least squares by CGLS on the full transient.

    ``mu`` defaults to ``1e-3 * ||A||^2``. Unscanned positions of a sparse
    transient are simply zero.
    """
    op = get_operator(grid, compensated)
    tau0 = _data(tau0)
    if compensated:
        tau0 = compensate(tau0, grid)
    if mu is None:
        mu = 1e-3 * cached_op_norm(grid, compensated=compensated) ** 2
    res = cgls(op.forward, op.adjoint, tau0, float(mu), grid.volume_shape, iters, tol)
    if not res.converged:
        warnings.warn(f"CGLS stopped after {iters} iterations without reaching tol={tol:g}", RuntimeWarning, stacklevel=2)
    u = VoxelAlbedo(grid, res.u)
    return (u, res.objective) if return_log else u
