"""Acceptance criteria 1-11.

Each test records a single PASS/FAIL line (see the ``acceptance`` fixture)
and then asserts, so a criterion that is not met shows up both in the
summary block and as a failed test.
"""

import math
import time
import warnings

import numpy as np
import pytest

from slct.cli import main as cli_main
from slct.diffprox import (
    div2_2d,
    div2d,
    grad2d,
    hess_inner,
    hessian2d,
    shrink_frob,
    shrink_vec,
    solve_screened_biharmonic,
    solve_screened_poisson,
)
from slct.forward import add_noise, get_operator, render_transient, synth_scene
from slct.grid import ScanMask, SolverParams, VoxelAlbedo, make_grid
from slct.metrics import max_intensity_projection as mip
from slct.metrics import psnr, rel_error, ssim
from slct.solvers import inpaint_reconstruct, l1_baseline, lct_baseline, slct_reconstruct, update_tau

from oracles import dense_screened_systems, naive_render, ray_bruteforce

pytestmark = pytest.mark.slow

# sigma and lambda tuned once on sphere_cap seed 1, reused unchanged below; p is the default
SIGMA = 3e-4
LAM = 5e4
P = 4
NOISE = 0.02
SEEDS = (1, 2, 3)


def acceptance_grid():
    return make_grid(32, 32, 64, 128, 1.0, 0.008)


def params(**kw):
    base = dict(sigma=SIGMA, lam=LAM, p=P)
    base.update(kw)
    return SolverParams(**base)


def noisy_scan(tau, mask, seed):
    return add_noise(tau, NOISE * tau.max(), 0.0, seed) * mask.mask[:, :, None]


# --------------------------------------------------------------- 1 to 5


def test_c01_adjoint_suite(acceptance):
    t0 = time.perf_counter()
    worst_a = worst_g = worst_h = 0.0
    r = np.random.default_rng(101)
    for nt in (32, 64):
        g = make_grid(16, 16, 32, nt, 1.0, 0.016 if nt == 32 else 0.008)
        ops = (get_operator(g), get_operator(g, True))
        for i in range(50):
            op = ops[i % 2]
            u = r.normal(size=g.volume_shape)
            tau = r.normal(size=g.transient_shape)
            lhs, rhs = np.vdot(op.forward(u), tau), np.vdot(u, op.adjoint(tau))
            worst_a = max(worst_a, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    for _ in range(50):
        f = r.normal(size=(16, 16))
        v = r.normal(size=(2, 16, 16))
        w = r.normal(size=(3, 16, 16))
        lhs, rhs = float(np.sum(grad2d(f) * v)), -float(np.sum(f * div2d(v)))
        worst_g = max(worst_g, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
        lhs, rhs = hess_inner(hessian2d(f), w), float(np.sum(f * div2_2d(w)))
        worst_h = max(worst_h, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    elapsed = time.perf_counter() - t0
    ok = worst_a <= 1e-10 and worst_g <= 1e-12 and worst_h <= 1e-12 and elapsed < 30
    acceptance(1, ok, f"A {worst_a:.1e} <= 1e-10, grad/div {worst_g:.1e}, hess/div2 {worst_h:.1e} <= 1e-12, {elapsed:.1f}s < 30s")
    assert ok


def test_c02_operator_oracle(acceptance):
    g = make_grid(8, 8, 16, 32, 1.0, 0.02)
    r = np.random.default_rng(102)
    worst, same_support = 0.0, True
    for _ in range(10):
        u = r.uniform(0, 1, g.volume_shape) * (r.uniform(size=g.volume_shape) < 0.5)
        fast = render_transient(VoxelAlbedo(g, u)).data
        slow = naive_render(u, g)
        same_support &= bool(np.array_equal(fast != 0, slow != 0))
        worst = max(worst, float(np.max(np.abs(fast - slow)) / np.max(np.abs(slow))))
    # identical bins; values differ only by floating-point summation order
    ok = same_support and worst <= 1e-13
    acceptance(2, ok, f"identical bin support={same_support}, max rel diff {worst:.1e} (summation order only)")
    assert ok


def test_c03_prox_oracles(acceptance):
    r = np.random.default_rng(103)
    dot = lambda x, y: float(np.dot(x, y))  # noqa: E731
    wts = np.array([1.0, 2.0, 1.0])
    frob = lambda x, y: float(np.sum(wts * x * y))  # noqa: E731
    ev = ef = 0.0
    for _ in range(1000):
        a, xi = r.normal(size=2) * r.uniform(0, 2), r.uniform(0, 2)
        ev = max(ev, np.max(np.abs(shrink_vec(a[:, None], xi)[:, 0] - ray_bruteforce(a, xi, dot))))
        w, xi = r.normal(size=3) * r.uniform(0, 2), r.uniform(0, 2)
        ef = max(ef, np.max(np.abs(shrink_frob(w[:, None], xi)[:, 0] - ray_bruteforce(w, xi, frob))))
    ok = ev <= 1e-4 and ef <= 1e-4
    acceptance(3, ok, f"shrink_vec max err {ev:.1e}, shrink_frob max err {ef:.1e} (grid 1e-4, 1000 cases each)")
    assert ok


def test_c04_fft_solver_oracle(acceptance):
    G, HtH = dense_screened_systems(8, 8)
    eye = np.eye(64)
    r = np.random.default_rng(104)
    eb = ep = 0.0
    for _ in range(20):
        rhs = r.normal(size=(8, 8))
        r1, r2, r3 = r.uniform(0.01, 20.0, size=3)
        ref = np.linalg.solve(eye + r1 * G + r2 * HtH, rhs.ravel()).reshape(8, 8)
        eb = max(eb, np.max(np.abs(solve_screened_biharmonic(rhs, r1, r2) - ref)))
        ref = np.linalg.solve(eye + r3 * G, rhs.ravel()).reshape(8, 8)
        ep = max(ep, np.max(np.abs(solve_screened_poisson(rhs, r3) - ref)))
    ok = eb <= 1e-10 and ep <= 1e-10
    acceptance(4, ok, f"biharmonic max err {eb:.1e}, poisson max err {ep:.1e} <= 1e-10")
    assert ok


def test_c05_tau_optimality(acceptance):
    g = make_grid(16, 16, 32, 64, 1.0, 0.008)
    op = get_operator(g)
    r = np.random.default_rng(105)
    wins = 0
    for _ in range(100):
        u = VoxelAlbedo(g, r.uniform(0, 1, g.volume_shape) * (r.uniform(size=g.volume_shape) < 0.05))
        tau0 = r.normal(size=g.transient_shape) * 1e3
        m = r.uniform(size=g.map_shape) < r.uniform(0.1, 0.9)
        m[0, 0] = True
        rho = r.uniform(0.1, 50)
        tau = update_tau(u, tau0, ScanMask(m), rho).data
        Au = op.forward(u.data)
        sel = m[:, :, None]
        obj = lambda t: 0.5 * np.sum((Au - t) ** 2) + 0.5 * rho * np.sum((sel * (t - tau0)) ** 2)  # noqa: E731
        d = r.normal(size=g.transient_shape) * 1e-3 * (np.abs(tau).max() + 1)
        f0 = obj(tau)
        wins += obj(tau + d) > f0 and obj(tau - d) > f0
    acceptance(5, wins == 100, f"perturbation increased the objective in {wins}/100 trials")
    assert wins == 100


# ------------------------------------------------------------ 6, 8, 11


@pytest.fixture(scope="module")
def ablation():
    """Setups I, II and SLCT on the sphere cap for every seed (shared by 6, 8, 11)."""
    g = acceptance_grid()
    gt = synth_scene("sphere_cap", g)
    ref = mip(gt)
    tau = get_operator(g).forward(gt.data)
    mask = ScanMask.every_k(g, 4)
    rows = []
    t_total = time.perf_counter()
    for seed in SEEDS:
        data = noisy_scan(tau, mask, seed)
        u1 = l1_baseline(data, mask, params(lam=0.0), g)
        u2 = inpaint_reconstruct(data, mask, params(lam=0.0), g)[0]
        t0 = time.perf_counter()
        u3, _, _, rep = slct_reconstruct(data, mask, params(), g)
        t_slct = time.perf_counter() - t0
        rows.append(
            dict(
                seed=seed,
                I=psnr(ref, mip(u1)),
                II=psnr(ref, mip(u2)),
                III=psnr(ref, mip(u3)),
                ssim_I=ssim(ref, mip(u1)),
                ssim_III=ssim(ref, mip(u3)),
                rel=rep.rel_change[-1],
                iters=rep.iterations,
                t_slct=t_slct,
            )
        )
    return dict(grid=g, gt=gt, tau=tau, mask=mask, rows=rows, total=time.perf_counter() - t_total)


def test_c06_ablation_ordering(acceptance, ablation):
    rows = ablation["rows"]
    good = [r["III"] >= r["II"] and r["III"] >= r["I"] + 0.3 for r in rows]
    detail = "; ".join(f"seed {r['seed']}: I {r['I']:.2f} II {r['II']:.2f} III {r['III']:.2f} dB" for r in rows)
    ok = sum(good) >= 2 and ablation["total"] < 300
    acceptance(6, ok, f"{sum(good)}/3 seeds with III >= II and III >= I + 0.3 ({detail}); {ablation['total']:.0f}s < 300s")
    assert ok


def test_c08_convergence_telemetry(acceptance, ablation):
    rels = [r["rel"] for r in ablation["rows"]]
    iters = {r["iters"] for r in ablation["rows"]}
    g, tau, mask = ablation["grid"], ablation["tau"], ablation["mask"]
    rep = slct_reconstruct(tau * mask.mask[:, :, None], mask, params(), g)[3]
    e0, e1 = rep.e1_init, rep.e1[-1]
    ok = iters == {120} and max(rels) < 0.05 and e1 <= e0
    acceptance(
        8,
        ok,
        f"rel change at k=120: {', '.join(f'{x:.4f}' for x in rels)} (< 0.05); noiseless E1 {e0:.4g} -> {e1:.4g} (final <= initial required)",
    )
    assert ok


def _cube(n):
    return make_grid(n, n, n, 2 * n, 1.0, 1.0 / n)


def _timed_slct(g, k_max=120):
    gt = synth_scene("sphere_cap", g)
    tau = get_operator(g).forward(gt.data)
    mask = ScanMask.every_k(g, 4)
    data = tau * mask.mask[:, :, None]
    slct_reconstruct(data, mask, params(k_max=2, fista_iters=2), g)  # warm caches
    t0 = time.perf_counter()
    slct_reconstruct(data, mask, params(k_max=k_max), g)
    return time.perf_counter() - t0


def test_c11_runtime_envelope(acceptance, ablation):
    t_abs = max(r["t_slct"] for r in ablation["rows"])
    t16 = _timed_slct(_cube(16))
    t32 = _timed_slct(_cube(32))
    n3 = lambda n: n**3 * math.log(n**3)  # noqa: E731
    predicted = n3(32) / n3(16)
    ratio = t32 / t16
    in_band = 1 / 1.5 <= ratio / predicted <= 1.5
    ok = t_abs < 60 and in_band
    acceptance(
        11,
        ok,
        f"32x32x64 x120 its: {t_abs:.1f}s < 60s; 16^3 {t16:.2f}s -> 32^3 {t32:.2f}s, ratio {ratio:.1f} vs N^3 log N {predicted:.1f} (band x/1.5..x1.5)",
    )
    assert ok


# ----------------------------------------------------------------------- 7


def test_c07_sparse_scan_robustness(acceptance):
    g = acceptance_grid()
    gt = synth_scene("letter_T", g)
    ref = mip(gt)
    tau = get_operator(g).forward(gt.data)
    votes_mono = votes_lct = 0
    details = []
    for seed in SEEDS:
        full = add_noise(tau, NOISE * tau.max(), 0.0, seed)
        scores = []
        for k in (1, 2, 4):
            m = ScanMask.every_k(g, k)
            u = slct_reconstruct(full * m.mask[:, :, None], m, params(), g)[0]
            scores.append(psnr(ref, mip(u)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lct = psnr(ref, mip(lct_baseline(full * m.mask[:, :, None], g)))
        mono = scores[0] >= scores[1] >= scores[2]
        votes_mono += mono
        votes_lct += scores[2] >= lct + 1.0
        details.append(f"seed {seed}: " + "/".join(f"{s:.2f}" for s in scores) + f" lct {lct:.2f}")
    ok = votes_mono >= 2 and votes_lct >= 2
    acceptance(7, ok, f"monotone {votes_mono}/3, beats LCT by 1 dB at every_4 {votes_lct}/3 ({'; '.join(details)})")
    assert ok


# ----------------------------------------------------------------- 9, 10


def test_c09_metric_sanity(acceptance):
    r = np.random.default_rng(109)
    x = r.uniform(size=(32, 32))
    checks = {
        "psnr(0, 0.1) == 20": psnr(np.zeros((16, 16)), np.full((16, 16), 0.1)) == pytest.approx(20.0, abs=1e-12),
        "ssim(x, x) == 1": ssim(x, x) == pytest.approx(1.0, abs=1e-12),
        "rel(x, x) == 0": rel_error(x, x) == 0.0,
        "rel(0, x) == 1": rel_error(np.zeros_like(x), x) == pytest.approx(1.0),
        "rel(2x, x) == 1": rel_error(2 * x, x) == pytest.approx(1.0),
        "psnr(x, x) == inf": psnr(x, x) == math.inf,
    }
    ok = all(checks.values())
    acceptance(9, ok, ", ".join(f"{k}: {'ok' if v else 'no'}" for k, v in checks.items()))
    assert ok


def test_c10_cli_determinism(acceptance, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"sigma = {SIGMA}\nlambda = {LAM}\np = {P}\nnz = 32\n")

    def pipeline(root):
        sim, rec = root / "sim", root / "rec"
        assert cli_main(["simulate", "--scene", "sphere_cap", "--grid", "16,16,32,64,1.0,0.008", "--noise", "0.02", "--mask", "every_k:2", "--seed", "7", "--out", str(sim)]) == 0
        assert cli_main(["reconstruct", "--input", str(sim / "transient.ntra"), "--mask", str(sim / "mask.pgm"), "--config", str(cfg), "--method", "slct", "--out", str(rec)]) == 0
        files = {}
        for d in (sim, rec):
            for p in sorted(d.iterdir()):
                if p.name != "timings.txt":
                    files[f"{d.name}/{p.name}"] = p.read_bytes()
        return files

    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    same = [k for k in a if a[k] == b.get(k)]
    ok = a.keys() == b.keys() and len(same) == len(a)
    acceptance(10, ok, f"{len(same)}/{len(a)} artifacts byte-identical across two simulate+reconstruct runs (timings.txt excluded)")
    assert ok
