"""
Acceptance criteria, one test each. Every test appends a PASS/FAIL line to the
terminal summary before asserting, so the report is complete even when a
criterion fails.
"""

import time
from math import comb

import cvxpy as cp
import numpy as np
import pytest

from tvtrack.coeffs import (
    BasisSpec,
    linear_coefficients,
    norm_profile,
    regression_coefficients,
    reproduction_residual,
)
from tvtrack.config import from_dict, scaled_conditioning
from tvtrack.corrector import GradientOracle, ProxSpec, prox_gradient
from tvtrack.harness import MethodSpec, fit_rate, run_grid, run_sharp, windowed_error
from tvtrack.predictor import HistoryBuffer, linear_rolling_buffer, predict, predict_linear_rolling, project_A
from tvtrack.problems import (
    LassoProblem,
    TrajectorySpec,
    empirical_optimum_deviation,
    make_rng,
    sample_batch,
)


def report(log, num, title, ok, detail):
    log.append(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")


def grid_config(h, lam=1.0, seeds=5, methods=("tvsgd", "sharp:p=2", "sharp:p=3")):
    return from_dict({
        "problem": {"d": 5, "d_y": 10, "lambda": lam, "conditioning": {"policy": "scaled"},
                    "x0": [2, 0, 0, 0, 0]},
        "h": list(h),
        "seeds": list(range(seeds)),
        "methods": list(methods),
        "c_max": 30,
        "t_end": 5,
        "window": [4, 5],
        "batch": 1,
    })


def test_coefficient_identities(acceptance_log):
    start = time.perf_counter()
    worst_res = worst_closed = worst_sharp = 0.0
    for p in range(1, 6):
        basis = BasisSpec(p)
        for n in range(p, 41):
            alpha = regression_coefficients(basis, n)
            worst_res = max(worst_res, reproduction_residual(alpha, basis))
            if p == 2:
                i = np.arange(1, n + 1)
                closed = (4 * n + 2 - 6 * i) / (n * (n - 1))
                worst_closed = max(worst_closed, np.abs(alpha.alpha - closed).max())
        ref = np.array([(-1) ** (i - 1) * comb(p, i) for i in range(1, p + 1)], dtype=float)
        worst_sharp = max(worst_sharp, np.max(np.abs(regression_coefficients(basis, p).alpha - ref) / np.abs(ref)))
    elapsed = time.perf_counter() - start
    ok = worst_res <= 1e-8 and worst_closed <= 1e-8 and worst_sharp <= 1e-6 and elapsed < 1
    report(acceptance_log, 1, "coefficient identities", ok,
           f"residual {worst_res:.2e} (<=1e-8), closed form {worst_closed:.2e} (<=1e-8), "
           f"binomial rel {worst_sharp:.2e} (<=1e-6), {elapsed:.2f}s (<1s)")
    assert ok


def test_norm_asymptotics(acceptance_log):
    start = time.perf_counter()
    l2, l1 = norm_profile(regression_coefficients(BasisSpec(2), 1000))
    elapsed = time.perf_counter() - start
    ok = 3.8 <= 1000 * l2 ** 2 <= 4.2 and 1.60 <= l1 <= 1.72 and elapsed < 1
    report(acceptance_log, 2, "norm asymptotics p=2 n=1000", ok,
           f"n*||a||^2 = {1000 * l2 ** 2:.6f} in [3.8, 4.2], ||a||_1 = {l1:.6f} in [1.60, 1.72], {elapsed:.2f}s")
    assert ok


def test_rolling_predictor_equivalence(acceptance_log):
    start = time.perf_counter()
    g = np.random.default_rng(3)
    n, d = 20, 5
    buf = linear_rolling_buffer(g.normal(size=d), n)
    alpha = linear_coefficients(n)
    worst = 0.0
    for _ in range(10_000):
        rolled = predict_linear_rolling(buf, n)
        direct = predict(buf, alpha)
        worst = max(worst, np.linalg.norm(rolled - direct) / np.linalg.norm(direct))
        buf.push(g.normal(size=d))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-7 and elapsed < 1
    report(acceptance_log, 3, "rolling predictor equivalence", ok,
           f"max rel deviation {worst:.2e} (<=1e-7) over 1e4 steps, {elapsed:.2f}s (<1s)")
    assert ok


def _conic_projection(v, D):
    a = cp.Variable(v.size)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(a - v)), [cp.sum(a) == 1, cp.norm(a, 2) <= D])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    assert prob.status == cp.OPTIMAL
    return a.value


def test_projection_oracle(acceptance_log):
    start = time.perf_counter()
    g = np.random.default_rng(4)
    worst = worst_idem = 0.0
    for _ in range(200):
        n = int(g.integers(2, 7))
        D = float(g.choice([1.0, 2.0]))
        v = g.normal(scale=3, size=n)
        a = project_A(v, D)
        worst = max(worst, np.abs(a - _conic_projection(v, D)).max())
        worst_idem = max(worst_idem, np.abs(project_A(a, D) - a).max())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and worst_idem <= 1e-10 and elapsed < 10
    report(acceptance_log, 4, "projection onto A", ok,
           f"max dev from conic solver {worst:.2e} (<=1e-6), idempotence {worst_idem:.2e} (<=1e-10), "
           f"{elapsed:.2f}s (<10s)")
    assert ok


def _exact_lasso(Q, c, lam):
    """Conic solve for the sign pattern, then the exact linear solve on that pattern."""
    x = cp.Variable(c.size)
    cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(Q)) - c @ x + lam * cp.norm1(x))).solve(
        solver=cp.CLARABEL)
    s = np.where(np.abs(x.value) > 1e-6, np.sign(x.value), 0.0)
    on = s != 0
    out = np.zeros(c.size)
    out[on] = np.linalg.solve(Q[np.ix_(on, on)], c[on] - lam * s[on])
    # KKT on the zero set confirms the pattern
    g = Q @ out - c
    assert np.all(np.abs(g[~on]) <= lam + 1e-9)
    return out


def test_correction_contraction(acceptance_log):
    start = time.perf_counter()
    worst_ratio = 0.0
    worst_rise = -np.inf
    bound = 1 - 0.1
    for seed in range(20):
        L = 4.0
        prob = LassoProblem.generate(10, 5, L / 10, L, seed, lam=1.0)
        rng = make_rng(seed)
        ybar = sample_batch(prob, 1.0, 1, rng).mean(axis=0)
        c = prob.A.T @ ybar
        oracle = GradientOracle.quadratic(prob.gram, c, mu=prob.mu, L=prob.L)
        psi = ProxSpec.l1(prob.lam)
        x_star = _exact_lasso(prob.gram, c, prob.lam)
        _, path = prox_gradient(oracle, psi, rng.normal(scale=3, size=5), 1 / prob.L, 30, trace=True)
        dist = [np.linalg.norm(x - x_star) for x in path]
        F = [oracle.value(x) + psi.value(x) for x in path]
        for a, b in zip(dist, dist[1:]):
            if a > 1e-6:
                worst_ratio = max(worst_ratio, b / a)
        worst_rise = max(worst_rise, max(b - a for a, b in zip(F, F[1:])))
    elapsed = time.perf_counter() - start
    ok = worst_ratio <= bound + 1e-9 and worst_rise <= 1e-12 and elapsed < 5
    report(acceptance_log, 5, "correction contraction", ok,
           f"worst per-step ratio {worst_ratio:.6f} (<= {bound} + 1e-9), largest objective rise "
           f"{worst_rise:.2e} (<=1e-12), {elapsed:.2f}s (<5s)")
    assert ok


def test_empirical_optimum_bound(acceptance_log):
    start = time.perf_counter()
    mu, L = scaled_conditioning(0.01)
    prob = LassoProblem.generate(10, 5, mu, L, seed=0, lam=0.0)
    est = {}
    bound = {}
    for b in (1, 4, 16):
        est[b] = empirical_optimum_deviation(prob, 4.5, b, 2000, make_rng(0, 100 + b))
        bound[b] = prob.sigma1_sq / (prob.mu ** 2 * b)
    elapsed = time.perf_counter() - start
    ratio = est[16] / est[1]
    ok = all(est[b] <= bound[b] for b in est) and ratio <= 0.35 and elapsed < 30
    detail = ", ".join(f"b={b}: {est[b]:.4f} <= {bound[b]:.4f}" for b in est)
    report(acceptance_log, 6, "empirical-optimum bound", ok,
           f"{detail}; b16/b1 = {ratio:.4f} (<=0.35), {elapsed:.2f}s (<30s)")
    assert ok


def test_polynomial_exactness_end_to_end(acceptance_log):
    start = time.perf_counter()
    h = 0.01
    mu, L = scaled_conditioning(h)
    traj = TrajectorySpec(5, "affine", offset=(1.0, -0.5, 0.25, 0.0, 2.0), velocity=(0.4, 0.1, -0.3, 0.2, -0.05))
    prob = LassoProblem.generate(10, 5, mu, L, seed=0, lam=0.0, trajectory=traj, noise_scale=0.0)
    rec = run_sharp(prob, MethodSpec.sharp_poly(2, c_max=60), h, 5.0, seed=0)
    err = windowed_error(rec)
    elapsed = time.perf_counter() - start
    ok = err <= 1e-6 and elapsed < 5
    report(acceptance_log, 7, "polynomial exactness end to end", ok,
           f"windowed prediction error {err:.2e} (<=1e-6), n={rec.n}, {elapsed:.2f}s (<5s)")
    assert ok


@pytest.mark.slow
def test_ordering_at_desk_scale(acceptance_log):
    start = time.perf_counter()
    res = run_grid(grid_config([0.1, 0.05, 0.02, 0.01]))
    elapsed = time.perf_counter() - start
    e = {(a.method, a.h): a.avg_err for a in res.aggregates}
    beats = {h: e[("sharp:p=2", h)] < e[("tvsgd", h)] for h in (0.02, 0.01)}
    p2_vs_p3 = e[("sharp:p=2", 0.01)] <= e[("sharp:p=3", 0.01)]
    ok = not res.failures and all(beats.values()) and p2_vs_p3 and elapsed < 180
    detail = "; ".join(
        f"h={h}: p2 {e[('sharp:p=2', h)]:.4f} vs tvsgd {e[('tvsgd', h)]:.4f} vs p3 {e[('sharp:p=3', h)]:.4f}"
        for h in (0.1, 0.05, 0.02, 0.01))
    report(acceptance_log, 8, "ordering (p2 < tvsgd at h=0.02, 0.01; p2 <= p3 at 0.01)", ok,
           f"{detail}; {elapsed:.1f}s (<180s)")
    assert not res.failures
    assert beats[0.02], f"p=2 not below TVSGD at h=0.02: {detail}"
    assert beats[0.01], f"p=2 not below TVSGD at h=0.01: {detail}"
    assert p2_vs_p3
    assert elapsed < 180


@pytest.mark.slow
def test_rate_check(acceptance_log):
    hs = [0.1, 0.05, 0.02, 0.01, 0.005]
    start = time.perf_counter()
    res = run_grid(grid_config(hs, methods=("tvsgd", "sharp:p=2")))
    elapsed = time.perf_counter() - start
    s_p2 = fit_rate(res.series("sharp:p=2"))
    s_tv = fit_rate(res.series("tvsgd"))
    positive = s_p2 > 0 and s_tv > 0
    in_bracket = 0.25 <= s_p2 <= 0.55 and 0.15 <= s_tv <= 0.50
    ok = not res.failures and positive and in_bracket and elapsed < 300
    report(acceptance_log, 9, "rate check (lambda=1)", ok,
           f"slope p2 {s_p2:.4f} (target [0.25, 0.55]), tvsgd {s_tv:.4f} (target [0.15, 0.50]), "
           f"{elapsed:.1f}s (<300s)")

    res0 = run_grid(grid_config(hs, lam=0.0, methods=("tvsgd", "sharp:p=2")))
    s0_p2 = fit_rate(res0.series("sharp:p=2"))
    s0_tv = fit_rate(res0.series("tvsgd"))
    acceptance_log.append(f"[INFO]  9. rate check (lambda=0, informational): slope p2 {s0_p2:.4f}, "
                          f"tvsgd {s0_tv:.4f}; positive: {s0_p2 > 0 and s0_tv > 0}")
    assert not res.failures
    assert positive, (s_p2, s_tv)
    assert in_bracket, (s_p2, s_tv)
    assert elapsed < 300
    assert s0_p2 > 0 and s0_tv > 0


@pytest.mark.slow
def test_gradient_accounting(acceptance_log):
    cfg = grid_config([0.1, 0.05, 0.02], seeds=2, methods=("tvsgd", "sharp:p=2", "sharp:p=3", "sharp:online"))
    res = run_grid(cfg)
    expected = {"tvsgd": 1, "sharp:p=2": 30, "sharp:p=3": 30, "sharp:online": 31}
    seen = {}
    for c in res.cells:
        seen.setdefault(c.method, set()).add(c.grad_calls_per_round)
    ok = not res.failures and seen == {m: {v} for m, v in expected.items()}
    detail = ", ".join(f"{m}: {sorted(v)}" for m, v in seen.items())
    report(acceptance_log, 10, "gradient accounting", ok,
           f"calls per round {detail} (poly = c_max = 30, tvsgd = 1, online = c_max + 1), "
           f"{len(res.cells)} cells")
    assert ok
