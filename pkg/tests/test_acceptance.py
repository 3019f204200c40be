"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the PASS/FAIL lines are
written straight to the terminal even when output capture is on.
"""

import time
from functools import lru_cache

import numpy as np
import pytest
from scipy import stats

from epf.diagnostics import (
    example_log_density,
    example_remainder_epsilon,
    example_taylor,
    gibbs_density_exact,
    kl_bound_check,
    kl_sweep,
    make_grid,
    posterior_moments,
)
from epf.filters import run_epf, run_liu_west, run_sir_augmented, run_storvik
from epf.models import make_cauchy, make_linear, make_sin, make_star, simulate
from epf.samplers import SamplerConfig, rwmh_batch, slice_batch
from epf.suffstats import (
    GaussianSuffStat,
    LogPolyDensity,
    gaussian_update,
    gaussian_update_as_kalman,
    logpoly_eval,
    logpoly_gaussian_params,
    logpoly_update,
)

SEEDS = range(10)
T = 1000


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


@lru_cache(maxsize=None)
def sin_data(seed):
    return simulate(make_sin(), T, seed)


@lru_cache(maxsize=None)
def sin_epf(seed):
    start = time.perf_counter()
    out = run_epf(make_sin(), sin_data(seed).ys, 1000, 7, SamplerConfig(kind="slice"), seed)
    return out.theta_mean[-1, 0], out.theta_std[-1, 0], time.perf_counter() - start


def test_criterion_01_sin_convergence(report):
    runs = [sin_epf(s) for s in SEEDS]
    good = sum(abs(m - 0.7) < 0.1 and sd < 0.1 for m, sd, _ in runs)
    slowest = max(r[2] for r in runs)
    ok = good >= 8 and slowest < 60
    means = ", ".join(f"{m:.3f}" for m, _, _ in runs)
    assert report(1, ok, f"EPF N=1000 M=7: {good}/10 seeds within 0.1 with std < 0.1 "
                         f"(means {means}); slowest run {slowest:.1f} s")


def test_criterion_02_augmented_sir_degeneracy(report):
    misses, uniques = 0, []
    for s in SEEDS:
        out = run_sir_augmented(make_sin(), sin_data(s).ys, 1000, s)
        misses += abs(out.theta_mean[-1, 0] - 0.7) > 0.1
        uniques.append(int(out.unique_theta[-1]))
    ok = misses >= 5 and max(uniques) < 10
    assert report(2, ok, f"augmented SIR N=1000: {misses}/10 seeds off by > 0.1; unique theta {uniques}")


def test_criterion_03_liu_west_underperforms(report):
    lw = [abs(run_liu_west(make_sin(), sin_data(s).ys, 1000, 0.9, s).theta_mean[-1, 0] - 0.7) for s in SEEDS]
    epf = [abs(sin_epf(s)[0] - 0.7) for s in SEEDS]
    ok = np.mean(lw) > np.mean(epf)
    assert report(3, ok, f"mean |error|: Liu-West {np.mean(lw):.3f} vs EPF {np.mean(epf):.3f}")


def test_criterion_04_cauchy_convergence(report):
    model = make_cauchy()
    means = []
    for s in SEEDS:
        out = run_epf(model, simulate(model, T, s).ys, 100, 10, SamplerConfig(kind="slice"), s)
        means.append(out.theta_mean[-1, 0])
    good = sum(abs(m - 0.7) < 0.1 for m in means)
    ok = good >= 7
    assert report(4, ok, f"EPF N=100 M=10: {good}/10 seeds within 0.1 "
                         f"(means {', '.join(f'{m:.3f}' for m in means)})")


def _star_hits(model):
    cfg = SamplerConfig(kind="rwmh", rw_step_std=0.05, mh_steps_per_call=1)
    hits, finals = 0, []
    for s in SEEDS:
        out = run_epf(model, simulate(model, T, s).ys, 100, 9, cfg, s)
        g, c = out.theta_mean[-1]
        finals.append(f"({g:.2f},{c:.2f})")
        hits += abs(g - 1.0) < 0.3 and abs(c - 3.0) < 0.75
    return hits, finals


def test_criterion_05_star_convergence(report):
    hits, finals = _star_hits(make_star())
    # not gating: the same runs with the gate expanded around the prior mean (2, 2)
    centered_hits, _ = _star_hits(make_star(taylor_center=(2.0, 2.0)))
    ok = hits >= 6
    assert report(5, ok, f"EPF N=100 M=9, one MH step: {hits}/10 seeds within (0.3, 0.75) "
                         f"(finals {' '.join(finals)}); informational, expansion at the prior mean: "
                         f"{centered_hits}/10")


def test_criterion_06_shrinkage(report):
    model = make_sin()
    grid = make_grid(model)
    bad = []
    for s in SEEDS:
        xs = simulate(model, 1024, s).xs
        stds = [posterior_moments(gibbs_density_exact(model, xs[: n + 1], grid))[1][0] for n in (16, 64, 256, 1024)]
        if not all(a > b for a, b in zip(stds, stds[1:])):
            bad.append(s)
    ok = not bad
    assert report(6, ok, f"grid posterior std strictly decreasing over T in (16, 64, 256, 1024) "
                         f"for {10 - len(bad)}/10 seeds")


def test_criterion_07_kl_monotone_and_bound(report):
    model = make_sin()
    grid = make_grid(model)
    monotone, ratios = 0, []
    for s in SEEDS:
        xs = simulate(model, 1024, s).xs
        kls = [kl for _, _, kl in kl_sweep(model, xs, [1024], [1, 3, 5, 7], grid)]
        ratio = kls[0] / kls[-1]
        ratios.append(ratio)
        monotone += all(a > b for a, b in zip(kls, kls[1:])) and ratio >= 10
    x = np.linspace(-3, 3, 6001)
    S = example_log_density(x)
    bounds = [kl_bound_check(S, example_taylor(M)(x[:, None]), example_remainder_epsilon(M), x) for M in (4, 8, 12)]
    ok = monotone == 10 and all(bounds)
    assert report(7, ok, f"KL decreasing over M in (1, 3, 5, 7) with >= 10x reduction for {monotone}/10 seeds "
                         f"(smallest reduction {min(ratios):.3g}x); KL <= 2 eps for M = 4, 8, 12: {bounds}")


def _timed(fn):
    start = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - start


def _oracle_batch_recursion():
    model = make_linear()
    xs = simulate(model, 500, 0).xs
    s = GaussianSuffStat.from_prior(model.theta_prior)
    for t in range(1, xs.size):
        s = gaussian_update(s, xs[t - 1], 1.0, xs[t])
    C = 1.0 / (1.0 / 0.04 + np.sum(xs[:-1] ** 2))
    m = C * np.sum(xs[:-1] * xs[1:])
    return max(abs(s.m[0] - m) / abs(m), abs(s.C[0, 0] - C) / C)


def _oracle_kalman():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        A = rng.standard_normal((3, 3))
        s = GaussianSuffStat(rng.standard_normal(3), A @ A.T + 3 * np.eye(3))
        F, x, Q = rng.standard_normal(3), rng.standard_normal(), 0.5 + rng.random()
        a, b = gaussian_update(s, F, Q, x), gaussian_update_as_kalman(s, F, Q, x)
        worst = max(worst, np.abs(a.m - b.m).max(), np.abs(a.C - b.C).max())
    return worst


def _oracle_eta():
    model = make_sin()
    xs = simulate(model, 500, 0).xs
    d = LogPolyDensity.fresh(model, 7)
    for t in range(1, xs.size):
        d = logpoly_update(d, model, xs[t - 1], xs[t])
    grid = np.linspace(0.5, 0.9, 20)[:, None]
    a = logpoly_eval(d, grid)
    b = model.theta_prior.log_density(grid)
    for t in range(1, xs.size):
        b = b + model.approx_transition_log_density(grid, xs[t - 1], xs[t], 7)
    # theta-free constants are dropped along the way, so compare relative to the first grid point
    a, b = a - a[0], b - b[0]
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def _oracle_storvik():
    model = make_linear()
    ys = simulate(model, 200, 0).ys
    grid = np.linspace(0.2, 1.2, 41)[:, None]
    snaps = {"epf": {}, "storvik": {}}

    def keep(name):
        return lambda t, ps: snaps[name].__setitem__(t, ps) if t % 20 == 0 else None

    run_epf(model, ys, 50, 1, SamplerConfig(kind="exact-gaussian"), 0, observer=keep("epf"))
    run_storvik(model, ys, 50, 0, observer=keep("storvik"))
    worst = 0.0
    for t, ps in snaps["epf"].items():
        qs = snaps["storvik"][t]
        for i in range(len(ps)):
            a = logpoly_eval(ps.stat.density(i), grid)
            s = qs.stat.stat(i)
            b = stats.norm(s.m[0], np.sqrt(s.C[0, 0])).logpdf(grid[:, 0])
            pa, pb = np.exp(a - a.max()), np.exp(b - b.max())
            worst = max(worst, np.abs(pa / pa.sum() - pb / pb.sum()).max())
    return worst


def test_criterion_08_oracle_equivalences(report):
    checks = [
        ("a recursion vs batch", _oracle_batch_recursion, 1e-8),
        ("b recursion vs Kalman", _oracle_kalman, 1e-10),
        ("c eta vs direct", _oracle_eta, 1e-8),
        ("d order-1 EPF vs Storvik", _oracle_storvik, 1e-6),
    ]
    parts, ok = [], True
    for name, fn, tol in checks:
        err, secs = _timed(fn)
        passed = err <= tol and secs < 10
        ok &= passed
        parts.append(f"{name} {err:.1e} <= {tol:g} in {secs:.1f} s")
    assert report(8, ok, "; ".join(parts))


def test_criterion_09_constant_time(report):
    model = make_sin()
    out = run_epf(model, simulate(model, 2000, 0).ys, 1000, 7, SamplerConfig(kind="slice"), 0)
    t = np.arange(1, 2001)
    secs = out.step_seconds[1:]
    slope = np.polyfit(t, secs, 1)[0]
    ok = abs(slope) < 0.01 * secs.mean()
    assert report(9, ok, f"per-step time slope {slope:.2e} s/step vs mean step {secs.mean():.2e} s "
                         f"(ratio {abs(slope) / secs.mean():.1e})")


def test_criterion_10_sampler_moments(report):
    model = make_linear()
    xs = simulate(model, 40, 1).xs
    d = LogPolyDensity.fresh(model, 1)
    for t in range(1, xs.size):
        d = logpoly_update(d, model, xs[t - 1], xs[t])
    mean, cov = logpoly_gaussian_params(d)
    m, s = mean[0], np.sqrt(cov[0, 0])
    n = 10_000
    logf = lambda th, rows: logpoly_eval(d, th)
    parts, ok = [], True
    for kind in ("slice", "rwmh"):
        rng = np.random.default_rng(0)
        # independent chains started in the target: the draws are 10^4 effective samples
        theta = m + s * rng.standard_normal((n, 1))
        for _ in range(5):
            if kind == "slice":
                theta, _ = slice_batch(logf, theta, np.array([s]), d.support, 50, rng)
            else:
                theta, _, _ = rwmh_batch(logf, theta, np.array([s]), 1, rng)
        z_mean = (theta.mean() - m) / (s / np.sqrt(n))
        z_var = (theta.var(ddof=1) - s**2) / (s**2 * np.sqrt(2.0 / (n - 1)))
        ok &= abs(z_mean) < 3 and abs(z_var) < 3
        parts.append(f"{kind} z_mean {z_mean:+.2f} z_var {z_var:+.2f}")
    assert report(10, ok, "; ".join(parts))
