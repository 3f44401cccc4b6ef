"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from saa_control import experiment as ex
from saa_control.checks import (
    brute_force_prox,
    finite_difference_gradient_errors,
    manufactured_errors,
    stability_ratios,
)
from saa_control.error_stats import (
    expectation_bound,
    gradient_tail_experiment,
    luxemburg_bound,
    tail_bound,
)
from saa_control.mesh_fem import ControlBounds, ControlField, build_mesh, l1_norm_p0, quasi_interpolate
from saa_control.prox_solver import kkt_residual, prox_array, semismooth_newton
from saa_control.random_field import build_reference_grid, sample_scenarios
from saa_control.saa_problem import ProblemSpec, SAAProblem, smooth_gradient

ALPHA, GAMMA, LO, UP = 1e-3, 1e-2, -6.0, 6.0


def test_pde_convergence_rates(acceptance):
    t0 = time.perf_counter()
    ns = np.array([8, 16, 32, 64])
    errs = np.array([manufactured_errors(n) for n in ns])
    l2 = np.polyfit(np.log(1 / ns), np.log(errs[:, 0]), 1)[0]
    h1 = np.polyfit(np.log(1 / ns), np.log(errs[:, 1]), 1)[0]
    dt = time.perf_counter() - t0
    ok = 1.8 <= l2 <= 2.2 and 0.9 <= h1 <= 1.1 and dt < 30
    assert acceptance(1, "PDE convergence", ok, f"L2 rate {l2:.3f}, H1 rate {h1:.3f}, {dt:.1f}s")


def test_gradient_finite_differences(acceptance):
    t0 = time.perf_counter()
    errs = finite_difference_gradient_errors(n=8, N=4, directions=10, seed=0)
    dt = time.perf_counter() - t0
    ok = errs.max() <= 1e-6 and dt < 10
    assert acceptance(2, "gradient vs finite differences", ok, f"max rel error {errs.max():.2e}, {dt:.1f}s")


def test_prox_grid_oracle(acceptance):
    t0 = time.perf_counter()
    v = np.random.default_rng(2024).uniform(-30, 30, 1000)
    brute, spacing = brute_force_prox(v, GAMMA / ALPHA, LO, UP, points=10**6)
    dev = np.abs(brute - prox_array(v, ALPHA, GAMMA, LO, UP)).max()
    dt = time.perf_counter() - t0
    # grid of 10^6 points over [lower-1, upper+1] has spacing 1.4e-5
    ok = dev <= spacing and spacing <= 1.5e-5 and dt < 10
    assert acceptance(3, "prox vs grid minimization", ok, f"max dev {dev:.2e}, spacing {spacing:.2e}, {dt:.1f}s")


def test_solver_optimality(acceptance):
    t0 = time.perf_counter()
    grid = build_reference_grid(12)
    worst_kkt, worst_vi, worst_gap = 0.0, math.inf, 0.0
    for seed in range(5):
        p = SAAProblem(ProblemSpec(ALPHA, GAMMA, ControlBounds(LO, UP), 8, sample_scenarios(grid, 16, 100 + seed)))
        u, rep = semismooth_newton(p)
        assert rep.converged
        worst_kkt = max(worst_kkt, kkt_residual(p, u))
        g = smooth_gradient(p, u).values
        rng = np.random.default_rng(seed)
        for _ in range(100):
            v = rng.uniform(LO, UP, u.values.size) * (rng.random(u.values.size) < 0.5)
            vi = p.inner(g, v - u.values) + GAMMA * (l1_norm_p0(ControlField(8, v)) - l1_norm_p0(u))
            worst_vi = min(worst_vi, vi)
        w0 = ControlField(8, rng.uniform(-50, 50, u.values.size))
        u2, _ = semismooth_newton(p, w0=w0)
        worst_gap = max(worst_gap, p.norm(u2.values - u.values))
    dt = time.perf_counter() - t0
    ok = worst_kkt <= 1e-8 and worst_vi >= -1e-8 and worst_gap <= 1e-8 and dt < 120
    detail = f"kkt {worst_kkt:.1e}, min VI {worst_vi:.1e}, start gap {worst_gap:.1e}, {dt:.1f}s"
    assert acceptance(4, "solver optimality", ok, detail)


def test_stability_bounds(acceptance):
    t0 = time.perf_counter()
    l2, h1 = stability_ratios(ns=(4, 8, 16), trials=100, seed=7)
    violations = int(np.sum(l2 > 1.0) + np.sum(h1 > 1.0))
    dt = time.perf_counter() - t0
    ok = violations == 0 and len(l2) == 100 and dt < 30
    assert acceptance(5, "stability bounds", ok, f"{violations} violations, max ratio {max(l2.max(), h1.max()):.2e}, {dt:.1f}s")


@pytest.mark.slow
def test_coupled_convergence_experiment(acceptance, tmp_path):
    t0 = time.perf_counter()
    config = ex.preset("desk", output_dir=str(tmp_path), mode="coupled")
    assert config.meshes() == [8, 12, 16, 24] and config.replications == 16
    ex.cmd_reference(config)
    records = ex.cmd_experiment(config)
    table = ex.cmd_rates(ex.experiment_csv(config))
    dt = time.perf_counter() - t0
    mean_rate, lux_rate = table["mean_rate"], table["luxemburg_rate"]
    ok = (len(records) == 64 and 0.75 <= mean_rate <= 1.25 and 0.75 <= lux_rate <= 1.25)
    detail = f"mean rate {mean_rate:.3f}, Luxemburg rate {lux_rate:.3f}, {len(records)} records, {dt:.1f}s"
    assert acceptance(6, "coupled convergence experiment", ok, detail)


def test_gradient_tail_bound(acceptance):
    t0 = time.perf_counter()
    exact = SAAProblem(ProblemSpec(ALPHA, GAMMA, ControlBounds(LO, UP), 4, build_reference_grid(2)))
    u_star, rep = semismooth_newton(exact)
    assert rep.converged
    res = gradient_tail_experiment(exact, u_star, 200, 32, [0.25, 0.5, 1.0], seed=0)
    dt = time.perf_counter() - t0
    ok = all(res.satisfied(2.0)) and dt < 300
    cols = ", ".join(f"eps={e}: {f:.3f} <= {b:.3f}" for e, f, b in zip(res.epsilon, res.frequency, res.bound))
    assert acceptance(7, "gradient tail bound", ok, f"{cols}, {dt:.1f}s")


def test_bound_evaluators(acceptance):
    t0 = time.perf_counter()
    ok = True
    for delta, eps in [(0.1, 0.5), (0.01, 0.25), (1e-6, 1.0)]:
        N = 2 * math.log(2 / delta) / eps**2
        ok &= math.isclose(tail_bound(N, eps), delta, rel_tol=1e-12)
    for c1, c2, h, N in [(1.0, 1.0, 0.0, 1), (2.0, 3.0, 0.25, 16), (0.5, 7.0, 1 / 48, 2304)]:
        ok &= math.isclose(expectation_bound(c1, c2, h, N), c1 * h + c2 * math.sqrt(2 * math.pi) / math.sqrt(N), rel_tol=1e-14)
        ok &= math.isclose(luxemburg_bound(c1, c2, h, N), 3 * math.sqrt(2) * (c1 * h + c2 / math.sqrt(N)), rel_tol=1e-14)
    ok &= math.isclose(expectation_bound(1, 1, 0, 1), math.sqrt(2 * math.pi), rel_tol=1e-15)
    ok &= math.isclose(luxemburg_bound(1, 0, 1, 5), 3 * math.sqrt(2), rel_tol=1e-15)
    ok &= math.isclose(luxemburg_bound(0, 1, 1, 2), 3.0, rel_tol=1e-15)
    dt = time.perf_counter() - t0
    ok &= dt < 1
    assert acceptance(8, "bound evaluators", bool(ok), f"9 substitutions plus closed forms, {dt * 1e3:.1f}ms")


def test_quasi_interpolation(acceptance):
    t0 = time.perf_counter()
    worst_l1, infeasible, const_err = -math.inf, 0, 0.0
    for nc, nf in [(2, 8), (4, 16), (3, 12), (8, 24), (6, 48)]:
        coarse = build_mesh(nc)
        rng = np.random.default_rng(nf)
        for _ in range(100):
            vals = rng.uniform(LO, UP, 2 * nf * nf) * (rng.random(2 * nf * nf) < 0.5)
            u = ControlField(nf, vals)
            v = quasi_interpolate(coarse, u)
            worst_l1 = max(worst_l1, l1_norm_p0(v) - l1_norm_p0(u))
            infeasible += int(np.sum((v.values < LO) | (v.values > UP)))
        for c in (LO, -1.3, 0.0, 2.75, UP):
            const_err = max(const_err, np.abs(quasi_interpolate(coarse, ControlField.constant(nf, c)).values - c).max())
    dt = time.perf_counter() - t0
    ok = worst_l1 <= 1e-14 and infeasible == 0 and const_err == 0.0 and dt < 10
    detail = f"max L1 increase {worst_l1:.1e}, {infeasible} infeasible values, constant error {const_err}, {dt:.1f}s"
    assert acceptance(9, "quasi-interpolation", ok, detail)
