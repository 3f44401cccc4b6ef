"""Fast self-checks behind ``saa-control check``.

Each check returns ``(passed, detail)``; none of them reuses the code path
it verifies as its own oracle.
"""
from __future__ import annotations

import time

import numpy as np

from .forward_adjoint import FRIEDRICHS_UNIT_SQUARE, ScenarioSystem
from .mesh_fem import (
    ControlBounds,
    ControlField,
    build_mesh,
    h1_seminorm_p1,
    l2_norm_p0,
    l2_norm_p1,
    p1_errors_against,
    project_p0,
    StateField,
)
from .prox_solver import SolverConfig, kkt_residual, prox_array, semismooth_newton
from .random_field import build_reference_grid, kappa_bounds, sample_scenarios
from .saa_problem import ProblemSpec, SAAProblem, smooth_gradient, smooth_objective

SIX = dict(alpha=1e-3, gamma=1e-2, lower=-6.0, upper=6.0)


def manufactured_errors(n: int) -> tuple[float, float]:
    """L2 and H1-seminorm errors for ``-lap y = 2 pi^2 sin(pi x) sin(pi y)`` with kappa = 1."""
    mesh = build_mesh(n)
    pi = np.pi
    src = project_p0(mesh, lambda x, y: 2 * pi**2 * np.sin(pi * x) * np.sin(pi * y))
    sys = ScenarioSystem(mesh, np.zeros(4))
    y = mesh.embed(sys.state(src.values))
    return p1_errors_against(
        mesh,
        y,
        lambda x, y_: np.sin(pi * x) * np.sin(pi * y_),
        lambda x, y_: (pi * np.cos(pi * x) * np.sin(pi * y_), pi * np.sin(pi * x) * np.cos(pi * y_)),
    )


def check_manufactured(ns=(8, 16, 32, 64)):
    errs = np.array([manufactured_errors(n) for n in ns])
    hs = 1.0 / np.asarray(ns, dtype=float)
    l2_rate = np.polyfit(np.log(hs), np.log(errs[:, 0]), 1)[0]
    h1_rate = np.polyfit(np.log(hs), np.log(errs[:, 1]), 1)[0]
    ok = 1.8 <= l2_rate <= 2.2 and 0.9 <= h1_rate <= 1.1
    return ok, f"L2 rate {l2_rate:.3f}, H1 rate {h1_rate:.3f}"


def finite_difference_gradient_errors(n=8, N=4, directions=10, seed=0, step=1e-5):
    """Relative errors of ``(g, d)`` against central differences of the smooth objective."""
    rng = np.random.default_rng(seed)
    grid = build_reference_grid(12)
    spec = ProblemSpec(1e-3, 1e-2, ControlBounds(), n, sample_scenarios(grid, N, seed))
    p = SAAProblem(spec)
    u = ControlField(n, rng.uniform(-6, 6, 2 * n * n))
    g = smooth_gradient(p, u)
    errs = []
    for _ in range(directions):
        d = rng.standard_normal(2 * n * n)
        t = step * max(1.0, np.linalg.norm(u.values)) / np.linalg.norm(d)
        fp = smooth_objective(p, ControlField(n, u.values + t * d))
        fm = smooth_objective(p, ControlField(n, u.values - t * d))
        fd = (fp - fm) / (2 * t)
        exact = p.inner(g.values, d)
        errs.append(abs(fd - exact) / max(abs(exact), 1e-300))
    return np.array(errs)


def check_gradient():
    errs = finite_difference_gradient_errors()
    return bool(errs.max() <= 1e-6), f"max relative error {errs.max():.2e}"


def brute_force_prox(v: np.ndarray, mu: float, lower: float, upper: float, points=10**6):
    """Grid minimizer of ``mu |t| + (t - v)^2 / 2`` over ``[lower, upper]``.

    Returns the minimizers and the grid spacing.
    """
    t = np.linspace(lower - 1.0, upper + 1.0, points)
    feasible = (t >= lower) & (t <= upper)
    tf = t[feasible]
    base = mu * np.abs(tf)
    out = np.empty(len(v))
    for k, vk in enumerate(v):
        out[k] = tf[np.argmin(base + 0.5 * (tf - vk) ** 2)]
    return out, t[1] - t[0]


def check_prox(samples=1000, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-30, 30, samples)
    a, g, lo, up = SIX["alpha"], SIX["gamma"], SIX["lower"], SIX["upper"]
    brute, spacing = brute_force_prox(v, g / a, lo, up)
    formula = prox_array(v, a, g, lo, up)
    dev = np.abs(brute - formula).max()
    return bool(dev <= spacing), f"max deviation {dev:.2e} (grid spacing {spacing:.2e})"


def stability_ratios(ns=(4, 8, 16), trials=100, seed=0):
    """Ratios ``||S_h u|| / bound`` for the L2 and H1-seminorm stability estimates."""
    rng = np.random.default_rng(seed)
    kmin = kappa_bounds()[0]
    cd = FRIEDRICHS_UNIT_SQUARE
    l2, h1 = [], []
    for k in range(trials):
        n = ns[k % len(ns)]
        mesh = build_mesh(n)
        xi = rng.uniform(-1, 1, 4)
        u = ControlField(n, rng.standard_normal(2 * n * n))
        y = StateField(n, ScenarioSystem(mesh, xi).state(u.values))
        nu = l2_norm_p0(u)
        l2.append(l2_norm_p1(y, mesh) / (cd**2 / kmin * nu))
        h1.append(h1_seminorm_p1(y, mesh) / (cd / kmin * nu))
    return np.array(l2), np.array(h1)


def check_stability():
    l2, h1 = stability_ratios()
    ok = bool(np.all(l2 <= 1.0) and np.all(h1 <= 1.0))
    return ok, f"max ratio L2 {l2.max():.3e}, H1 {h1.max():.3e}"


def check_solver(config: SolverConfig | None = None, n=8, N=16, seed=1):
    config = config or SolverConfig()
    spec = ProblemSpec(1e-3, 1e-2, ControlBounds(), n,
                       sample_scenarios(build_reference_grid(12), N, seed))
    p = SAAProblem(spec)
    u, rep = semismooth_newton(p, config)
    kkt = kkt_residual(p, u)
    ok = rep.converged and kkt <= 1e-8
    return ok, (f"converged={rep.converged} in {rep.newton_iterations} steps, "
                f"|G|={rep.final_residual:.1e}, kkt={kkt:.1e}")


CHECKS = {
    "gradient": check_gradient,
    "prox": check_prox,
    "manufactured": check_manufactured,
    "stability": check_stability,
}


def run_checks(solver_config: SolverConfig | None = None, out=print) -> bool:
    checks = dict(CHECKS)
    checks["solver"] = lambda: check_solver(solver_config)
    all_ok = True
    out(f"{'check':<14}{'result':<8}{'seconds':>8}  detail")
    for name, fn in checks.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{name:<14}{'PASS' if ok else 'FAIL':<8}{time.perf_counter() - t0:8.2f}  {detail}")
    return all_ok
