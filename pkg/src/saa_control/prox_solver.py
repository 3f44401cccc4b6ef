"""Prox of ``psi/alpha`` and a semismooth Newton-CG solver on the normal map.

With ``g(u)`` the triangle averages of the mean adjoint state, the first
order conditions read ``u = prox(g(u) / alpha)``. Writing ``u = prox(w)``
they become the normal map equation::

    G(w) = alpha w - g(prox(w)) = 0.

The Newton system ``(alpha I + H D) s = -G`` (``H`` the misfit Hessian,
``D`` the 0/1 prox derivative) is reduced to the SPD system
``(alpha I + D H D) p = -D G`` on the active cells and solved by CG.

Convergence is measured by ``||G(w)|| / alpha``, which bounds both the
distance to the solution and the fixed-point residual of ``u``. A full step
that increases the residual is halved until it does not (at most 30 times);
without this the iteration can cycle between two active sets.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh_fem import ControlField
from .saa_problem import SAAProblem, _as_problem

log = logging.getLogger(__name__)


class CGBreakdown(ArithmeticError):
    """CG met a direction of nonpositive curvature."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_newton: int = 50
    cg_tol_factor: float = 1e-2
    max_cg: int = 500
    line_search: bool = True

    def __post_init__(self):
        for name in ("tol", "max_newton", "cg_tol_factor", "max_cg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolverReport:
    converged: bool = False
    newton_iterations: int = 0
    total_cg_iterations: int = 0
    total_pde_solves: int = 0
    final_residual: float = float("inf")
    residual_history: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        del d["residual_history"]
        return json.dumps(d, indent=2)


@dataclass
class NormalMapState:
    w: ControlField
    u: ControlField
    residual_norm: float
    iteration: int


def prox_array(v: np.ndarray, alpha: float, gamma: float, lower: float, upper: float) -> np.ndarray:
    """Soft-threshold at ``gamma/alpha``, then clip to ``[lower, upper]``."""
    mu = gamma / alpha
    s = np.sign(v) * np.maximum(np.abs(v) - mu, 0.0)
    return np.minimum(np.maximum(s, lower), upper)


def prox_mask_array(v: np.ndarray, alpha: float, gamma: float, lower: float, upper: float) -> np.ndarray:
    mu = gamma / alpha
    s = np.sign(v) * np.maximum(np.abs(v) - mu, 0.0)
    return (np.abs(v) > mu) & (s > lower) & (s < upper)


def _params(problem):
    spec = problem.spec if isinstance(problem, SAAProblem) else problem
    return spec.alpha, spec.gamma, spec.bounds.lower, spec.bounds.upper


def prox_psi_over_alpha(v: ControlField, spec) -> ControlField:
    return ControlField(v.mesh_n, prox_array(v.values, *_params(spec)))


def prox_newton_derivative(v: ControlField, spec) -> np.ndarray:
    """Boolean mask: 1 where the prox is locally the identity, 0 elsewhere."""
    return prox_mask_array(v.values, *_params(spec))


def conjugate_gradient(apply, b: np.ndarray, rtol: float, maxiter: int) -> tuple[np.ndarray, int]:
    """Plain CG for an SPD operator, from the zero initial guess."""
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    p = r.copy()
    rr = r @ r
    for k in range(1, maxiter + 1):
        q = apply(p)
        curv = p @ q
        if curv <= 0.0:
            raise CGBreakdown(f"nonpositive curvature {curv:.3e} at CG iteration {k}")
        step = rr / curv
        x += step * p
        r -= step * q
        rr_new = r @ r
        if np.sqrt(rr_new) <= rtol * bnorm:
            return x, k
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, maxiter


def normal_map(problem: SAAProblem, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(G(w), prox(w))``."""
    u = prox_array(w, *_params(problem))
    return problem.alpha * w - problem.mean_adjoint_average(u), u


def semismooth_newton(
    problem,
    config: SolverConfig | None = None,
    w0: ControlField | None = None,
    callback=None,
) -> tuple[ControlField, SolverReport]:
    """Solve the discretized SAA problem; returns the control and a report.

    ``callback`` receives a :class:`NormalMapState` after every iteration.
    """
    p = _as_problem(problem)
    config = config or SolverConfig()
    params = _params(p)
    alpha = p.alpha
    solves0 = p.pde_solves
    w = np.zeros(p.mesh.n_triangles) if w0 is None else p.check(w0).copy()
    report = SolverReport()

    G, u = normal_map(p, w)
    res = p.norm(G) / alpha
    report.residual_history.append(res)
    while True:
        log.debug("newton %d: |G| = %.3e", report.newton_iterations, res)
        if res <= config.tol:
            report.converged = True
            break
        if report.newton_iterations >= config.max_newton:
            break
        mask = prox_mask_array(w, *params)
        idx = np.flatnonzero(mask)
        pvec = np.zeros_like(w)
        if idx.size:
            def apply(x, idx=idx):
                full = np.zeros_like(w)
                full[idx] = x
                return alpha * x + p.misfit_hessian(full)[idx]

            eta = min(config.cg_tol_factor, np.sqrt(p.norm(G)))
            x, its = conjugate_gradient(apply, -G[idx], eta, config.max_cg)
            report.total_cg_iterations += its
            pvec[idx] = x
            step = -(G + p.misfit_hessian(pvec)) / alpha
        else:
            step = -G / alpha

        w_new = w + step
        G_new, u_new = normal_map(p, w_new)
        res_new = p.norm(G_new) / alpha
        if config.line_search and res_new > res:
            t = 1.0
            for _ in range(30):
                t *= 0.5
                w_new = w + t * step
                G_new, u_new = normal_map(p, w_new)
                res_new = p.norm(G_new) / alpha
                if res_new <= res:
                    break
        if res_new > res:
            log.info("residual increased %.3e -> %.3e", res, res_new)
        w, G, u, res = w_new, G_new, u_new, res_new
        report.newton_iterations += 1
        report.residual_history.append(res)
        if callback is not None:
            callback(NormalMapState(ControlField(p.n, w.copy()), ControlField(p.n, u.copy()),
                                    res, report.newton_iterations))

    report.final_residual = res
    report.total_pde_solves = p.pde_solves - solves0
    return ControlField(p.n, u), report


def kkt_residual(problem, u: ControlField) -> float:
    """``||u - prox(g(u)/alpha)||_{L2}``; zero exactly at the SAA solution."""
    p = _as_problem(problem)
    v = p.check(u)
    fixed = prox_array(p.mean_adjoint_average(v) / p.alpha, *_params(p))
    return p.norm(v - fixed)
