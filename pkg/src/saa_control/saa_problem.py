"""Discretized sample average approximation of the risk-neutral problem.

Smooth part of the objective::

    f(u) = 1/(2N) sum_i ||S_h(u, xi_i) - y_d||^2 + alpha/2 ||u||^2

Repeated scenarios are merged into one factorization with an integer
multiplicity, which leaves every quantity unchanged. Contributions are
accumulated in the (sorted) order of distinct scenarios.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .forward_adjoint import ScenarioSystem, target_checkerboard
from .mesh_fem import (
    ControlBounds,
    ControlField,
    MeshMismatchError,
    StructuredMesh,
    build_mesh,
    l1_norm_p0,
    l2_norm_p0,
)
from .random_field import ScenarioSet, build_reference_grid, sample_scenarios

TARGETS = ("checkerboard_pm1", "zero")


@dataclass(eq=False)
class ProblemSpec:
    """Data of one discretized SAA problem.

    ``y_d`` is either a named target (``"checkerboard_pm1"``, ``"zero"``) or
    an array of nodal values at all vertices of the ``mesh_n`` mesh.
    """

    alpha: float
    gamma: float
    bounds: ControlBounds
    mesh_n: int
    scenarios: ScenarioSet
    y_d: str | np.ndarray = "checkerboard_pm1"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if len(self.scenarios) == 0:
            raise ValueError("problem needs at least one scenario")
        if isinstance(self.y_d, str) and self.y_d not in TARGETS:
            raise ValueError(f"unknown target {self.y_d!r}")

    def to_json(self) -> str:
        if not isinstance(self.y_d, str):
            raise ValueError("only named targets can be serialized")
        s = self.scenarios
        return json.dumps(
            {
                "alpha": self.alpha,
                "gamma": self.gamma,
                "lower": self.bounds.lower,
                "upper": self.bounds.upper,
                "n": self.mesh_n,
                "N": len(s),
                "seed": s.seed,
                "points_per_dim": s.grid_points_per_dim,
                "y_d": self.y_d,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        d = json.loads(text)
        grid = build_reference_grid(d["points_per_dim"])
        if d["seed"] == "exhaustive":
            scen = grid
        else:
            scen = sample_scenarios(grid, d["N"], d["seed"])
        return cls(
            d["alpha"],
            d["gamma"],
            ControlBounds(d["lower"], d["upper"]),
            d["n"],
            scen,
            d.get("y_d", "checkerboard_pm1"),
        )


class SAAProblem:
    """Assembled problem: mesh, target and one factorized system per distinct scenario."""

    def __init__(self, spec: ProblemSpec, mesh: StructuredMesh | None = None):
        self.spec = spec
        self.mesh = mesh if mesh is not None else build_mesh(spec.mesh_n)
        if self.mesh.n != spec.mesh_n:
            raise MeshMismatchError("mesh does not match the problem spec")
        self.alpha = float(spec.alpha)
        self.gamma = float(spec.gamma)
        self.bounds = spec.bounds
        self.y_d = self._target(spec.y_d)
        points, self.weights = spec.scenarios.distinct()
        self.systems = [ScenarioSystem(self.mesh, xi) for xi in points]

    def _target(self, y_d) -> np.ndarray:
        if isinstance(y_d, str):
            if y_d == "zero":
                return np.zeros(self.mesh.n_vertices)
            return target_checkerboard(self.mesh)
        y_d = np.asarray(y_d, dtype=float)
        if y_d.shape != (self.mesh.n_vertices,):
            raise MeshMismatchError("target must be given at every vertex")
        return y_d

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def pde_solves(self) -> int:
        return sum(s.solves for s in self.systems)

    def check(self, u: ControlField) -> np.ndarray:
        if u.mesh_n != self.n:
            raise MeshMismatchError(f"control on n={u.mesh_n}, problem on n={self.n}")
        return u.values

    # array-level kernels ------------------------------------------------

    def misfit(self, u: np.ndarray) -> float:
        """``1/(2N) sum_i ||S_h(u, xi_i) - y_d||^2``."""
        total = 0.0
        mf = self.mesh.mass_full
        for w, sys in zip(self.weights, self.systems):
            r = self.mesh.embed(sys.state(u)) - self.y_d
            total += w * (r @ (mf @ r))
        return 0.5 * total

    def mean_adjoint_average(self, u: np.ndarray) -> np.ndarray:
        """Triangle averages of ``(1/N) sum_i z_h(u, xi_i)``."""
        acc = np.zeros(self.mesh.n_interior)
        for w, sys in zip(self.weights, self.systems):
            acc += w * sys.adjoint(sys.state(u), self.y_d)
        return self.mesh.cell_average @ acc

    def misfit_hessian(self, d: np.ndarray) -> np.ndarray:
        """Data-misfit Hessian applied to ``d``: averages of ``(1/N) sum S_h S_h d``."""
        acc = np.zeros(self.mesh.n_interior)
        for w, sys in zip(self.weights, self.systems):
            acc += w * sys.apply_state_to_state(sys.state(d))
        return self.mesh.cell_average @ acc

    def gradient_array(self, u: np.ndarray) -> np.ndarray:
        return self.alpha * u - self.mean_adjoint_average(u)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """L2 inner product of two P0 coefficient vectors."""
        return float(self.mesh.triangle_area * np.dot(a, b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.mesh.triangle_area * np.dot(a, a)))


def _as_problem(problem) -> SAAProblem:
    return problem if isinstance(problem, SAAProblem) else SAAProblem(problem)


def smooth_objective(problem, u: ControlField) -> float:
    p = _as_problem(problem)
    v = p.check(u)
    return p.misfit(v) + 0.5 * p.alpha * l2_norm_p0(u) ** 2


def objective(problem, u: ControlField) -> float:
    """Full SAA objective including the ``gamma ||u||_{L1}`` term."""
    p = _as_problem(problem)
    return smooth_objective(p, u) + p.gamma * l1_norm_p0(u)


def smooth_gradient(problem, u: ControlField) -> ControlField:
    """L2 gradient of the smooth part: ``alpha u - B_h^* mean(z_h)``."""
    p = _as_problem(problem)
    return ControlField(p.n, p.gradient_array(p.check(u)))


def hessian_vec(problem, direction: ControlField) -> ControlField:
    """``alpha d + misfit Hessian d``; independent of the linearization point."""
    p = _as_problem(problem)
    d = p.check(direction)
    return ControlField(p.n, p.alpha * d + p.misfit_hessian(d))


def exact_expectation_gradient(problem, u: ControlField) -> ControlField:
    """Gradient of the expected smooth objective under the full grid distribution."""
    p = _as_problem(problem)
    if not p.spec.scenarios.exhaustive:
        raise ValueError("exact expectation gradient needs the exhaustive scenario set")
    return smooth_gradient(p, u)
