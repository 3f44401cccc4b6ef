"""State and adjoint solves for a single scenario.

``A_h(xi)`` is factorized once per scenario and reused for every state,
adjoint and Hessian solve on that scenario.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import splu

from .mesh_fem import (
    ControlField,
    MeshMismatchError,
    StateField,
    StructuredMesh,
    assemble_stiffness,
)
from .random_field import kappa_eval

FRIEDRICHS_UNIT_SQUARE = 1.0 / (np.pi * np.sqrt(2.0))


class SingularSystemError(RuntimeError):
    """The stiffness matrix could not be factorized."""


def target_checkerboard(mesh: StructuredMesh) -> np.ndarray:
    """Nodal values of the target: -1 on the closed square [1/4, 3/4]^2, +1 elsewhere."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    eps = 1e-12
    inside = (x >= 0.25 - eps) & (x <= 0.75 + eps) & (y >= 0.25 - eps) & (y <= 0.75 + eps)
    return np.where(inside, -1.0, 1.0)


def centroid_coefficients(mesh: StructuredMesh, xi) -> np.ndarray:
    c = mesh.centroids
    return kappa_eval(xi, c[:, 0], c[:, 1])


class ScenarioSystem:
    """Factorized ``A_h(xi)`` on a given mesh."""

    def __init__(self, mesh: StructuredMesh, xi, coeff: np.ndarray | None = None):
        self.mesh = mesh
        self.mesh_n = mesh.n
        self.scenario = np.asarray(xi, dtype=float)
        if coeff is None:
            coeff = centroid_coefficients(mesh, self.scenario)
        self.stiffness = assemble_stiffness(mesh, coeff)
        try:
            self._lu = splu(self.stiffness.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        self.solves = 0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``A_h(xi)^{-1}`` to interior load vector(s)."""
        self.solves += 1 if rhs.ndim == 1 else rhs.shape[1]
        return self._lu.solve(rhs)

    def state(self, u_values: np.ndarray) -> np.ndarray:
        return self.solve(self.mesh.control_to_state @ u_values)

    def adjoint(self, y_values: np.ndarray, yd_full: np.ndarray) -> np.ndarray:
        """Adjoint state for misfit ``y - y_d``; ``yd_full`` includes boundary vertices."""
        residual = self.mesh.embed(y_values) - yd_full
        return -self.solve(self.mesh.mass_interior_full @ residual)

    def apply_state_to_state(self, y_values: np.ndarray) -> np.ndarray:
        """``S_h`` applied to a P1 state used as a source term."""
        return self.solve(self.mesh.mass @ y_values)


def _check(sys: ScenarioSystem, n: int) -> None:
    if sys.mesh_n != n:
        raise MeshMismatchError(f"field lives on n={n}, system on n={sys.mesh_n}")


def solve_state(sys: ScenarioSystem, u: ControlField) -> StateField:
    _check(sys, u.mesh_n)
    return StateField(sys.mesh_n, sys.state(u.values))


def solve_adjoint(sys: ScenarioSystem, y: StateField, yd_full: np.ndarray) -> StateField:
    """Solve ``(kappa grad z, grad v) = -(y - y_d, v)`` for all interior hats ``v``."""
    _check(sys, y.mesh_n)
    yd_full = np.asarray(yd_full, dtype=float)
    if yd_full.shape != (sys.mesh.n_vertices,):
        raise MeshMismatchError("target must be given at every vertex of the mesh")
    return StateField(sys.mesh_n, sys.adjoint(y.values, yd_full))


def adjoint_to_control_gradient_term(z: StateField, mesh: StructuredMesh) -> ControlField:
    """Triangle averages of the P1 function ``z`` (boundary values zero)."""
    if z.mesh_n != mesh.n:
        raise MeshMismatchError(f"state on n={z.mesh_n}, mesh n={mesh.n}")
    return ControlField(mesh.n, mesh.cell_average @ z.values)
