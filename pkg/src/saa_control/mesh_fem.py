"""Structured P1/P0 finite elements on the unit square.

The mesh splits every square cell of an ``n x n`` grid along its
lower-left to upper-right diagonal. States live in the P1 space with
homogeneous Dirichlet conditions (interior vertices only), controls in
the P0 space of piecewise constants on triangles.

Vertex ``(i, j)`` with coordinates ``(i/n, j/n)`` has index
``i + j*(n+1)``. Cell ``(i, j)`` has index ``c = i + j*n`` and owns the
triangles ``2c`` (below the diagonal) and ``2c + 1`` (above it).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp


class MeshMismatchError(ValueError):
    """Raised when fields or meshes are incompatible."""


@dataclass(frozen=True)
class ControlBounds:
    """Box constraint ``lower <= u <= upper`` with ``lower <= 0 <= upper``."""

    lower: float = -6.0
    upper: float = 6.0

    def __post_init__(self):
        if not (self.lower <= 0.0 <= self.upper):
            raise ValueError(
                f"bounds must satisfy lower <= 0 <= upper, got [{self.lower}, {self.upper}]"
            )


@dataclass(eq=False)
class ControlField:
    """Piecewise constant control, one value per triangle."""

    mesh_n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2 * self.mesh_n**2,):
            raise MeshMismatchError(
                f"control on n={self.mesh_n} needs {2 * self.mesh_n**2} values, "
                f"got shape {self.values.shape}"
            )

    @classmethod
    def constant(cls, n: int, c: float) -> "ControlField":
        return cls(n, np.full(2 * n * n, float(c)))


@dataclass(eq=False)
class StateField:
    """P1 function with zero boundary values, stored on interior vertices."""

    mesh_n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != ((self.mesh_n - 1) ** 2,):
            raise MeshMismatchError(
                f"state on n={self.mesh_n} needs {(self.mesh_n - 1) ** 2} values, "
                f"got shape {self.values.shape}"
            )


# 7-point degree-5 rule on the reference triangle (barycentric, weights sum to 1)
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
_QUAD_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1],
        [_b1, _a1, _b1],
        [_b1, _b1, _a1],
        [_a2, _b2, _b2],
        [_b2, _a2, _b2],
        [_b2, _b2, _a2],
    ]
)
_QUAD_W = np.array(
    [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
)


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Regular triangulation of ``(0, 1)^2`` with ``n`` cells per direction."""

    n: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    interior_vertex_map: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_vertices(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_triangles(self) -> int:
        return 2 * self.n**2

    @property
    def n_interior(self) -> int:
        return (self.n - 1) ** 2

    @property
    def triangle_area(self) -> float:
        return 0.5 / self.n**2

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three local hat functions, shape (T, 3, 2)."""
        p = self.vertices[self.triangles]
        area2 = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / area2
            g[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / area2
        return g

    @cached_property
    def mass_full(self) -> sp.csr_matrix:
        """P1 mass matrix over all vertices (boundary included)."""
        local = self.triangle_area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        vals = np.broadcast_to(local, (self.n_triangles, 3, 3))
        return _assemble_local(self, vals)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """P1 mass matrix restricted to interior vertices."""
        return self.mass_full[self.interior][:, self.interior].tocsr()

    @cached_property
    def mass_interior_full(self) -> sp.csr_matrix:
        """Interior rows, all columns: tests full P1 functions against interior hats."""
        return self.mass_full[self.interior].tocsr()

    @cached_property
    def control_to_vertex_full(self) -> sp.csr_matrix:
        """Matrix with entries ``int_T phi_i`` (= |T|/3), shape (vertices, triangles)."""
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(self.n_triangles), 3)
        vals = np.full(rows.size, self.triangle_area / 3.0)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_vertices, self.n_triangles)
        )

    @cached_property
    def control_to_state(self) -> sp.csr_matrix:
        """The operator ``B_h``: P0 coefficients to interior load vectors."""
        return self.control_to_vertex_full[self.interior].tocsr()

    @cached_property
    def cell_average(self) -> sp.csr_matrix:
        """Interior P1 values to triangle averages (``B_h^*`` in P0 coordinates)."""
        return (self.control_to_state.T / self.triangle_area).tocsr()

    def embed(self, interior_values: np.ndarray) -> np.ndarray:
        """Extend interior values by zero to all vertices."""
        full = np.zeros(self.n_vertices)
        full[self.interior] = interior_values
        return full

    def interpolate(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal values of ``f`` at all vertices."""
        return np.asarray(f(self.vertices[:, 0], self.vertices[:, 1]), dtype=float)

    def quadrature_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical quadrature points (T, Q, 2) and weights (Q,) including |T|."""
        p = self.vertices[self.triangles]
        pts = np.einsum("qa,tad->tqd", _QUAD_BARY, p)
        return pts, _QUAD_W * self.triangle_area


def build_mesh(n: int) -> StructuredMesh:
    """Build the structured triangulation with ``n`` cells per direction."""
    if int(n) != n or n < 2:
        raise ValueError(f"mesh needs n >= 2 cells per direction, got {n}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = i + j * (n + 1)
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    vi, vj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    on_boundary = ((vi == 0) | (vi == n) | (vj == 0) | (vj == n)).ravel()
    interior = np.flatnonzero(~on_boundary)
    vmap = np.full((n + 1) ** 2, -1, dtype=np.int64)
    vmap[interior] = np.arange(interior.size)
    return StructuredMesh(n, vertices, triangles, interior, vmap)


def _assemble_local(mesh: StructuredMesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sp.csr_matrix(
        (np.asarray(local).reshape(-1), (rows, cols)),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )


def assemble_stiffness(mesh: StructuredMesh, coeff) -> sp.csr_matrix:
    """Stiffness matrix of ``(coeff grad y, grad v)`` over interior vertices.

    Parameters
    ----------
    mesh : StructuredMesh
    coeff : array_like
        One positive value per triangle (piecewise constant diffusion).
    """
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (mesh.n_triangles,):
        raise MeshMismatchError(
            f"need {mesh.n_triangles} triangle coefficients, got shape {coeff.shape}"
        )
    if not np.all(coeff > 0):
        raise ValueError("diffusion coefficient must be positive on every triangle")
    g = mesh.gradients
    local = np.einsum("tad,tbd->tab", g, g) * (coeff * mesh.triangle_area)[:, None, None]
    full = _assemble_local(mesh, local)
    return full[mesh.interior][:, mesh.interior].tocsr()


def assemble_mass_p1(mesh: StructuredMesh) -> sp.csr_matrix:
    return mesh.mass


def assemble_control_to_state_rhs(mesh: StructuredMesh, u: ControlField) -> np.ndarray:
    """Load vector ``(u, phi_i)`` for every interior hat function."""
    _check_control(mesh, u)
    return mesh.control_to_state @ u.values


def _check_control(mesh: StructuredMesh, u: ControlField) -> None:
    if u.mesh_n != mesh.n:
        raise MeshMismatchError(f"control lives on n={u.mesh_n}, mesh has n={mesh.n}")


def l2_norm_p0(u: ControlField) -> float:
    return float(np.sqrt(0.5 / u.mesh_n**2 * np.dot(u.values, u.values)))


def l1_norm_p0(u: ControlField) -> float:
    return float(0.5 / u.mesh_n**2 * np.abs(u.values).sum())


def l2_norm_p1(y: StateField, mesh: StructuredMesh | None = None) -> float:
    mesh = mesh if mesh is not None else build_mesh(y.mesh_n)
    return float(np.sqrt(y.values @ (mesh.mass @ y.values)))


def h1_seminorm_p1(y: StateField, mesh: StructuredMesh | None = None) -> float:
    mesh = mesh if mesh is not None else build_mesh(y.mesh_n)
    k = assemble_stiffness(mesh, np.ones(mesh.n_triangles))
    return float(np.sqrt(y.values @ (k @ y.values)))


def project_p0(mesh: StructuredMesh, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> ControlField:
    """L2 projection onto P0 (cell averages) using a degree-5 rule."""
    pts, w = mesh.quadrature_points()
    vals = f(pts[..., 0], pts[..., 1])
    return ControlField(mesh.n, (vals * w).sum(axis=1) / mesh.triangle_area)


def p1_errors_against(
    mesh: StructuredMesh,
    y_full: np.ndarray,
    exact: Callable,
    exact_grad: Callable | None = None,
) -> tuple[float, float]:
    """L2 error and H1-seminorm error of a P1 function against a smooth one.

    ``exact_grad`` returns the pair of partial derivatives; if omitted the
    seminorm error is reported as ``nan``.
    """
    pts, w = mesh.quadrature_points()
    x, y = pts[..., 0], pts[..., 1]
    local = y_full[mesh.triangles]
    yh = np.einsum("qa,ta->tq", _QUAD_BARY, local)
    l2 = np.sqrt(((yh - exact(x, y)) ** 2 * w).sum())
    if exact_grad is None:
        return float(l2), float("nan")
    gh = np.einsum("ta,tad->td", local, mesh.gradients)
    gx, gy = exact_grad(x, y)
    h1 = np.sqrt((((gh[:, None, 0] - gx) ** 2 + (gh[:, None, 1] - gy) ** 2) * w).sum())
    return float(l2), float(h1)


def _nesting_ratio(n_coarse: int, n_fine: int) -> int:
    if n_fine % n_coarse != 0:
        raise MeshMismatchError(f"mesh n={n_coarse} is not nested in n={n_fine}")
    return n_fine // n_coarse


def parent_triangles(n_coarse: int, n_fine: int) -> np.ndarray:
    """Index of the coarse triangle containing each fine triangle."""
    r = _nesting_ratio(n_coarse, n_fine)
    t = np.arange(2 * n_fine**2)
    cell = t // 2
    upper = t % 2
    fi, fj = cell % n_fine, cell // n_fine
    ci, cj = fi // r, fj // r
    a, b = fi % r, fj % r
    # local offsets decide the side of the coarse diagonal; on it the fine split agrees
    coarse_upper = np.where(a == b, upper, (b > a).astype(np.int64))
    return 2 * (ci + cj * n_coarse) + coarse_upper


def prolong(u_coarse: ControlField, n_fine: int) -> ControlField:
    """Piecewise constant injection onto a nested finer mesh (exact)."""
    parents = parent_triangles(u_coarse.mesh_n, n_fine)
    return ControlField(n_fine, u_coarse.values[parents])


def quasi_interpolate(mesh_coarse: StructuredMesh | int, u_fine: ControlField) -> ControlField:
    """Cell averages of a fine control over the triangles of a nested coarse mesh."""
    n_coarse = mesh_coarse if isinstance(mesh_coarse, (int, np.integer)) else mesh_coarse.n
    parents = parent_triangles(int(n_coarse), u_fine.mesh_n)
    r = u_fine.mesh_n // int(n_coarse)
    nt = 2 * int(n_coarse) ** 2
    lo = np.full(nt, np.inf)
    hi = np.full(nt, -np.inf)
    np.minimum.at(lo, parents, u_fine.values)
    np.maximum.at(hi, parents, u_fine.values)
    # averaging offsets from the child minimum keeps constants exact; the clip keeps box bounds exact
    shift = np.bincount(parents, weights=u_fine.values - lo[parents], minlength=nt) / r**2
    return ControlField(int(n_coarse), np.clip(lo + shift, lo, hi))


def l2_error_nested(u_coarse: ControlField, u_ref: ControlField) -> float:
    """Exact L2 distance between a coarse control and one on a nested finer mesh."""
    fine = prolong(u_coarse, u_ref.mesh_n)
    d = fine.values - u_ref.values
    return float(np.sqrt(0.5 / u_ref.mesh_n**2 * np.dot(d, d)))
