"""Random diffusion coefficient and the discrete scenario distribution.

The parameter ``xi`` ranges over ``[-1, 1]^4``; the distribution of ``xi``
is replaced by the uniform distribution on a tensor grid with ``m`` points
per direction (endpoints included). Samples are drawn with a Philox
counter-based generator keyed by ``(seed, stream)`` so a replication's
draws do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_FREQ = np.array([1.1, 1.2, 1.3, 1.4]) * np.pi


def kappa_eval(xi, x1, x2):
    """Evaluate ``kappa(xi)(x)``; broadcasts over ``x1, x2``."""
    xi = np.asarray(xi, dtype=float)
    return np.exp(
        xi[0] * np.cos(_FREQ[0] * x1)
        + xi[1] * np.cos(_FREQ[1] * x1)
        + xi[2] * np.sin(_FREQ[2] * x2)
        + xi[3] * np.sin(_FREQ[3] * x2)
    )


def kappa_bounds() -> tuple[float, float, float]:
    """Return ``(kappa_min, kappa_max, kappa_max_c1)`` valid for every xi.

    The exponent is a sum of four terms bounded by one in modulus. Its
    partial derivatives are bounded by ``(1.1 + 1.2) pi`` and
    ``(1.3 + 1.4) pi``, so ``|grad kappa|_inf <= 2.7 pi kappa``.
    """
    kmax = float(np.exp(4.0))
    return float(np.exp(-4.0)), kmax, kmax * (1.0 + 2.7 * np.pi)


@dataclass(eq=False)
class ScenarioSet:
    """Ordered parameter points with their provenance.

    ``seed`` is ``"exhaustive"`` for the full reference grid. ``indices``
    holds each point's position in the reference grid when known.
    """

    points: np.ndarray
    seed: int | str
    grid_points_per_dim: int = 12
    stream: int = 0
    indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 4)
        if np.any(np.abs(self.points) > 1.0):
            raise ValueError("scenario components must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def exhaustive(self) -> bool:
        return self.seed == "exhaustive"

    def distinct(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct points (lexicographically sorted) and their empirical weights."""
        if len(self) == 0:
            raise ValueError("empty scenario set")
        pts, counts = np.unique(self.points, axis=0, return_counts=True)
        return pts, counts / len(self)


def grid_axis(points_per_dim: int) -> np.ndarray:
    m = int(points_per_dim)
    return -1.0 + 2.0 * np.arange(m) / (m - 1)


def build_reference_grid(points_per_dim: int = 12) -> ScenarioSet:
    """Tensor grid of ``m^4`` equidistant points, lexicographic (last index fastest)."""
    m = int(points_per_dim)
    if m < 2:
        raise ValueError(f"need at least 2 points per dimension, got {points_per_dim}")
    axis = grid_axis(m)
    mesh = np.meshgrid(axis, axis, axis, axis, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    return ScenarioSet(pts, "exhaustive", m, indices=np.arange(m**4))


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``; draws advance the counter."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_scenarios(grid: ScenarioSet, N: int, seed: int, stream: int = 0) -> ScenarioSet:
    """Draw ``N`` i.i.d. uniform points (with replacement) from an exhaustive grid."""
    if not grid.exhaustive:
        raise ValueError("can only sample from an exhaustive reference grid")
    if N < 0:
        raise ValueError("sample size must be nonnegative")
    idx = make_generator(seed, stream).integers(0, len(grid), size=int(N))
    return ScenarioSet(grid.points[idx], int(seed), grid.grid_points_per_dim, stream, idx)


def write_scenarios(scenarios: ScenarioSet, path) -> None:
    """CSV rows ``xi1..xi4`` plus a ``.json`` sidecar with the provenance."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi1", "xi2", "xi3", "xi4"])
        for row in scenarios.points:
            w.writerow([repr(float(v)) for v in row])
    meta = {
        "seed": scenarios.seed,
        "stream": scenarios.stream,
        "grid_points_per_dim": scenarios.grid_points_per_dim,
        "size": len(scenarios),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def read_scenarios(path) -> ScenarioSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["xi1", "xi2", "xi3", "xi4"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in r] for r in reader]
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return ScenarioSet(
        np.array(rows).reshape(-1, 4),
        meta.get("seed", "exhaustive"),
        meta.get("grid_points_per_dim", 12),
        meta.get("stream", 0),
    )
