"""Error statistics, rate fits and the theoretical error bounds."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .forward_adjoint import FRIEDRICHS_UNIT_SQUARE
from .mesh_fem import ControlField
from .random_field import kappa_bounds, sample_scenarios
from .saa_problem import SAAProblem


@dataclass(frozen=True)
class ErrorRecord:
    h: float
    N: int
    replication: int
    error_l2: float

    def __post_init__(self):
        if not self.error_l2 >= 0:
            raise ValueError("L2 error must be nonnegative")


CSV_HEADER = ["h", "N", "replication", "error_l2"]


def write_records(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([repr(float(r.h)), int(r.N), int(r.replication), repr(float(r.error_l2))])


def read_records(path) -> list[ErrorRecord]:
    """Parse an error table; malformed rows raise ``ValueError`` naming the line."""
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 fields, got {len(row)}")
                records.append(ErrorRecord(float(row[0]), int(row[1]), int(row[2]), float(row[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


def empirical_mean(errors) -> float:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("need at least one error sample")
    return float(e.mean())


def empirical_luxemburg(errors) -> float:
    """Smallest ``tau`` with ``mean(exp(e_i^2 / tau^2)) <= 2``."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("need at least one error sample")
    if np.any(e < 0):
        raise ValueError("errors must be nonnegative")
    emax = e.max()
    if emax == 0.0:
        return 0.0
    m = e.size
    e2 = (e / emax) ** 2
    log_target = math.log(2.0 * m)

    # scaled variable t = tau / emax; log-sum-exp avoids overflow near the lower end
    def excess(t):
        return logsumexp(e2 / t**2) - log_target

    lo = 1.0 / math.sqrt(math.log(2.0 * m))
    hi = 1.0 / math.sqrt(math.log(2.0))
    if excess(hi) >= 0.0:
        return emax * hi
    t = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(emax * t)


def fit_rate(pairs, drop_last: int = 0) -> tuple[float, float]:
    """Least-squares fit ``value ~ constant * scale**rate`` on log-log axes.

    The ``drop_last`` pairs with the smallest scale are discarded first.
    """
    pairs = sorted(((float(s), float(v)) for s, v in pairs), key=lambda p: -p[0])
    if drop_last < 0:
        raise ValueError("drop_last must be nonnegative")
    kept = pairs[: len(pairs) - drop_last] if drop_last else pairs
    if len(kept) < 2:
        raise ValueError(f"need at least 2 points after dropping {drop_last}, have {len(kept)}")
    s, v = np.array(kept).T
    if np.any(s <= 0) or np.any(v <= 0):
        raise ValueError("rate fit needs positive scales and values")
    A = np.column_stack([np.log(s), np.ones_like(s)])
    (rate, logc), *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    return float(rate), float(np.exp(logc))


@dataclass
class ConstantsBundle:
    """Deterministic constants entering the reliable error estimate."""

    alpha: float = 1e-3
    gamma: float = 1e-2
    C_D: float = FRIEDRICHS_UNIT_SQUARE
    kappa_min: float = field(default_factory=lambda: kappa_bounds()[0])
    kappa_max: float = field(default_factory=lambda: kappa_bounds()[1])
    kappa_max_c1: float = field(default_factory=lambda: kappa_bounds()[2])
    C_U: float = 1.0
    C_Y: float = 1.0
    C_H2: float = 1.0
    norm_ud_l2: float = 1.0
    norm_ustar_l2_bound: float = 6.0
    norm_ustar_h1_bound: float | None = None

    def __post_init__(self):
        if self.norm_ustar_h1_bound is None:
            self.norm_ustar_h1_bound = self.default_h1_bound()
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"constant {k} must be positive, got {v}")

    @classmethod
    def for_box(cls, lower: float = -6.0, upper: float = 6.0, **kw) -> "ConstantsBundle":
        kw.setdefault("norm_ustar_l2_bound", max(abs(lower), upper))
        b = cls(**kw)
        if "norm_ustar_h1_bound" not in kw:
            b.norm_ustar_h1_bound = b.default_h1_bound(lower, upper)
        return b

    def default_h1_bound(self, lower: float = -6.0, upper: float = 6.0) -> float:
        """A priori H1 bound on the optimal control from the prox regularity argument."""
        z_h1 = (self.C_D + 1) * self.C_D / self.kappa_min * self.C_star
        return z_h1 / self.alpha + (abs(lower) + upper)

    @property
    def C_star(self) -> float:
        return self.C_D**2 / self.kappa_min * self.norm_ustar_l2_bound + self.norm_ud_l2

    def gradient_tail_scale(self, norm_u: float | None = None) -> float:
        """Almost-sure bound on the deviation of one sampled gradient."""
        nu = self.norm_ustar_l2_bound if norm_u is None else norm_u
        a = self.C_D**2 / self.kappa_min
        return 2 * a * (a * nu + self.norm_ud_l2)


@dataclass
class BoundReport:
    c1: float
    c2: float
    constants: dict
    terms: dict = field(default_factory=dict)
    evaluations: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def bound_terms(b: ConstantsBundle, h: float, epsilon: float) -> dict:
    """The four terms of the reliable estimate at mesh width ``h`` and accuracy ``epsilon``."""
    a, cd, km, cs = b.alpha, b.C_D, b.kappa_min, b.C_star
    cu = b.C_U
    return {
        "mesh": (1 / a) * h * (8 * cu**0.5 * a + 17 * cu * a + 16 * cu * cd**4 / km**2)
        * b.norm_ustar_h1_bound,
        "sampling": (32 / a) * epsilon * (cd**2 * cs / km),
        "interpolation": (4 / a) * h * (cu**0.5 * (cd + 1) * cd * cs / km),
        "state": (32 / a) * h**2 * (
            b.C_Y**2 * b.C_H2**2 * b.kappa_max**3.5 / km**8.5 * b.kappa_max_c1**4 * cs
        ),
    }


def theorem41_constants(bundle: ConstantsBundle, h: float, epsilon: float) -> BoundReport:
    """Evaluate the reliable estimate and split it into ``c1 h + c2 epsilon``.

    ``c1`` depends on ``h`` through the quadratic state-error term and is
    reported for the given ``h`` only.
    """
    if h < 0 or epsilon < 0:
        raise ValueError("h and epsilon must be nonnegative")
    terms = bound_terms(bundle, h, epsilon)
    bound = sum(terms.values())
    c2 = (32 / bundle.alpha) * bundle.C_D**2 * bundle.C_star / bundle.kappa_min
    per_h = bound_terms(bundle, 1.0, 0.0)
    c1 = per_h["mesh"] + per_h["interpolation"] + per_h["state"] * h
    return BoundReport(
        c1,
        c2,
        asdict(bundle) | {"C_star": bundle.C_star},
        terms,
        [{"h": h, "epsilon": epsilon, "bound": bound}],
    )


def reliable_bound(bundle: ConstantsBundle, h: float, epsilon: float) -> float:
    return sum(bound_terms(bundle, h, epsilon).values())


def epsilon_for(N: int, delta: float) -> float:
    """Smallest accuracy admitted by the sample-size rule ``N >= 2 ln(2/delta)/eps^2``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2 * math.log(2 / delta) / N)


def tail_bound(N: float, epsilon: float) -> float:
    return min(1.0, 2.0 * math.exp(-(epsilon**2) * N / 2.0))


def expectation_bound(c1: float, c2: float, h: float, N: float) -> float:
    return c1 * h + c2 * math.sqrt(2 * math.pi) / math.sqrt(N)


def luxemburg_bound(c1: float, c2: float, h: float, N: float) -> float:
    return 3 * math.sqrt(2) * (c1 * h + c2 / math.sqrt(N))


def high_probability_bound(c1: float, c2: float, h: float, N: float, delta: float) -> float:
    """``c1 h + c2 sqrt(2 ln(2/delta)/N)``, valid with probability ``1 - delta``."""
    return c1 * h + c2 * epsilon_for(N, delta)


@dataclass
class TailExperimentResult:
    epsilon: list
    frequency: list
    bound: list
    standard_error: list
    tau: float
    deviations: list

    def satisfied(self, n_se: float = 2.0) -> list:
        return [f <= b + n_se * s for f, b, s in zip(self.frequency, self.bound, self.standard_error)]


def gradient_tail_experiment(
    exact: SAAProblem,
    u_ref: ControlField,
    replications: int,
    N: int,
    epsilon_grid,
    seed: int = 0,
    constants: ConstantsBundle | None = None,
) -> TailExperimentResult:
    """Exceedance frequencies of the sampled gradient deviation versus ``2 exp(-eps^2 N / 2)``.

    ``exact`` must be built on the exhaustive grid; each replication samples
    ``N`` scenarios from it and measures ``||grad F_N(u) - grad F(u)||``.
    """
    if not exact.spec.scenarios.exhaustive:
        raise ValueError("the exact problem must use the exhaustive scenario grid")
    u = exact.check(u_ref)
    constants = constants or ConstantsBundle(alpha=exact.alpha, gamma=exact.gamma)
    mesh = exact.mesh
    norm_yd = float(np.sqrt(exact.y_d @ (mesh.mass_full @ exact.y_d)))
    tau = replace(constants, norm_ud_l2=norm_yd).gradient_tail_scale(exact.norm(u))

    # per-scenario adjoint averages, indexed like the grid
    grid = exact.spec.scenarios
    per = np.empty((len(grid), mesh.n_triangles))
    lookup = {tuple(x): k for k, x in enumerate(np.unique(grid.points, axis=0))}
    for k, x in enumerate(grid.points):
        sys = exact.systems[lookup[tuple(x)]]
        per[k] = mesh.cell_average @ sys.adjoint(sys.state(u), exact.y_d)
    g_exact = exact.alpha * u - per.mean(axis=0)

    devs = []
    for r in range(replications):
        s = sample_scenarios(grid, N, seed, r)
        g_N = exact.alpha * u - per[s.indices].mean(axis=0)
        devs.append(exact.norm(g_N - g_exact))
    devs = np.array(devs)
    eps = [float(e) for e in epsilon_grid]
    freq = [float(np.mean(devs >= e * tau)) for e in eps]
    bnd = [tail_bound(N, e) for e in eps]
    se = [math.sqrt(max(b * (1 - b), 0.0) / replications) for b in bnd]
    return TailExperimentResult(eps, freq, bnd, se, tau, devs.tolist())
