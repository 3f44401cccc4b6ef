"""Reference solves, error sweeps, rate tables and bound reports.

Every command reads an :class:`ExperimentConfig` and writes CSV/JSON into
``config.output_dir``. Replication ``r`` draws its scenarios from the
Philox stream keyed by ``(base_seed, r)``.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import error_stats as es
from .mesh_fem import ControlBounds, ControlField, build_mesh, l2_error_nested
from .persistence import read_control, write_control
from .prox_solver import SolverConfig, kkt_residual, semismooth_newton
from .random_field import build_reference_grid, sample_scenarios
from .saa_problem import ProblemSpec, SAAProblem

log = logging.getLogger(__name__)

DEFAULT_MESHES = (8, 12, 16, 24, 36, 48, 72)
MODES = ("coupled", "fixed-h", "fixed-N")

REFERENCE_FILE = "reference_control.p0"
REFERENCE_REPORT = "reference_report.json"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SolverFailure(RuntimeError):
    def __init__(self, report):
        super().__init__(f"solver did not converge: residual {report.final_residual:.3e}")
        self.report = report


@dataclass
class ExperimentConfig:
    alpha: float = 1e-3
    gamma: float = 1e-2
    lower: float = -6.0
    upper: float = 6.0
    points_per_dim: int = 3
    reference_n: int = 48
    reference_scenarios: str | int = "exhaustive"
    sweep_n_list: list | None = None
    sweep_N_list: list | None = None
    fixed_n: int | None = None
    fixed_N: int | None = None
    mode: str = "coupled"
    replications: int = 48
    base_seed: int = 0
    output_dir: str = "results"
    drop_last: int = 0
    deltas: list = field(default_factory=lambda: [0.1, 0.01, 1e-12])
    solver_tol: float = 1e-10
    max_newton: int = 50
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be nonnegative")
        if not self.lower <= 0 <= self.upper:
            raise ConfigError("bounds must satisfy lower <= 0 <= upper")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.points_per_dim < 2 or self.reference_n < 2 or self.replications < 1:
            raise ConfigError("points_per_dim, reference_n >= 2 and replications >= 1 required")
        if self.reference_scenarios != "exhaustive" and int(self.reference_scenarios) < 1:
            raise ConfigError("reference_scenarios must be 'exhaustive' or a positive integer")
        for n in self.meshes():
            if n < 2 or self.reference_n % n:
                raise ConfigError(f"sweep mesh n={n} does not divide reference_n={self.reference_n}")
        for d in self.deltas:
            if not 0 < d < 1:
                raise ConfigError(f"delta must lie in (0, 1), got {d}")
        for k, v in self.constants.items():
            if not v > 0:
                raise ConfigError(f"constant {k} must be positive, got {v}")

    def meshes(self) -> list[int]:
        if self.sweep_n_list is not None:
            return [int(n) for n in self.sweep_n_list]
        return [n for n in DEFAULT_MESHES if n < self.reference_n and self.reference_n % n == 0]

    def sample_sizes(self) -> list[int]:
        if self.sweep_N_list is not None:
            return [int(N) for N in self.sweep_N_list]
        return [n * n for n in self.meshes()]

    def cells(self) -> list[tuple[int, int]]:
        """(n, N) pairs of the sweep in emission order."""
        meshes, sizes = self.meshes(), self.sample_sizes()
        if self.mode == "coupled":
            return [(n, n * n) for n in meshes]
        if self.mode == "fixed-h":
            n = int(self.fixed_n or meshes[0])
            if self.reference_n % n:
                raise ConfigError(f"fixed_n={n} does not divide reference_n={self.reference_n}")
            return [(n, N) for N in sizes]
        N = int(self.fixed_N or sizes[0])
        return [(n, N) for n in meshes]

    def bounds(self) -> ControlBounds:
        return ControlBounds(self.lower, self.upper)

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.solver_tol, max_newton=self.max_newton)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


PRESETS = {
    "desk": dict(points_per_dim=3, reference_n=48, replications=16),
    "paper": dict(points_per_dim=12, reference_n=144, replications=48),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return ExperimentConfig(**(PRESETS[name] | overrides))


def worker_count() -> int:
    try:
        cap = int(os.environ.get("THREADS", "0"))
    except ValueError:
        cap = 0
    n = os.cpu_count() or 1
    return max(1, min(cap, n) if cap > 0 else n)


def _problem(config: ExperimentConfig, n: int, scenarios) -> SAAProblem:
    spec = ProblemSpec(config.alpha, config.gamma, config.bounds(), n, scenarios)
    return SAAProblem(spec)


def reference_scenarios(config: ExperimentConfig):
    grid = build_reference_grid(config.points_per_dim)
    if config.reference_scenarios == "exhaustive":
        return grid
    # separate stream from the replications
    return sample_scenarios(grid, int(config.reference_scenarios), config.base_seed, 2**63)


def cmd_reference(config: ExperimentConfig):
    """Solve the reference problem and persist control plus solver report."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem = _problem(config, config.reference_n, reference_scenarios(config))
    u, report = semismooth_newton(problem, config.solver())
    kkt = kkt_residual(problem, u)
    write_control(u, out / REFERENCE_FILE)
    payload = json.loads(report.to_json())
    payload |= {"kkt_residual": kkt, "n": config.reference_n,
                "scenarios": len(problem.spec.scenarios), "seconds": time.perf_counter() - t0}
    (out / REFERENCE_REPORT).write_text(json.dumps(payload, indent=2))
    (out / "reference_config.json").write_text(config.to_json())
    if not report.converged:
        raise SolverFailure(report)
    return u, report


def load_reference(config: ExperimentConfig) -> ControlField:
    path = Path(config.output_dir) / REFERENCE_FILE
    if not path.exists():
        raise FileNotFoundError(f"reference control {path} not found; run 'reference' first")
    u = read_control(path)
    if u.mesh_n != config.reference_n:
        raise ConfigError(f"stored reference has n={u.mesh_n}, config says {config.reference_n}")
    return u


def _run_cell(args):
    config, n, N, r, uref_values = args
    grid = build_reference_grid(config.points_per_dim)
    scen = sample_scenarios(grid, N, config.base_seed, r)
    u, report = semismooth_newton(_problem(config, n, scen), config.solver())
    if not report.converged:
        return n, N, r, None, report.final_residual
    err = l2_error_nested(u, ControlField(config.reference_n, uref_values))
    return n, N, r, err, report.final_residual


def run_sweep(config: ExperimentConfig, uref: ControlField) -> tuple[list, list]:
    tasks = [(config, n, N, r, uref.values)
             for n, N in config.cells() for r in range(config.replications)]
    workers = min(worker_count(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        results = [_run_cell(t) for t in tasks]
    records, failures = [], []
    for n, N, r, err, res in results:
        if err is None:
            failures.append({"n": n, "N": N, "replication": r, "final_residual": res})
        else:
            records.append(es.ErrorRecord(1.0 / n, N, r, err))
    return records, failures


def experiment_csv(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / f"errors_{config.mode}.csv"


def cmd_experiment(config: ExperimentConfig) -> list:
    """Run the configured sweep against the stored reference and write the error table."""
    uref = load_reference(config)
    records, failures = run_sweep(config, uref)
    path = experiment_csv(config)
    es.write_records(records, path)
    if failures:
        path.with_suffix(".failures.json").write_text(json.dumps(failures, indent=2))
        log.warning("%d solves failed to converge", len(failures))
    return records


def rate_table(records, drop_last: int = 0) -> dict:
    """Per-(h, N) mean and Luxemburg statistics plus their rate fits.

    Sweeps over ``h`` are fitted against ``h``; sweeps at a single ``h`` are
    fitted against ``1/N``.
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.h, rec.N), []).append(rec.error_l2)
    rows = []
    for (h, N), errs in sorted(groups.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
        rows.append({"h": h, "N": N, "count": len(errs),
                     "mean": es.empirical_mean(errs), "luxemburg": es.empirical_luxemburg(errs)})
    h_sweep = len({r["h"] for r in rows}) > 1
    variable = "h" if h_sweep else "1/N"
    table = {"variable": variable, "drop_last": drop_last, "groups": rows}
    scale = [r["h"] if h_sweep else 1.0 / r["N"] for r in rows]
    for stat in ("mean", "luxemburg"):
        pairs = [(s, r[stat]) for s, r in zip(scale, rows)]
        try:
            rate, const = es.fit_rate(pairs, drop_last)
        except ValueError:
            rate, const = None, None
        table[f"{stat}_rate"] = rate
        table[f"{stat}_constant"] = const
    return table


def cmd_rates(csv_path, drop_last: int = 0, output_dir=None) -> dict:
    csv_path = Path(csv_path)
    table = rate_table(es.read_records(csv_path), drop_last)
    out = Path(output_dir) if output_dir else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem
    stem = stem.replace("errors", "rates") if "errors" in stem else f"rates_{stem}"
    (out / f"{stem}.json").write_text(json.dumps(table, indent=2))
    with (out / f"{stem}.csv").open("w") as fh:
        fh.write("h,N,count,mean,luxemburg\n")
        for r in table["groups"]:
            fh.write(f"{r['h']!r},{r['N']},{r['count']},{r['mean']!r},{r['luxemburg']!r}\n")
    return table


def constants_bundle(config: ExperimentConfig, overrides: dict | None = None) -> es.ConstantsBundle:
    over = dict(config.constants) | dict(overrides or {})
    for k, v in over.items():
        if not v > 0:
            raise ConfigError(f"constant {k} must be positive, got {v}")
    return es.ConstantsBundle.for_box(
        config.lower, config.upper, alpha=config.alpha, gamma=config.gamma, **over
    )


def cmd_bounds(config: ExperimentConfig, overrides: dict | None = None) -> dict:
    """Evaluate the reliable estimate and the derived curves on the sweep grid."""
    try:
        bundle = constants_bundle(config, overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = []
    c1_by_h = {}
    c2 = None
    for n, N in config.cells():
        h = 1.0 / n
        for delta in config.deltas:
            eps = es.epsilon_for(N, delta)
            rep = es.theorem41_constants(bundle, h, eps)
            c1_by_h[h], c2 = rep.c1, rep.c2
            rows.append({
                "h": h, "N": N, "delta": delta, "epsilon": eps,
                "bound": rep.evaluations[0]["bound"],
                "terms": rep.terms,
                "c1": rep.c1,
                "tail_probability": es.tail_bound(N, eps),
            })
    curves = [
        {"h": 1.0 / n, "N": N, "c1": c1_by_h[1.0 / n],
         "expectation_bound": es.expectation_bound(c1_by_h[1.0 / n], c2, 1.0 / n, N),
         "luxemburg_bound": es.luxemburg_bound(c1_by_h[1.0 / n], c2, 1.0 / n, N)}
        for n, N in config.cells()
    ]
    report = {
        "c2": c2,
        "c1_per_h": {repr(h): c for h, c in c1_by_h.items()},
        "constants": asdict(bundle) | {"C_star": bundle.C_star},
        "evaluations": rows,
        "curves": curves,
    }
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bounds.json").write_text(json.dumps(report, indent=2))
    return report
