"""Seeded experiment sweeps over dataset sizes and their reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._validation import check_count, check_scalar
from .data import BehaviorDistribution, occupancy_ratio_bound, sample_dataset
from .model import InfeasibleError, build_random_cmdp, exact_eval, optimal_constrained, optimal_unconstrained
from .solver import MODES, KnownModel, PrimalDualSolver, evaluate_mixture

__all__ = [
    "ExperimentSpec",
    "ReportRow",
    "UsageError",
    "Oracle",
    "prepare_instance",
    "run_experiment",
    "report",
    "CSV_HEADER",
]

logger = logging.getLogger(__name__)

CSV_HEADER = ("n", "seed", "mode", "J0_mix", "J0_star", "subopt", "viol_max", "c_star", "T", "wall_ms")
_SOLVER_KEYS = {"mode", "t_iters", "alpha", "eta", "epsilon", "phi", "c_star", "max_iters", "occupancy_estimate"}


class UsageError(ValueError):
    """Bad input to the reporting or sweep entry points."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: a fixed instance, a behavior distribution and a grid of ``n``.

    ``solver`` holds overrides among ``mode, t_iters, alpha, eta, epsilon,
    phi, c_star, max_iters, occupancy_estimate``; ``phi`` and ``c_star``
    default to the oracle values.  ``tau`` sets the constraint thresholds of
    the instance.
    """

    sizes: tuple = (6, 3, 5, 0)
    gamma: float = 0.9
    instance_seed: int = 0
    behavior: str = "mix_optimal"
    kappa: float = 0.5
    n_grid: tuple = (500, 2000, 8000, 32000)
    num_seeds: int = 10
    seed: int = 0
    tau: tuple | None = None
    solver: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(x) for x in self.sizes))
        object.__setattr__(self, "n_grid", tuple(int(x) for x in self.n_grid))
        if self.tau is not None:
            object.__setattr__(self, "tau", tuple(float(x) for x in self.tau))
        if len(self.sizes) != 4:
            raise UsageError(f"sizes must be (S, A, d, I), got {self.sizes}")
        if self.behavior not in ("uniform", "mix_optimal"):
            raise UsageError(f"behavior must be 'uniform' or 'mix_optimal', got {self.behavior!r}")
        check_scalar(self.kappa, "kappa", min_val=0.0, max_val=1.0)
        if not self.n_grid:
            raise UsageError("n_grid is empty")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise UsageError(f"n_grid must be strictly increasing, got {list(self.n_grid)}")
        for n in self.n_grid:
            check_count(n, "n", min_val=1)
        check_count(self.num_seeds, "num_seeds", min_val=1)
        unknown = set(self.solver) - _SOLVER_KEYS
        if unknown:
            raise UsageError(f"unknown solver overrides: {sorted(unknown)}")
        if self.solver.get("mode", "unconstrained") not in MODES:
            raise UsageError(f"mode must be one of {MODES}")

    @property
    def mode(self) -> str:
        return self.solver.get("mode", "unconstrained")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise UsageError(f"unknown spec keys: {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["sizes"], doc["n_grid"] = list(self.sizes), list(self.n_grid)
        if self.tau is not None:
            doc["tau"] = list(self.tau)
        return doc


@dataclass(frozen=True)
class ReportRow:
    n: int
    seed: int
    mode: str
    J0_mix: float
    J0_star: float
    subopt: float
    viol_max: float
    c_star: float
    T: int
    wall_ms: float

    def as_csv(self) -> list[str]:
        return [str(self.n), str(self.seed), self.mode] + [
            repr(float(getattr(self, k))) for k in ("J0_mix", "J0_star", "subopt", "viol_max", "c_star")
        ] + [str(self.T), f"{self.wall_ms:.3f}"]


@dataclass(frozen=True, eq=False)
class Oracle:
    """Everything the evaluator knows about an instance, computed once."""

    mdp: object
    behavior: BehaviorDistribution
    j0_star: float
    c_star: float
    phi: float | None


def prepare_instance(spec: ExperimentSpec) -> Oracle:
    """Build the instance, its optimum and the behavior distribution.

    Raises ``InfeasibleError`` for a constrained instance with no feasible policy.
    """
    mdp = build_random_cmdp(spec.instance_seed, spec.sizes, spec.gamma)
    if spec.tau is not None:
        mdp = mdp.with_tau(spec.tau)
    phi = None
    if spec.mode == "unconstrained" or mdp.num_constraints == 0:
        pi_star, j0_star = optimal_unconstrained(mdp)
        mu_star = exact_eval(mdp, pi_star).mu
    else:
        opt = optimal_constrained(mdp)
        j0_star, mu_star, phi = opt.j0_star, opt.mu_star, opt.slater_margin
        if not phi > 0:
            raise InfeasibleError(f"Slater margin {phi:.3g} is not positive")
    S, A = mdp.num_states, mdp.num_actions
    if spec.behavior == "uniform":
        mu_b = BehaviorDistribution.uniform(S * A)
    else:
        mu_b = BehaviorDistribution.blend(mu_star, spec.kappa)
    return Oracle(mdp, mu_b, float(j0_star), occupancy_ratio_bound(mu_star, mu_b), phi)


def _dataset_seed(spec: ExperimentSpec, n: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([spec.seed, rep, n])


def _run_point(spec: ExperimentSpec, oracle: Oracle, n: int, rep: int) -> ReportRow:
    mdp = oracle.mdp
    ds = sample_dataset(mdp, oracle.behavior, n, np.random.default_rng(_dataset_seed(spec, n, rep)))
    overrides = dict(spec.solver)
    overrides.setdefault("c_star", oracle.c_star)
    phi = overrides.pop("phi", oracle.phi)
    est = PrimalDualSolver(**overrides, slater_margin=phi)
    known = KnownModel.from_mdp(mdp)
    start = time.perf_counter()
    est.fit(ds, known)
    wall_ms = 1e3 * (time.perf_counter() - start)
    js = evaluate_mixture(mdp, est.mixture_)
    viol = 0.0
    if spec.mode != "unconstrained" and mdp.num_constraints:
        viol = float(np.max(np.maximum(0.0, mdp.tau - js[1:])))
    j0 = float(js[0])
    return ReportRow(
        n=n, seed=rep, mode=spec.mode, J0_mix=j0, J0_star=oracle.j0_star,
        subopt=oracle.j0_star - j0, viol_max=viol, c_star=oracle.c_star,
        T=est.config_.t_iters, wall_ms=wall_ms,
    )


def _run_point_args(args):
    return _run_point(*args)


def run_experiment(spec: ExperimentSpec, *, workers: int = 1, output=None) -> list[ReportRow]:
    """Run every ``(n, seed)`` point of ``spec``.

    Rows are appended to ``output`` (default ``spec.output``) as they finish,
    in grid order.  An infeasible constrained instance yields no rows; the
    reason is logged.
    """
    check_count(workers, "workers", min_val=1)
    try:
        oracle = prepare_instance(spec)
    except InfeasibleError as exc:
        logger.warning("skipping all points of this spec: infeasible instance (%s)", exc)
        return []
    points = [(spec, oracle, n, rep) for n in spec.n_grid for rep in range(spec.num_seeds)]
    out_path = output if output is not None else spec.output
    handle = None
    if out_path is not None:
        handle = open(out_path, "w", newline="")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        handle.flush()
    rows = []
    try:
        if workers == 1:
            results = map(_run_point_args, points)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_point_args, points)
        try:
            for row in results:
                rows.append(row)
                logger.info("n=%d seed=%d subopt=%.4f viol=%.4f", row.n, row.seed, row.subopt, row.viol_max)
                if handle is not None:
                    writer.writerow(row.as_csv())
                    handle.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if handle is not None:
            handle.close()
    return rows


def _quartiles(values) -> tuple[float, float]:
    q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(med), float(q3 - q1)


def report(rows, format: str = "csv") -> str:
    """Render rows as CSV or as per-``n`` medians with interquartile ranges."""
    rows = list(rows)
    if not rows:
        raise UsageError("no rows to report")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())
        return buf.getvalue()
    if format != "summary":
        raise UsageError(f"format must be 'csv' or 'summary', got {format!r}")
    lines = ["n,mode,rows,subopt_median,subopt_iqr,viol_median,viol_iqr"]
    for n in sorted({r.n for r in rows}):
        group = [r for r in rows if r.n == n]
        modes = "|".join(sorted({r.mode for r in group}))
        s_med, s_iqr = _quartiles([r.subopt for r in group])
        v_med, v_iqr = _quartiles([r.viol_max for r in group])
        lines.append(f"{n},{modes},{len(group)},{s_med:.6g},{s_iqr:.6g},{v_med:.6g},{v_iqr:.6g}")
    return "\n".join(lines) + "\n"


def read_rows(path) -> list[ReportRow]:
    """Parse a report CSV written by ``run_experiment`` or ``report``."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise UsageError(f"unexpected report header {reader.fieldnames}")
        return [
            ReportRow(
                n=int(r["n"]), seed=int(r["seed"]), mode=r["mode"],
                J0_mix=float(r["J0_mix"]), J0_star=float(r["J0_star"]), subopt=float(r["subopt"]),
                viol_max=float(r["viol_max"]), c_star=float(r["c_star"]), T=int(r["T"]),
                wall_ms=float(r["wall_ms"]),
            )
            for r in reader
        ]
