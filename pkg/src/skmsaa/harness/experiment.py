"""Strategy comparison on the AR lasso (or a configured Markov source).

For every replication the same source produces one training set per
sampling strategy; SP and SP-m read the same trajectory. Every run solves
the lasso with the configured S-KM algorithm from ``x0 = 0`` and records,
per iteration, the sampled FPR, the regret of the ergodic average and its
distance to the generating parameter.

Regret is measured on a held-out pool drawn after a burn-in
(``experiment.regret_on = eval``), so all strategies of one replication are
scored on the same objective against its high-accuracy minimiser. With
``regret_on = train`` each run is scored on its own training set instead.

Seed layout, all split from ``process.seed``: ``(0,)`` source parameters,
``(1, rep)`` training trajectories, ``(2, rep)`` evaluation pool.
"""

from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..engine import CompositeLoss, RunRecord, StepSchedule, StepSizeWarning, run
from ..errors import SkmError
from ..operators import L1Norm, LeastSquares, Sample, SquaredLoss, Zero, build_algorithm
from ..processes import (
    ArProcess, ArProcessSpec, MarkovChainProcess, MarkovChainSpec, SamplingStrategy,
    derive_seed, draw_training_set, split_rng,
)
from .config import ExperimentConfig
from .reference import solve_reference

__all__ = [
    "build_process", "build_operator", "penalty", "run_radius", "held_out_pool",
    "run_single", "run_experiment", "measure_deviation_inputs", "ExperimentResult", "SUMMARY_HEADER",
    "samples_to_regret", "samples_to_equal_regret", "read_summary",
]

SUMMARY_HEADER = ("strategy", "rep", "final_regret", "final_fpr", "final_dist", "samples", "raw_draws")


def build_process(config: ExperimentConfig):
    """Return ``(process, x_true)``; ``x_true`` is ``None`` for Markov sources."""
    if config["process.kind"] == "ar":
        spec = ArProcessSpec.random(
            config["process.ar.dim"], config["process.ar.sparsity"], split_rng(config.seed, 0),
            low=config["process.ar.low"], high=config["process.ar.high"],
            noise_scale=config["process.ar.noise"], laplace_scale=config["process.ar.laplace_scale"])
        return ArProcess(spec), spec.x_true
    P = config["process.markov.matrix"]
    feats = config["process.markov.features"]
    resp = config["process.markov.responses"]
    payloads = None
    if feats is not None:
        resp = resp if resp is not None else [0.0] * len(feats)
        payloads = [Sample(np.atleast_1d(np.asarray(f, dtype=float)), r) for f, r in zip(feats, resp)]
    spec = MarkovChainSpec(np.asarray(P, dtype=float), payloads, config["process.markov.initial"])
    return MarkovChainProcess(spec), None


def penalty(config: ExperimentConfig):
    """The l1 penalty, or ``Zero`` when its weight is 0 (so SGD and PPA apply)."""
    lam = config["problem.lambda_reg"]
    return L1Norm(lam) if lam > 0 else Zero()


def build_operator(config: ExperimentConfig):
    return build_algorithm(config["algorithm.name"], SquaredLoss(), penalty(config),
                           config["algorithm.gamma"], config["algorithm.lambda"])


def run_radius(config: ExperimentConfig, x_true) -> Optional[float]:
    if config["run.radius"] is not None:
        return config["run.radius"]
    if x_true is not None and np.any(x_true):
        return 10.0 * float(np.linalg.norm(x_true))
    return None


def held_out_pool(process, seed: int, size: int, burn_in: int) -> list:
    """``size`` consecutive samples of a fresh trajectory after ``burn_in`` steps."""
    traj = process.trajectory(split_rng(seed))
    for _ in range(burn_in):
        next(traj)
    return [next(traj) for _ in range(size)]


class _Scorer:
    def __init__(self, data: LeastSquares, g):
        self.loss = CompositeLoss(data, SquaredLoss(), g)
        self.ref = solve_reference(data, g=g)
        self.ref_value = self.loss(self.ref.x_ref)

    def __call__(self, X):
        return self.loss(X) - self.ref_value


def _scorer_for(samples, g):
    return _Scorer(LeastSquares.from_samples(samples), g)


def _one_run(config, process, x_true, strategy: SamplingStrategy, rep: int, scorer=None):
    K = config["experiment.budget"]
    samples, raw = draw_training_set(process, strategy, K, derive_seed(config.seed, 1, rep))
    if len(samples) != K or raw != strategy.raw_draws(K):
        raise SkmError(f"{strategy.name}: sample accounting mismatch")
    if scorer is None:
        scorer = _scorer_for(samples, penalty(config))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        record = run(
            build_operator(config), samples, np.zeros(process.dim),
            schedule=StepSchedule(config["schedule.lambda"]), delta=config["run.delta"],
            radius=run_radius(config, x_true), mode=config["algorithm.mode"],
            draw_counts=strategy.cumulative_draws(K), regret_fn=scorer, x_true=x_true)
    if record.status == "budget-exhausted" and record.samples[-1] != raw:
        raise SkmError(f"{strategy.name}: engine consumed {record.samples[-1]} draws, expected {raw}")
    record.metadata.update(strategy=strategy.name, rep=rep, raw_draws=raw,
                           reference_residual=scorer.ref.residual)
    return record


def _replication(values: dict, rep: int, names: tuple):
    config = ExperimentConfig(values)
    process, x_true = build_process(config)
    scorer = None
    if config["experiment.regret_on"] == "eval":
        pool = held_out_pool(process, derive_seed(config.seed, 2, rep),
                             config["experiment.eval_size"], config["experiment.burn_in"])
        scorer = _scorer_for(pool, penalty(config))
    out = []
    for name in names:
        strategy = SamplingStrategy.parse(name)
        start = time.perf_counter()
        try:
            record = _one_run(config, process, x_true, strategy, rep, scorer)
        except (SkmError, ArithmeticError, ValueError) as exc:
            record = None
            error = f"{type(exc).__name__}: {exc}"
        else:
            error = record.message
        out.append((name, rep, record, time.perf_counter() - start, error))
    return out


def measure_deviation_inputs(config: ExperimentConfig, strategy: Optional[str] = None):
    """Empirical ``(R, kappa)`` for the deviation bound from one run of replication 0.

    ``R`` sums ``|T_lam(x^k; xi) - T_lam(x*; xi)|`` with ``x*`` the training-set
    minimiser; ``kappa`` is the largest distance between successive iterates.
    """
    process, x_true = build_process(config)
    K = config["experiment.budget"]
    name = strategy or config["experiment.strategies"][0]
    samples, _ = draw_training_set(process, SamplingStrategy.parse(name), K,
                                   derive_seed(config.seed, 1, 0))
    ref = solve_reference(LeastSquares.from_samples(samples), g=penalty(config))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        record = run(build_operator(config), samples, np.zeros(process.dim),
                     schedule=StepSchedule(config["schedule.lambda"]), delta=config["run.delta"],
                     radius=run_radius(config, x_true), mode=config["algorithm.mode"],
                     x_star=ref.x_ref)
    return record.deviation_sum, record.max_step


def run_single(config: ExperimentConfig, strategy: Optional[str] = None, rep: int = 0) -> RunRecord:
    """One run of one strategy, scored as in ``run_experiment``."""
    name = strategy or config["experiment.strategies"][0]
    (_, _, record, _, error), = _replication(config.values, rep, (name,))
    if record is None:
        raise SkmError(error)
    return record


@dataclass
class ExperimentResult:
    records: dict = field(default_factory=dict)     # (strategy, rep) -> RunRecord | None
    summary: list = field(default_factory=list)     # rows matching SUMMARY_HEADER
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None


def _summary_row(name, rep, record):
    if record is None or len(record) == 0:
        return [name, rep, "nan", "nan", "nan", 0, 0]
    return [name, rep, repr(float(record.regret[-1])), repr(float(record.fpr[-1])),
            repr(float(record.dist[-1])), len(record), int(record.samples[-1])]


def run_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> ExperimentResult:
    """Every strategy x replication; per-run CSVs, ``summary.csv`` and ``timing.csv``.

    A failing run is recorded (NaN summary row, message in ``errors.txt``)
    and the experiment carries on.
    """
    names = tuple(s.name for s in config.strategies)
    reps = range(config["experiment.replications"])
    jobs = config["experiment.jobs"]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_replication, [config.values] * len(reps), reps,
                                   [names] * len(reps)))
    else:
        chunks = [_replication(config.values, rep, names) for rep in reps]

    result = ExperimentResult(out_dir=Path(out_dir) if out_dir is not None else config.output)
    for chunk in chunks:
        for name, rep, record, wall, error in chunk:
            result.records[(name, rep)] = record
            result.timings[(name, rep)] = wall
            if record is None or record.status == "error":
                result.errors[(name, rep)] = error
            result.summary.append(_summary_row(name, rep, record))
    if write:
        _write(result, config)
    return result


def run_csv_path(out_dir: Path, name: str, rep: int) -> Path:
    return Path(out_dir) / "runs" / f"{name}_rep{rep:03d}.csv"


def _write(result: ExperimentResult, config: ExperimentConfig) -> None:
    out = result.out_dir
    (out / "runs").mkdir(parents=True, exist_ok=True)
    for (name, rep), record in result.records.items():
        if record is not None:
            record.to_csv(run_csv_path(out, name, rep))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(result.summary)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("strategy", "rep", "wall_seconds"))
        for (name, rep), wall in result.timings.items():
            w.writerow((name, rep, f"{wall:.6f}"))
    if result.errors:
        with open(out / "errors.txt", "w") as fh:
            for (name, rep), msg in result.errors.items():
                fh.write(f"{name} rep={rep}: {msg}\n")
    (out / "config.txt").write_text(config.to_text())


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["rep"] = int(row["rep"])
        for key in ("final_regret", "final_fpr", "final_dist"):
            row[key] = float(row[key])
        row["samples"] = int(row["samples"])
        row["raw_draws"] = int(row["raw_draws"])
    return rows


def samples_to_regret(record: RunRecord, target: float) -> Optional[int]:
    """Raw draws spent when the regret first drops to ``target`` (``None`` if never)."""
    hit = np.flatnonzero(record.regret <= target)
    return int(record.samples[hit[0]]) if hit.size else None


def samples_to_equal_regret(a: RunRecord, b: RunRecord):
    """Draws each run needs to reach the worse of the two final regrets."""
    target = max(float(a.regret[-1]), float(b.regret[-1]))
    return samples_to_regret(a, target), samples_to_regret(b, target)
