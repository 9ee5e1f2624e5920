"""Monte Carlo check of the out-of-sample confidence bound.

Each replication draws a single-trajectory training set, solves the SAA
lasso to high accuracy, then estimates the expected test loss of the SAA
solution on a fresh pool drawn after a burn-in. The replication violates
the bound when that estimate exceeds ``J_hat + L_cap * eps_K(beta)``, where
``L_cap`` is the largest per-sample test loss in the pool.

Seed layout, split from ``process.seed``: ``(3, rep)`` training data,
``(4, rep)`` test pool.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..bounds import out_of_sample_bound
from ..engine import CompositeLoss
from ..operators import LeastSquares, SquaredLoss
from ..processes import SamplingStrategy, derive_seed, draw_training_set, mixing_profile
from .config import ExperimentConfig
from .experiment import build_process, held_out_pool, penalty
from .reference import solve_reference

__all__ = ["CoverageReport", "coverage_study", "MIN_TEST_POOL", "burn_in_steps"]

MIN_TEST_POOL = 1000
COVERAGE_HEADER = ("rep", "j_hat", "test_loss", "l_cap", "bound", "violated")


@dataclass
class CoverageReport:
    beta: float
    c_value: float
    K: int
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    burn_in: int = 0

    @property
    def replications(self) -> int:
        return len(self.rows)

    @property
    def violations(self) -> int:
        return sum(1 for r in self.rows if r["violated"])

    @property
    def violation_rate(self) -> float:
        return self.violations / self.replications if self.rows else float("nan")

    @property
    def nominal_count(self) -> float:
        return self.beta * self.replications

    def summary(self) -> str:
        return (f"violations={self.violations}/{self.replications} "
                f"rate={self.violation_rate:.4f} beta={self.beta} nominal={self.nominal_count:g} "
                f"C={self.c_value} K={self.K} burn_in={self.burn_in}"
                + (f" flags={','.join(self.flags)}" if self.flags else ""))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COVERAGE_HEADER)
            for r in self.rows:
                w.writerow([r["rep"], repr(r["j_hat"]), repr(r["test_loss"]), repr(r["l_cap"]),
                            repr(r["bound"]), int(r["violated"])])


def burn_in_steps(config: ExperimentConfig, process) -> int:
    """Ten mixing scales for chains with a geometric profile, else the configured constant."""
    if config["process.kind"] == "markov":
        profile = mixing_profile(process.spec, config["process.markov.l_max"], config["bounds.c_value"])
        if profile.mixing_scale is not None:
            return int(np.ceil(10.0 * profile.mixing_scale))
    return config["experiment.burn_in"]


def coverage_study(config: ExperimentConfig, replications: Optional[int] = None,
                   test_pool_size: Optional[int] = None, out_dir=None) -> CoverageReport:
    M = replications or config["coverage.replications"]
    N = test_pool_size or config["coverage.test_pool"]
    K = config["coverage.budget"] or config["experiment.budget"]
    beta, c_value = config["bounds.beta"], config["bounds.c_value"]
    process, _ = build_process(config)
    burn = burn_in_steps(config, process)
    report = CoverageReport(beta, c_value, K, burn_in=burn)
    if N < MIN_TEST_POOL:
        report.flags.append("test-pool-too-small")
        warnings.warn(f"test pool of {N} < {MIN_TEST_POOL} samples; the test-loss estimate is noisy",
                      RuntimeWarning, stacklevel=2)
    if M < 50:
        report.flags.append("few-replications")
    g = penalty(config)
    for rep in range(M):
        train, _ = draw_training_set(process, SamplingStrategy("SP"), K, derive_seed(config.seed, 3, rep))
        data = LeastSquares.from_samples(train)
        sol = solve_reference(data, g=g)
        j_hat = CompositeLoss(data, SquaredLoss(), g)(sol.x_ref)
        pool = held_out_pool(process, derive_seed(config.seed, 4, rep), N, burn)
        A = np.stack([s.features for s in pool])
        b = np.array([s.response for s in pool])
        losses = (A @ sol.x_ref - b) ** 2 + g.value(sol.x_ref)
        test_loss = float(losses.mean())
        l_cap = float(losses.max())
        bound = out_of_sample_bound(j_hat, l_cap, K, beta, c_value) if l_cap > 0 else j_hat
        report.rows.append(dict(rep=rep, j_hat=j_hat, test_loss=test_loss, l_cap=l_cap,
                                bound=bound, violated=test_loss > bound))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / "coverage.csv")
        (out / "coverage_summary.txt").write_text(report.summary() + "\n")
    return report
