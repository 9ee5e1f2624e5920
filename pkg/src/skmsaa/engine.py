"""Stochastic Krasnosel'skii-Mann iteration.

Each iteration consumes one training sample ``xi_k`` and performs::

    x_k    = anchor + lam_k * (T(anchor; xi_k) - anchor)
    xbar_k = (k - 1)/k * xbar_{k-1} + x_k / k

where ``anchor`` is the previous raw iterate (``mode="raw"``, default) or
the previous ergodic average (``mode="averaged-anchor"``). The sampling
noise is never injected explicitly: it is whatever ``T(.; xi_k)`` differs
from the population operator by.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import CapabilityError, ShapeError, SkmError, ValidationError
from .operators import (
    Function, L1Norm, LeastSquares, Operator, Sample, SquaredLoss, Zero,
    as_point, step_size_violations,
)

__all__ = [
    "StepSchedule", "IterationState", "RunRecord", "CompositeLoss",
    "km_step", "run", "ergodic_fpr", "regret", "StepSizeWarning", "MODES",
]

MODES = ("raw", "averaged-anchor")


class StepSizeWarning(UserWarning):
    """A gradient step size lies outside (0, 2 beta) for some sample."""


@dataclass(frozen=True)
class StepSchedule:
    """Relaxation weights ``lam_k`` (k = 1, 2, ...), all strictly in (0, 1).

    Either a constant or an explicit sequence; past the end of a sequence
    the last weight is repeated.
    """

    constant: Optional[float] = 0.5
    sequence: Optional[tuple] = None

    def __post_init__(self):
        if self.sequence is not None:
            seq = tuple(float(v) for v in self.sequence)
            if not seq:
                raise ValidationError("empty step sequence")
            object.__setattr__(self, "sequence", seq)
            object.__setattr__(self, "constant", None)
            values = seq
        else:
            values = (float(self.constant),)
        if not all(0.0 < v < 1.0 for v in values):
            raise ValidationError("every relaxation weight must lie strictly in (0, 1)")

    def __call__(self, k: int) -> float:
        if self.sequence is None:
            return self.constant
        return self.sequence[min(k, len(self.sequence)) - 1]

    def weights(self, K: int) -> np.ndarray:
        return np.array([self(k) for k in range(1, K + 1)])

    def total(self, K: int) -> float:
        """``Lambda_K = sum_{k<=K} lam_k``."""
        return float(self.weights(K).sum())

    def tau_min(self, K: int) -> float:
        """``inf_k lam_k (1 - lam_k)`` over the first ``K`` weights."""
        w = self.weights(K)
        return float(np.min(w * (1.0 - w)))


@dataclass(frozen=True, eq=False)
class IterationState:
    k: int
    x: np.ndarray
    x_bar: np.ndarray
    last_fpr: float = 0.0
    samples_consumed: int = 0
    residual: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x0) -> "IterationState":
        x0 = as_point(x0)
        return cls(0, x0, x0.copy())


def km_step(state: IterationState, T: Operator, sample: Optional[Sample], lam: float,
            mode: str = "raw", draws: int = 1) -> IterationState:
    """One S-KM update; ``last_fpr`` is ``|T(anchor) - anchor|^2``."""
    if not 0.0 < lam < 1.0:
        raise ValidationError(f"relaxation weight must lie in (0, 1), got {lam}")
    if mode == "raw":
        anchor = state.x
    elif mode == "averaged-anchor":
        anchor = state.x_bar
    else:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
    if sample is not None and sample.dim != anchor.shape[0]:
        raise ShapeError(f"sample has dimension {sample.dim}, iterate has {anchor.shape[0]}")
    resid = T(anchor, sample) - anchor
    if resid.shape != anchor.shape:
        raise ShapeError("operator changed the iterate dimension")
    x = anchor + lam * resid
    k = state.k + 1
    x_bar = state.x_bar + (x - state.x_bar) / k
    return IterationState(k, x, x_bar, float(resid @ resid), state.samples_consumed + draws, resid)


class CompositeLoss:
    """Empirical composite loss ``mean_i f(x; xi_i) + g(x)``.

    Supports the squared loss (through its Gram form) plus an ``L1Norm`` or
    ``Zero`` penalty, and evaluates a whole stack of points at once.
    """

    def __init__(self, samples_or_data, f: Function = None, g: Function = None):
        f = SquaredLoss() if f is None else f
        g = Zero() if g is None else g
        if not isinstance(f, (SquaredLoss, LeastSquares)):
            raise CapabilityError("composite loss supports the squared loss only")
        if not isinstance(g, (L1Norm, Zero)):
            raise CapabilityError("composite loss supports l1 or zero penalties only")
        if isinstance(samples_or_data, LeastSquares):
            self.data = samples_or_data
        elif isinstance(f, LeastSquares):
            self.data = f
        else:
            self.data = LeastSquares.from_samples(samples_or_data)
        self.g = g
        self.l1 = g.weight if isinstance(g, L1Norm) else 0.0

    @property
    def dim(self) -> int:
        return self.data.gram.shape[0]

    def __call__(self, x) -> np.ndarray | float:
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ShapeError(f"points have dimension {X.shape[1]}, loss has {self.dim}")
        Q, q, c = self.data.gram, self.data.moment, self.data.offset
        vals = np.einsum("ij,jk,ik->i", X, Q, X) - 2.0 * X @ q + c
        if self.l1:
            vals = vals + self.l1 * np.abs(X).sum(axis=1)
        return float(vals[0]) if single else vals


def regret(x, samples, f: Function = None, g: Function = None, x_ref=None) -> float:
    """``L(x) - L(x_ref)`` for the full-sample empirical composite loss."""
    if x_ref is None:
        raise ValidationError("a reference point is required")
    if not isinstance(samples, LeastSquares) and len(samples) == 0:
        raise ValidationError("empty dataset")
    loss = samples if isinstance(samples, CompositeLoss) else CompositeLoss(samples, f, g)
    return loss(as_point(x)) - loss(as_point(x_ref))


@dataclass(eq=False)
class RunRecord:
    """Per-iteration metrics of one run plus its terminal status.

    ``samples`` holds cumulative raw draws. ``status`` is ``converged``,
    ``budget-exhausted`` or ``error``.
    """

    k: np.ndarray
    fpr: np.ndarray
    regret: np.ndarray
    dist: np.ndarray
    samples: np.ndarray
    status: str
    weights: np.ndarray
    x_final: np.ndarray
    x_bar_final: np.ndarray
    radius: Optional[float] = None
    message: str = ""
    residuals: Optional[np.ndarray] = None
    max_step: float = 0.0
    deviation_sum: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    HEADER = ("k", "fpr", "regret", "dist", "samples")

    def __len__(self) -> int:
        return int(self.k.shape[0])

    def rows(self):
        for i in range(len(self)):
            yield (int(self.k[i]), float(self.fpr[i]), float(self.regret[i]),
                   float(self.dist[i]), int(self.samples[i]))

    def summary_line(self) -> str:
        parts = [f"status={self.status}", f"iterations={len(self)}"]
        if self.radius is not None:
            parts.append(f"radius={self.radius!r}")
        if self.message:
            parts.append(f"message={self.message}")
        return " ".join(parts)

    def to_csv(self, path, sidecar: bool = True) -> None:
        """Write ``k,fpr,regret,dist,samples`` rows; status goes to ``<path>.status``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for k, f, r, d, s in self.rows():
                w.writerow([k, repr(f), repr(r), repr(d), s])
        if sidecar:
            with open(f"{path}.status", "w") as fh:
                fh.write(self.summary_line() + "\n")


def _nan_metric(X: np.ndarray) -> np.ndarray:
    return np.full(X.shape[0], np.nan)


def run(T: Operator | Callable[[Sample], Operator], samples: Iterable[Sample], x0, *,
        schedule: StepSchedule = StepSchedule(), delta: Optional[float] = 1e-10,
        max_iter: Optional[int] = None, radius: Optional[float] = None,
        mode: str = "raw", draw_counts: Optional[Sequence[int]] = None,
        regret_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        x_true=None, store_residuals: bool = False, warn_step: bool = True,
        x_star=None) -> RunRecord:
    """Run S-KM over ``samples`` until the FPR test passes or the budget ends.

    Parameters
    ----------
    T : Operator or callable
        Fixed operator tree, or a builder called with each sample.
    samples : iterable of Sample
        Training samples in the order they are consumed.
    x0 : array_like
        Starting point.
    schedule : StepSchedule
        Relaxation weights ``lam_k``.
    delta : float or None
        Stop once ``|T(anchor; xi_k) - anchor|^2 <= delta``; the iteration
        that passes the test is recorded. ``None`` runs the whole budget.
    max_iter : int, optional
        Budget ``K_max``; defaults to the number of samples.
    radius : float, optional
        Project each iterate onto the ball of this radius.
    draw_counts : sequence of int, optional
        Cumulative raw draws after each sample (default ``1, 2, 3, ...``).
    regret_fn : callable, optional
        Maps a stack of ergodic averages to regret values.
    x_true : array_like, optional
        Distance target; when omitted ``dist`` is NaN.
    store_residuals : bool
        Keep the residual vectors needed by ``ergodic_fpr``.
    x_star : array_like, optional
        A solution; when given, ``deviation_sum`` accumulates
        ``|T_lam(anchor; xi_k) - T_lam(x_star; xi_k)|`` over the run.
        ``max_step`` always records the largest successive-iterate distance.
    """
    if delta is not None and not delta > 0:
        raise ValidationError("delta must be positive")
    if max_iter is not None and max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    if radius is not None and not radius > 0:
        raise ValidationError("projection radius must be positive")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
    state = IterationState.initial(x0)
    if radius is not None:
        state = replace(state, x=_project(state.x, radius), x_bar=_project(state.x_bar, radius))
    builder = T if not isinstance(T, Operator) else None
    x_star = None if x_star is None else as_point(x_star, state.x.shape[0])
    dev_sum = 0.0

    ks, fprs, draws, bars, resids, lams = [], [], [], [], [], []
    status, message, warned, max_step = "budget-exhausted", "", False, 0.0
    for i, sample in enumerate(samples):
        if max_iter is not None and i >= max_iter:
            break
        lam = schedule(i + 1)
        try:
            op = builder(sample) if builder is not None else T
            if warn_step and not warned and step_size_violations(op, sample):
                warnings.warn("gradient step size outside (0, 2*beta) for some samples",
                              StepSizeWarning, stacklevel=2)
                warned = True
            step = 1 if draw_counts is None else int(draw_counts[i]) - state.samples_consumed
            new = km_step(state, op, sample, lam, mode, draws=step)
            if not (np.all(np.isfinite(new.x)) and np.isfinite(new.last_fpr)):
                raise ValidationError(f"non-finite iterate at k={new.k}")
            if x_star is not None:
                moved = x_star + lam * (op(x_star, sample) - x_star)
                dev_sum += float(np.linalg.norm(new.x - moved))
        except (SkmError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            status, message = "error", f"{type(exc).__name__}: {exc}"
            break
        if radius is not None:
            x = _project(new.x, radius)
            new = replace(new, x=x, x_bar=state.x_bar + (x - state.x_bar) / new.k)
        max_step = max(max_step, float(np.linalg.norm(new.x - state.x)))
        state = new
        ks.append(state.k)
        fprs.append(state.last_fpr)
        draws.append(state.samples_consumed)
        bars.append(state.x_bar)
        lams.append(lam)
        if store_residuals:
            resids.append(state.residual)
        if delta is not None and state.last_fpr <= delta:
            status = "converged"
            break

    d = state.x.shape[0]
    X = np.array(bars).reshape(-1, d)
    reg = regret_fn(X) if (regret_fn is not None and len(X)) else _nan_metric(X)
    if x_true is not None and len(X):
        dist = np.linalg.norm(X - as_point(x_true, d), axis=1)
    else:
        dist = _nan_metric(X)
    return RunRecord(
        k=np.array(ks, dtype=np.int64), fpr=np.array(fprs), regret=np.asarray(reg, dtype=np.float64),
        dist=dist, samples=np.array(draws, dtype=np.int64), status=status,
        weights=np.array(lams), x_final=state.x, x_bar_final=state.x_bar, radius=radius,
        message=message, residuals=np.array(resids).reshape(-1, d) if store_residuals else None,
        max_step=max_step, deviation_sum=dev_sum if x_star is not None else None,
    )


def _project(x: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.linalg.norm(x)
    return x if nrm <= radius else x * (radius / nrm)


def ergodic_fpr(record: RunRecord, schedule: Optional[StepSchedule] = None) -> float:
    """Norm of the weighted residual average ``Lambda_K^-1 sum lam_k e_k``.

    Uses the weights recorded during the run unless ``schedule`` is given.
    """
    if record.residuals is None:
        raise CapabilityError("run was made without store_residuals=True")
    K = len(record)
    if K == 0:
        raise ValidationError("empty run record")
    w = schedule.weights(K) if schedule is not None else record.weights
    avg = (w[:, None] * record.residuals).sum(axis=0) / w.sum()
    return float(np.linalg.norm(avg))
