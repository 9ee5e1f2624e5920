"""Dependent data sources, sampling strategies and mixing diagnostics.

Three sources are provided: the sparse autoregressive regression process
(``ArProcess``), a finite Markov chain with per-state payloads
(``MarkovChainProcess``), and its i.i.d. special case (``iid_process``).
A source produces trajectories; ``draw_training_set`` turns trajectories
into a training set according to a ``SamplingStrategy``:

* ``SP``    every element of one trajectory;
* ``SP-m``  every m-th element of one trajectory (indices 1, 1+m, ...);
* ``MR-s``  the s-th element of each of K independent trajectories.

Random streams come from ``split_rng(seed, *path)``, a thin wrapper over
``numpy.random.SeedSequence`` spawn keys, so replications never share state.
"""

from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DiagnosticError, ShapeError, ValidationError
from .operators import Sample, as_point

__all__ = [
    "split_rng", "derive_seed", "ArProcessSpec", "ArProcess", "ar_step",
    "MarkovChainSpec", "MarkovChainProcess", "markov_step", "iid_process",
    "SamplingStrategy", "draw_training_set", "samples_to_arrays",
    "tv_distance", "stationary_distribution", "phi_coefficient",
    "second_eigenvalue_modulus", "MixingProfile", "mixing_profile",
    "write_trajectory_csv",
]

LAPLACE_UNIT_VARIANCE_SCALE = 1.0 / math.sqrt(2.0)


def split_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``; same inputs, same stream."""
    if seed < 0 or any(p < 0 for p in path):
        raise ValidationError("seeds and split indices must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=tuple(int(p) for p in path)))


def derive_seed(seed: int, *path: int) -> int:
    """Integer child seed for ``(seed, *path)``, usable wherever a seed is expected."""
    if seed < 0 or any(p < 0 for p in path):
        raise ValidationError("seeds and split indices must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------
# Autoregressive process


@dataclass(frozen=True, eq=False)
class ArProcessSpec:
    """``a_k = A a_{k-1} + e_1 W_k``, ``b_k = <x_true, a_k> + E_k``.

    ``A`` is strictly subdiagonal with entries ``subdiag``; ``W_k`` is
    Gaussian with std ``noise_scale`` and ``E_k`` Laplace with scale
    ``laplace_scale`` (the default gives unit variance).
    """

    subdiag: np.ndarray
    x_true: np.ndarray
    sparsity: int
    noise_scale: float = 1.0
    laplace_scale: float = LAPLACE_UNIT_VARIANCE_SCALE

    def __post_init__(self):
        x_true = as_point(self.x_true)
        sub = np.array(self.subdiag, dtype=np.float64).reshape(-1)
        if sub.shape[0] != x_true.shape[0] - 1:
            raise ShapeError("subdiagonal must have length dim - 1")
        if not 0 <= self.sparsity <= x_true.shape[0]:
            raise ValidationError("sparsity must lie in [0, dim]")
        if np.count_nonzero(x_true[:self.sparsity]) != self.sparsity or np.any(x_true[self.sparsity:]):
            raise ValidationError("x_true must have exactly `sparsity` leading nonzeros")
        if self.noise_scale < 0 or self.laplace_scale < 0:
            raise ValidationError("noise scales must be non-negative")
        sub.setflags(write=False)
        x_true.setflags(write=False)
        object.__setattr__(self, "subdiag", sub)
        object.__setattr__(self, "x_true", x_true)

    @property
    def dim(self) -> int:
        return self.x_true.shape[0]

    @classmethod
    def random(cls, dim: int, sparsity: int, rng: np.random.Generator,
               low: float = 0.8, high: float = 0.99, **kwargs) -> "ArProcessSpec":
        """Draw ``A_{i,i-1} ~ U[low, high]`` and leading coefficients ``~ U[-1, 1]``."""
        if dim < 1:
            raise ValidationError("dimension must be >= 1")
        subdiag = rng.uniform(low, high, size=dim - 1)
        x_true = np.zeros(dim)
        coefs = rng.uniform(-1.0, 1.0, size=sparsity)
        coefs[coefs == 0.0] = 1.0
        x_true[:sparsity] = coefs
        return cls(subdiag, x_true, sparsity, **kwargs)

    def matrix(self) -> np.ndarray:
        return np.diag(self.subdiag, k=-1) if self.dim > 1 else np.zeros((1, 1))

    def advance(self, features: np.ndarray, w: float) -> np.ndarray:
        out = np.empty_like(features)
        out[0] = w
        out[1:] = self.subdiag * features[:-1]
        return out


def ar_step(spec: ArProcessSpec, prev: Sample, w: float, e: float) -> Sample:
    """One transition driven by the explicit draws ``w`` (W_k) and ``e`` (E_k)."""
    if prev.dim != spec.dim:
        raise ShapeError(f"previous sample has dimension {prev.dim}, process has {spec.dim}")
    feats = spec.advance(prev.features, w)
    return Sample(feats, float(spec.x_true @ feats) + e, prev.index + 1)


class ArProcess:
    """Trajectories of an ``ArProcessSpec`` started from ``initial`` (default 0)."""

    def __init__(self, spec: ArProcessSpec, initial=None):
        self.spec = spec
        self.initial = np.zeros(spec.dim) if initial is None else as_point(initial, spec.dim)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def trajectory(self, rng: np.random.Generator) -> Iterator[Sample]:
        spec = self.spec
        feats = self.initial.copy()
        for k in itertools.count(1):
            w = spec.noise_scale * rng.standard_normal()
            e = rng.laplace(0.0, spec.laplace_scale) if spec.laplace_scale > 0 else 0.0
            feats = spec.advance(feats, w)
            yield Sample(feats, float(spec.x_true @ feats) + e, k)


# --------------------------------------------------------------------------
# Finite Markov chains


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """Row-stochastic ``transition`` matrix with optional per-state payloads.

    States are 0-based. Without payloads, state ``i`` emits
    ``Sample([i], 0.0)``.
    """

    transition: np.ndarray
    payloads: Optional[Sequence[Sample]] = None
    initial_state: int = 0
    doubly_stochastic: bool = False
    _cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ShapeError("transition matrix must be square and non-empty")
        if np.any(P < 0) or np.any(P > 1):
            raise ValidationError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("every row of the transition matrix must sum to 1")
        if self.doubly_stochastic and np.any(np.abs(P.sum(axis=0) - 1.0) > 1e-12):
            raise ValidationError("declared doubly stochastic but columns do not sum to 1")
        n = P.shape[0]
        if not 0 <= self.initial_state < n:
            raise ValidationError(f"initial state {self.initial_state} outside [0, {n})")
        if self.payloads is not None:
            payloads = tuple(self.payloads)
            if len(payloads) != n:
                raise ShapeError("need exactly one payload per state")
            if len({p.dim for p in payloads}) != 1:
                raise ShapeError("payload feature dimensions differ")
            object.__setattr__(self, "payloads", payloads)
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        cum = np.cumsum(P, axis=1)
        cum.setflags(write=False)
        object.__setattr__(self, "_cumulative", cum)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.payloads is None else self.payloads[0].dim

    def payload(self, state: int, index: int = 0) -> Sample:
        if self.payloads is None:
            return Sample(np.array([float(state)]), 0.0, index)
        p = self.payloads[state]
        return Sample(p.features, p.response, index)


def markov_step(spec: MarkovChainSpec, state: int, u: float):
    """Next state by inverse-CDF lookup of uniform ``u`` in row ``state``.

    Returns ``(next_state, payload_of_next_state)``.
    """
    if not 0 <= state < spec.n_states:
        raise ValidationError(f"state {state} outside [0, {spec.n_states})")
    if not 0.0 <= u < 1.0:
        raise ValidationError("uniform draw must lie in [0, 1)")
    nxt = int(np.searchsorted(spec._cumulative[state], u, side="right"))
    nxt = min(nxt, spec.n_states - 1)
    return nxt, spec.payload(nxt)


class MarkovChainProcess:
    def __init__(self, spec: MarkovChainSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.dim

    def trajectory(self, rng: np.random.Generator) -> Iterator[Sample]:
        state = self.spec.initial_state
        for k in itertools.count(1):
            state, _ = markov_step(self.spec, state, rng.random())
            yield self.spec.payload(state, k)


def iid_process(payloads: Sequence[Sample], probs) -> MarkovChainProcess:
    """I.i.d. draws from ``payloads``: a chain whose rows all equal ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    P = np.tile(probs, (len(probs), 1))
    return MarkovChainProcess(MarkovChainSpec(P, payloads))


# --------------------------------------------------------------------------
# Sampling strategies

_STRATEGY_RE = re.compile(r"^(SP|MR)(?:-(\d+))?$", re.IGNORECASE)


@dataclass(frozen=True)
class SamplingStrategy:
    """``SP`` (step 1), ``SP-m`` (m >= 2) or ``MR-s`` (s >= 1)."""

    kind: str
    param: int = 1

    def __post_init__(self):
        if self.kind not in ("SP", "MR"):
            raise ValidationError(f"unknown sampling strategy {self.kind!r}")
        if self.kind == "SP" and self.param != 1 and self.param < 2:
            raise ValidationError("SP-m needs m >= 2")
        if self.kind == "MR" and self.param < 1:
            raise ValidationError("MR-s needs s >= 1")

    @classmethod
    def parse(cls, text: str) -> "SamplingStrategy":
        m = _STRATEGY_RE.match(text.strip())
        if not m:
            raise ValidationError(f"cannot parse sampling strategy {text!r}")
        kind = m.group(1).upper()
        if m.group(2) is None:
            if kind == "MR":
                raise ValidationError("MR needs a trajectory length, e.g. MR-4")
            return cls("SP", 1)
        param = int(m.group(2))
        if kind == "SP" and param < 2:
            raise ValidationError("SP-m needs m >= 2")
        return cls(kind, param)

    @property
    def name(self) -> str:
        if self.kind == "SP":
            return "SP" if self.param == 1 else f"SP-{self.param}"
        return f"MR-{self.param}"

    def raw_draws(self, K: int) -> int:
        """Process transitions needed for ``K`` training samples."""
        if self.kind == "SP":
            return 1 + (K - 1) * self.param
        return K * self.param

    def cumulative_draws(self, K: int) -> np.ndarray:
        """Raw draws spent once the k-th training sample (k = 1..K) is available."""
        k = np.arange(1, K + 1, dtype=np.int64)
        if self.kind == "SP":
            return 1 + (k - 1) * self.param
        return k * self.param


def draw_training_set(process, strategy: SamplingStrategy, K: int, seed: int):
    """Draw ``K`` training samples; returns ``(samples, raw_draw_count)``.

    ``SP`` and ``SP-m`` read the same trajectory for a given seed, so their
    training sets are nested views of one path.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    if strategy.kind == "SP":
        traj = process.trajectory(split_rng(seed))
        samples = list(itertools.islice(traj, 0, 1 + (K - 1) * strategy.param, strategy.param))
    else:
        s = strategy.param
        samples = []
        for i in range(K):
            traj = process.trajectory(split_rng(seed, i))
            samples.append(next(itertools.islice(traj, s - 1, s)))
    return samples, strategy.raw_draws(K)


def samples_to_arrays(samples: Sequence[Sample]):
    """Stack samples into ``(features (n, d), responses (n,))``."""
    if not samples:
        raise ValidationError("empty dataset")
    return np.stack([s.features for s in samples]), np.array([s.response for s in samples])


def write_trajectory_csv(path, samples: Sequence[Sample], state_column: bool = False) -> None:
    """CSV with ``k, x1..xd, y`` (or ``k, state, y`` for payload-free chains)."""
    d = samples[0].dim if samples else 0
    header = ["k", "state"] if state_column else ["k"] + [f"x{i + 1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["y"])
        for s in samples:
            if state_column:
                w.writerow([s.index, int(s.features[0]), repr(s.response)])
            else:
                w.writerow([s.index, *map(repr, s.features.tolist()), repr(s.response)])


# --------------------------------------------------------------------------
# Mixing diagnostics


def _as_matrix(spec) -> np.ndarray:
    return spec.transition if isinstance(spec, MarkovChainSpec) else MarkovChainSpec(spec).transition


def tv_distance(p, q) -> float:
    """Total variation distance ``0.5 * sum |p_i - q_i|``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError("probability vectors must be 1-D with equal length")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValidationError("inputs must be non-negative and sum to 1")
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def _closed_classes(P: np.ndarray) -> int:
    n_comp, labels = connected_components(P > 0, directed=True, connection="strong")
    closed = 0
    for c in range(n_comp):
        members = labels == c
        if not np.any(P[np.ix_(members, ~members)] > 0):
            closed += 1
    return closed


def stationary_distribution(spec, tol: float = 1e-12, max_doublings: int = 64) -> np.ndarray:
    """Stationary law of an ergodic chain.

    Power iteration on the lazy chain ``(P + I) / 2`` (same stationary law,
    aperiodic) with repeated squaring, stopped once ``|pi P - pi|_1 <= tol``.
    Raises ``DiagnosticError`` when the stationary law is not unique or the
    iteration does not reach ``tol``.
    """
    P = _as_matrix(spec)
    n = P.shape[0]
    if _closed_classes(P) != 1:
        raise DiagnosticError("chain has several closed classes; stationary law is not unique")
    if np.all(P == P[0]):
        return P[0].copy()
    M = 0.5 * (P + np.eye(n))
    pi = np.full(n, 1.0 / n)
    for _ in range(max_doublings):
        pi = pi @ M
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        if np.abs(pi @ P - pi).sum() <= tol:
            return pi
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    raise DiagnosticError("power iteration did not reach the residual tolerance")


def phi_coefficient(spec, l: int, pi: Optional[np.ndarray] = None) -> float:
    """``max_b 2 * d_TV(P^l[b], pi)``: the mixing coefficient at lag ``l``.

    Conditioning is on the current state only, which is exact for a Markov
    chain started in its stationary regime.
    """
    if l < 1:
        raise ValidationError("lag must be >= 1")
    P = _as_matrix(spec)
    pi = stationary_distribution(P) if pi is None else pi
    Pl = np.linalg.matrix_power(P, l)
    return _phi_from_power(Pl, pi)


def _phi_from_power(Pl: np.ndarray, pi: np.ndarray) -> float:
    rows = np.clip(Pl, 0.0, None)
    rows = rows / rows.sum(axis=1, keepdims=True)
    return float(min(2.0, max(2.0 * tv_distance(r, pi) for r in rows)))


def second_eigenvalue_modulus(spec) -> float:
    """Second largest eigenvalue modulus; < 1 means the chain mixes."""
    moduli = np.sort(np.abs(np.linalg.eigvals(_as_matrix(spec))))[::-1]
    return float(moduli[1]) if moduli.size > 1 else 0.0


@dataclass(frozen=True)
class MixingProfile:
    """Tabulated coefficients ``phi(1..l_max)`` and their (extrapolated) sum.

    ``truncated`` is set when the tail could not be extrapolated; ``tail_sum``
    is then only the finite partial sum, i.e. a lower bound.
    """

    phi: tuple
    tail_sum: float
    truncation_index: int
    extrapolated: bool
    truncated: bool
    c_value: float = 1.0
    ratio: Optional[float] = None

    @property
    def mixing_scale(self) -> Optional[float]:
        """``1 / -log(ratio)`` for a geometric fit, else ``None``."""
        if self.ratio is None or self.ratio <= 0:
            return None
        return 1.0 / -math.log(self.ratio)


RATIO_CAP = 0.999
_WINDOW = 5


def mixing_profile(spec, l_max: int, c_value: float = 1.0) -> MixingProfile:
    """Tabulate ``phi`` and sum it with a geometric tail.

    The tail uses the ratio ``phi(l_max) / phi(l_max - 1)`` capped at
    ``RATIO_CAP``; it is refused (``truncated=True``) when ``phi`` is not
    strictly decreasing over the last few lags.
    """
    if l_max < 2:
        raise ValidationError("l_max must be >= 2")
    if not c_value > 0:
        raise ValidationError("C value must be positive")
    P = _as_matrix(spec)
    pi = stationary_distribution(P)
    phis = []
    Pl = np.eye(P.shape[0])
    for _ in range(l_max):
        Pl = Pl @ P
        phis.append(_phi_from_power(Pl, pi))
    partial = float(sum(phis))
    last, prev = phis[-1], phis[-2]
    if last == 0.0:
        return MixingProfile(tuple(phis), partial, l_max, False, False, c_value, 0.0)
    window = phis[-_WINDOW:]
    if not all(b < a for a, b in zip(window, window[1:])):
        return MixingProfile(tuple(phis), partial, l_max, False, True, c_value, None)
    ratio = min(last / prev, RATIO_CAP)
    tail = last * ratio / (1.0 - ratio)
    return MixingProfile(tuple(phis), partial + tail, l_max, True, False, c_value, ratio)
