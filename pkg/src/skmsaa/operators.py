"""Nonexpansive operators built from proximal, gradient and reflection steps.

Points are plain 1-D ``float64`` numpy arrays. Functions (``SquaredLoss``,
``L1Norm``, ...) know how to evaluate themselves, their gradient when they
have one, and their proximal map. Operators are small immutable trees
(``GradStep``, ``Prox``, ``Reflect``, ``Averaged``, ``Compose``,
``Identity``) evaluated at a point together with the current sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import CapabilityError, ShapeError, ValidationError

__all__ = [
    "Sample", "as_point",
    "Function", "SquaredLoss", "LeastSquares", "L1Norm", "Zero",
    "BallIndicator", "ZeroIndicator",
    "Operator", "Identity", "GradStep", "Prox", "Reflect", "Averaged", "Compose",
    "prox", "grad_step", "reflect", "apply", "fpr", "build_algorithm",
    "auxiliary_points", "step_size_violations", "inverse_lipschitz",
    "ALGORITHMS", "AlgorithmConfig", "function_to_text", "function_from_text",
]


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    """Return a fresh finite 1-D float64 copy of ``x``.

    Raises ``ShapeError`` on wrong rank or length and ``ValidationError``
    on NaN/Inf entries.
    """
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"point must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"point has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("point has non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Sample:
    """One observation ``(features, response)`` drawn at time ``index``."""

    features: np.ndarray
    response: float
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(as_point(self.features)))
        response = float(self.response)
        if not np.isfinite(response):
            raise ValidationError("sample response is not finite")
        object.__setattr__(self, "response", response)
        if self.index < 0:
            raise ValidationError("sample index must be non-negative")

    @property
    def dim(self) -> int:
        return self.features.shape[0]


# --------------------------------------------------------------------------
# Functions


class Function:
    """Closed convex proper function on R^d, possibly sample dependent."""

    differentiable = False
    name = "function"

    def value(self, x: np.ndarray, sample: Optional[Sample] = None) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray, sample: Optional[Sample] = None) -> np.ndarray:
        raise CapabilityError(f"{self.name} is not differentiable")

    def prox(self, x: np.ndarray, gamma: float,
             sample: Optional[Sample] = None) -> np.ndarray:
        raise CapabilityError(f"no proximal map for {self.name}")

    def smoothness(self, sample: Optional[Sample] = None) -> float:
        """Lipschitz constant of the gradient (``1/beta``)."""
        raise CapabilityError(f"{self.name} is not differentiable")


def _need_sample(fn: Function, sample: Optional[Sample]) -> Sample:
    if sample is None:
        raise ValidationError(f"{fn.name} needs a sample to be evaluated")
    return sample


@dataclass(frozen=True)
class SquaredLoss(Function):
    """Single-sample loss ``(<x, a> - b)**2`` for the sample ``(a, b)``."""

    differentiable = True
    name = "squared"

    def value(self, x, sample=None):
        s = _need_sample(self, sample)
        return float((x @ s.features - s.response) ** 2)

    def grad(self, x, sample=None):
        s = _need_sample(self, sample)
        return 2.0 * (x @ s.features - s.response) * s.features

    def prox(self, x, gamma, sample=None):
        # rank-one update: (I + 2 gamma a a^T) y = x + 2 gamma b a
        s = _need_sample(self, sample)
        a = s.features
        resid = x @ a - s.response
        return x - (2.0 * gamma * resid / (1.0 + 2.0 * gamma * (a @ a))) * a

    def smoothness(self, sample=None):
        s = _need_sample(self, sample)
        return 2.0 * float(s.features @ s.features)


@dataclass(frozen=True, eq=False)
class LeastSquares(Function):
    """Full-batch loss ``mean((A x - b)**2)`` over a fixed dataset.

    The sample argument is ignored, which makes operators built on it
    deterministic. Stores the Gram form ``x'Qx - 2q'x + c``.
    """

    features: np.ndarray
    responses: np.ndarray
    gram: np.ndarray = field(init=False, repr=False)
    moment: np.ndarray = field(init=False, repr=False)
    offset: float = field(init=False, repr=False)

    differentiable = True
    name = "least-squares"

    def __post_init__(self):
        A = np.array(self.features, dtype=np.float64, copy=True)
        b = np.array(self.responses, dtype=np.float64, copy=True).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.shape[0] or A.shape[0] == 0:
            raise ShapeError("least-squares needs an (n, d) matrix and n responses, n >= 1")
        n = A.shape[0]
        object.__setattr__(self, "features", _frozen(A))
        object.__setattr__(self, "responses", _frozen(b))
        object.__setattr__(self, "gram", _frozen(A.T @ A / n))
        object.__setattr__(self, "moment", _frozen(A.T @ b / n))
        object.__setattr__(self, "offset", float(b @ b / n))

    @classmethod
    def from_samples(cls, samples) -> "LeastSquares":
        samples = list(samples)
        if not samples:
            raise ValidationError("empty dataset")
        return cls(np.stack([s.features for s in samples]),
                   np.array([s.response for s in samples]))

    def value(self, x, sample=None):
        return float(x @ self.gram @ x - 2.0 * self.moment @ x + self.offset)

    def grad(self, x, sample=None):
        return 2.0 * (self.gram @ x - self.moment)

    def prox(self, x, gamma, sample=None):
        d = self.gram.shape[0]
        return np.linalg.solve(np.eye(d) + 2.0 * gamma * self.gram,
                               x + 2.0 * gamma * self.moment)

    def smoothness(self, sample=None):
        return 2.0 * float(np.linalg.eigvalsh(self.gram)[-1])


@dataclass(frozen=True)
class L1Norm(Function):
    weight: float = 1.0

    name = "l1"

    def __post_init__(self):
        if not self.weight >= 0:
            raise ValidationError("l1 weight must be >= 0")

    def value(self, x, sample=None):
        return self.weight * float(np.abs(x).sum())

    def prox(self, x, gamma, sample=None):
        t = gamma * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True)
class Zero(Function):
    differentiable = True
    name = "zero"

    def value(self, x, sample=None):
        return 0.0

    def grad(self, x, sample=None):
        return np.zeros_like(x)

    def prox(self, x, gamma, sample=None):
        return x.copy()

    def smoothness(self, sample=None):
        return 0.0


@dataclass(frozen=True)
class BallIndicator(Function):
    """Indicator of the Euclidean ball of ``radius`` centred at the origin."""

    radius: float = 1.0

    name = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("ball radius must be > 0")

    def value(self, x, sample=None):
        return 0.0 if np.linalg.norm(x) <= self.radius * (1 + 1e-12) else np.inf

    def prox(self, x, gamma, sample=None):
        nrm = np.linalg.norm(x)
        if nrm <= self.radius:
            return x.copy()
        return x * (self.radius / nrm)


@dataclass(frozen=True)
class ZeroIndicator(Function):
    """Indicator of ``{0}``; its prox is the constant map to the origin."""

    name = "zero-indicator"

    def value(self, x, sample=None):
        return 0.0 if not np.any(x) else np.inf

    def prox(self, x, gamma, sample=None):
        return np.zeros_like(x)


def inverse_lipschitz(f: Function, sample: Optional[Sample] = None) -> float:
    """``beta`` such that ``grad f`` is ``1/beta``-Lipschitz (inf for constants)."""
    lip = f.smoothness(sample)
    return np.inf if lip == 0 else 1.0 / lip


# --------------------------------------------------------------------------
# Elementary maps


def _check_gamma(gamma, allow_zero=False):
    gamma = float(gamma)
    if not (gamma >= 0 if allow_zero else gamma > 0) or not np.isfinite(gamma):
        raise ValidationError(f"step size must be {'>=' if allow_zero else '>'} 0, got {gamma}")
    return gamma


def prox(g: Function, gamma: float, x, sample: Optional[Sample] = None) -> np.ndarray:
    """Proximal map ``argmin_y g(y) + |y - x|^2 / (2 gamma)``.

    Closed forms: soft-thresholding for ``L1Norm``, identity for ``Zero``,
    radial projection for ``BallIndicator``, a rank-one solve for
    ``SquaredLoss`` (needs ``sample``) and a linear solve for
    ``LeastSquares``.
    """
    gamma = _check_gamma(gamma)
    if not isinstance(g, Function):
        raise CapabilityError(f"unsupported function {g!r}")
    return g.prox(as_point(x), gamma, sample)


def grad_step(f: Function, gamma: float, x, sample: Optional[Sample] = None) -> np.ndarray:
    """Forward step ``x - gamma * grad f(x; sample)``; ``gamma == 0`` is allowed."""
    gamma = _check_gamma(gamma, allow_zero=True)
    if not getattr(f, "differentiable", False):
        raise CapabilityError(f"{getattr(f, 'name', f)!r} has no gradient")
    x = as_point(x)
    return x - gamma * f.grad(x, sample)


def reflect(g: Function, gamma: float, x, sample: Optional[Sample] = None) -> np.ndarray:
    """Reflection ``2 prox_{gamma g}(x) - x``."""
    x = as_point(x)
    return 2.0 * prox(g, gamma, x, sample) - x


# --------------------------------------------------------------------------
# Operator trees


class Operator:
    """Base class for operator tree nodes. Instances are immutable."""

    def __call__(self, x: np.ndarray, sample: Optional[Sample] = None) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> tuple:
        return ()

    def walk(self) -> Iterator["Operator"]:
        yield self
        for child in self.children():
            yield from child.walk()


@dataclass(frozen=True)
class Identity(Operator):
    def __call__(self, x, sample=None):
        return x.copy()


@dataclass(frozen=True)
class GradStep(Operator):
    f: Function
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _check_gamma(self.gamma))
        if not getattr(self.f, "differentiable", False):
            raise CapabilityError(f"gradient step needs a differentiable function, got {self.f!r}")

    def __call__(self, x, sample=None):
        return x - self.gamma * self.f.grad(x, sample)


@dataclass(frozen=True)
class Prox(Operator):
    g: Function
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _check_gamma(self.gamma))

    def __call__(self, x, sample=None):
        return self.g.prox(x, self.gamma, sample)


@dataclass(frozen=True)
class Reflect(Operator):
    g: Function
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _check_gamma(self.gamma))

    def __call__(self, x, sample=None):
        return 2.0 * self.g.prox(x, self.gamma, sample) - x


@dataclass(frozen=True)
class Averaged(Operator):
    """``(1 - lam) I + lam * inner`` with ``lam`` in (0, 1]."""

    inner: Operator
    lam: float

    def __post_init__(self):
        lam = float(self.lam)
        if not 0.0 < lam <= 1.0:
            raise ValidationError(f"averaging weight must lie in (0, 1], got {lam}")
        object.__setattr__(self, "lam", lam)

    def __call__(self, x, sample=None):
        return (1.0 - self.lam) * x + self.lam * self.inner(x, sample)

    def children(self):
        return (self.inner,)


@dataclass(frozen=True)
class Compose(Operator):
    """``first o second``: ``second`` is applied before ``first``."""

    first: Operator
    second: Operator

    def __call__(self, x, sample=None):
        return self.first(self.second(x, sample), sample)

    def children(self):
        return (self.first, self.second)


def apply(spec: Operator, x, sample: Optional[Sample] = None) -> np.ndarray:
    """Evaluate ``spec`` at ``x`` with the given sample; returns a new array."""
    x = as_point(x)
    if sample is not None and sample.dim != x.shape[0]:
        raise ShapeError(f"sample has dimension {sample.dim}, point has {x.shape[0]}")
    out = spec(x, sample)
    if out.shape != x.shape:
        raise ShapeError(f"operator returned shape {out.shape}, expected {x.shape}")
    return out


def fpr(spec: Operator, x, sample: Optional[Sample] = None) -> float:
    """Squared fixed point residual ``|T x - x|^2``."""
    x = as_point(x)
    r = apply(spec, x, sample) - x
    return float(r @ r)


def step_size_violations(spec: Operator, sample: Optional[Sample] = None) -> list:
    """``(gamma, 2*beta)`` for every gradient step whose gamma is not in (0, 2 beta)."""
    bad = []
    for node in spec.walk():
        if isinstance(node, GradStep):
            limit = 2.0 * inverse_lipschitz(node.f, sample)
            if node.gamma >= limit:
                bad.append((node.gamma, limit))
    return bad


ALGORITHMS = ("SGD", "PPA", "PGD", "DRS", "rPRS")


def build_algorithm(name: str, f: Function, g: Optional[Function] = None,
                    gamma: float = 1.0, lam: float = 0.5) -> Operator:
    """Operator tree for one of the first-order methods in ``ALGORITHMS``.

    Parameters
    ----------
    name : str
        ``SGD`` and ``PPA`` minimise ``f`` alone (``g`` must be ``Zero``);
        ``PGD``, ``DRS`` and ``rPRS`` split ``f + g``.
    f, g : Function
        Smooth / proximable pieces of the objective.
    gamma : float
        Step size, > 0.
    lam : float
        Relaxation for ``rPRS`` in (0, 1]; ``DRS`` always uses 1/2.
    """
    g = Zero() if g is None else g
    if name in ("SGD", "PPA") and not isinstance(g, Zero):
        raise CapabilityError(f"{name} minimises f alone; g must be zero")
    if name == "SGD":
        return GradStep(f, gamma)
    if name == "PPA":
        return Prox(f, gamma)
    if name == "PGD":
        return Compose(Prox(g, gamma), GradStep(f, gamma))
    if name == "DRS":
        return Averaged(Compose(Reflect(f, gamma), Reflect(g, gamma)), 0.5)
    if name == "rPRS":
        return Averaged(Compose(Reflect(f, gamma), Reflect(g, gamma)), lam)
    raise CapabilityError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")


def auxiliary_points(x, f: Function, g: Function, gamma: float,
                     sample: Optional[Sample] = None):
    """Return ``(x_f, x_g)`` with ``x_g = prox_g(x)``, ``x_f = prox_f(refl_g(x))``."""
    x = as_point(x)
    x_g = prox(g, gamma, x, sample)
    x_f = prox(f, gamma, 2.0 * x_g - x, sample)
    return x_f, x_g


# --------------------------------------------------------------------------
# Text form used by configuration files

def function_to_text(fn: Function) -> str:
    if isinstance(fn, SquaredLoss):
        return "squared"
    if isinstance(fn, Zero):
        return "zero"
    if isinstance(fn, ZeroIndicator):
        return "zero-indicator"
    if isinstance(fn, L1Norm):
        return f"l1:{fn.weight!r}"
    if isinstance(fn, BallIndicator):
        return f"ball:{fn.radius!r}"
    raise CapabilityError(f"{fn!r} has no text form")


def function_from_text(text: str) -> Function:
    """Parse ``squared``, ``zero``, ``zero-indicator``, ``l1:<w>`` or ``ball:<r>``."""
    kind, _, arg = text.strip().partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "squared" and not arg:
            return SquaredLoss()
        if kind == "zero" and not arg:
            return Zero()
        if kind == "zero-indicator" and not arg:
            return ZeroIndicator()
        if kind == "l1":
            return L1Norm(float(arg) if arg else 1.0)
        if kind == "ball":
            return BallIndicator(float(arg))
    except ValueError as exc:
        raise ValidationError(f"bad function parameter in {text!r}") from exc
    raise CapabilityError(f"unknown function kind {text!r}")


@dataclass(frozen=True)
class AlgorithmConfig:
    """Serializable description of an algorithm.

    Dictionary keys: ``name``, ``f``, ``g``, ``gamma``, ``lambda``.
    """

    name: str = "PGD"
    f: str = "squared"
    g: str = "zero"
    gamma: float = 0.1
    lam: float = 0.5

    def build(self) -> Operator:
        return build_algorithm(self.name, function_from_text(self.f),
                               function_from_text(self.g), self.gamma, self.lam)

    def to_dict(self) -> dict:
        return {"name": self.name, "f": self.f, "g": self.g,
                "gamma": self.gamma, "lambda": self.lam}

    @classmethod
    def from_dict(cls, data: dict) -> "AlgorithmConfig":
        unknown = set(data) - {"name", "f", "g", "gamma", "lambda"}
        if unknown:
            raise ValidationError(f"unknown algorithm keys: {sorted(unknown)}")
        cfg = cls(name=str(data.get("name", "PGD")), f=str(data.get("f", "squared")),
                  g=str(data.get("g", "zero")), gamma=float(data.get("gamma", 0.1)),
                  lam=float(data.get("lambda", 0.5)))
        cfg.build()  # validate eagerly
        return cfg
