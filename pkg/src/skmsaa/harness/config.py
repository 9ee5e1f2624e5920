"""Flat ``key = value`` experiment configuration with dotted keys.

One setting per line; ``#`` starts a comment. Values are JSON literals
(numbers, ``true``/``false``, ``null``, quoted strings, lists); anything
that is not valid JSON is taken as a bare string. Unknown keys are errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..errors import ConfigError, SkmError
from ..processes import SamplingStrategy

REQUIRED = object()

# key -> (default, type, help)
SCHEMA: dict = {
    "process.kind": ("ar", str, "data source: ar | markov"),
    "process.seed": (0, int, "master seed; every stream is split from it"),
    "process.ar.dim": (100, int, "dimension d of the AR features"),
    "process.ar.sparsity": (10, int, "number s0 of leading nonzeros in x_true"),
    "process.ar.low": (0.8, float, "lower end of the subdiagonal uniform law"),
    "process.ar.high": (0.99, float, "upper end of the subdiagonal uniform law"),
    "process.ar.noise": (1.0, float, "std of the Gaussian innovation W_k"),
    "process.ar.laplace_scale": (2 ** -0.5, float, "scale of the Laplace response noise E_k"),
    "process.markov.matrix": (None, list, "row-stochastic transition matrix"),
    "process.markov.features": (None, list, "per-state feature vectors"),
    "process.markov.responses": (None, list, "per-state responses"),
    "process.markov.initial": (0, int, "initial state (0-based)"),
    "process.markov.l_max": (50, int, "lags tabulated for the mixing profile"),
    "problem.lambda_reg": (REQUIRED, float, "l1 weight of the lasso penalty (required)"),
    "algorithm.name": ("PGD", str, "SGD | PPA | PGD | DRS | rPRS"),
    "algorithm.gamma": (0.05, float, "operator step size gamma"),
    "algorithm.lambda": (0.5, float, "rPRS relaxation in (0, 1]"),
    "algorithm.mode": ("raw", str, "KM anchor: raw | averaged-anchor"),
    "schedule.lambda": (0.5, float, "constant KM relaxation lam_k in (0, 1)"),
    "run.delta": (1e-10, float, "stop once the sampled squared FPR <= delta (null: full budget)"),
    "run.radius": (None, float, "projection radius (default 10 |x_true|, or none)"),
    "experiment.strategies": (["SP"], list, "sampling strategies, e.g. [\"SP\", \"SP-2\", \"MR-4\"]"),
    "experiment.budget": (1000, int, "training samples K per run"),
    "experiment.replications": (1, int, "replications M"),
    "experiment.output": ("out", str, "output directory"),
    "experiment.regret_on": ("eval", str, "regret objective: eval (held-out pool) | train"),
    "experiment.eval_size": (5000, int, "size of the held-out evaluation pool"),
    "experiment.burn_in": (500, int, "steps discarded before held-out pools"),
    "experiment.jobs": (1, int, "worker processes"),
    "experiment.charts": (True, bool, "write SVG charts after the experiment"),
    "bounds.beta": (0.1, float, "confidence level beta"),
    "bounds.c_value": (1.0, float, "concentration constant C"),
    "bounds.r": (None, float, "feasible-set radius (default: run radius)"),
    "bounds.tau": (0, int, "lag tau of the deviation bound"),
    "bounds.phi1": (None, float, "phi(1) (computed for markov sources)"),
    "bounds.phi_tau1": (None, float, "phi(tau + 1) (computed for markov sources)"),
    "bounds.l_cap": (None, float, "uniform loss bound L"),
    "bounds.j_hat": (None, float, "in-sample optimal value"),
    "bounds.beta_lip": (None, float, "inverse Lipschitz constant of grad f"),
    "bounds.r_expect": (None, float, "R_{K-1} for the deviation bound"),
    "bounds.kappa_sum": (None, float, "sum of kappa for the deviation bound"),
    "bounds.noise_sum": (None, float, "sum_k E|lam_k eps_k| (default from approx. error)"),
    "coverage.replications": (200, int, "replications of the coverage study"),
    "coverage.test_pool": (10000, int, "held-out test pool size per replication"),
    "coverage.budget": (None, int, "training samples per replication (default experiment.budget)"),
    "simulate.length": (1000, int, "trajectory length for `simulate`"),
}


def describe_keys() -> str:
    width = max(map(len, SCHEMA))
    lines = []
    for key, (default, _, text) in SCHEMA.items():
        shown = "required" if default is REQUIRED else json.dumps(default)
        lines.append(f"  {key:<{width}}  {text} [{shown}]")
    return "\n".join(lines)


def _coerce(key: str, value: Any) -> Any:
    default, typ, _ = SCHEMA[key]
    if value is None:
        if default is REQUIRED:
            raise ConfigError(f"{key} may not be null")
        return None
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            raise TypeError
        if typ is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if typ is list:
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, list):
                raise TypeError
            return value
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {typ.__name__}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        value = value.strip()
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        values[key] = _coerce(key, parsed)
    return values


@dataclass
class ExperimentConfig:
    """Resolved configuration: every schema key with a value."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.values["process.seed"]

    @property
    def strategies(self) -> list:
        return [SamplingStrategy.parse(s) for s in self.values["experiment.strategies"]]

    @property
    def output(self) -> Path:
        return Path(self.values["experiment.output"])

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.values.items())

    def validate(self) -> "ExperimentConfig":
        v = self.values
        try:
            self.strategies
        except SkmError as exc:
            raise ConfigError(str(exc)) from None
        if not v["experiment.strategies"]:
            raise ConfigError("experiment.strategies is empty")
        if v["process.kind"] not in ("ar", "markov"):
            raise ConfigError("process.kind must be ar or markov")
        if v["process.kind"] == "markov" and v["process.markov.matrix"] is None:
            raise ConfigError("process.markov.matrix is required for markov sources")
        if v["algorithm.mode"] not in ("raw", "averaged-anchor"):
            raise ConfigError("algorithm.mode must be raw or averaged-anchor")
        if v["experiment.regret_on"] not in ("eval", "train"):
            raise ConfigError("experiment.regret_on must be eval or train")
        for key in ("experiment.budget", "experiment.replications", "experiment.jobs",
                    "coverage.replications", "simulate.length", "experiment.eval_size"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("process.seed", "experiment.burn_in", "bounds.tau"):
            if v[key] < 0:
                raise ConfigError(f"{key} must be >= 0")
        if v["process.ar.sparsity"] > v["process.ar.dim"] or v["process.ar.dim"] < 1:
            raise ConfigError("need 1 <= process.ar.dim and sparsity <= dim")
        if v["problem.lambda_reg"] < 0:
            raise ConfigError("problem.lambda_reg must be >= 0")
        if not 0 < v["schedule.lambda"] < 1:
            raise ConfigError("schedule.lambda must lie in (0, 1)")
        if v["run.delta"] is not None and not v["run.delta"] > 0:
            raise ConfigError("run.delta must be > 0 or null")
        if not v["algorithm.gamma"] > 0:
            raise ConfigError("algorithm.gamma must be > 0")
        return self


def make_config(values: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge ``values`` and ``overrides`` over the schema defaults and validate."""
    merged = {}
    for src in (values or {}), (overrides or {}):
        for key, value in src.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = _coerce(key, value)
    resolved = {}
    for key, (default, _, _) in SCHEMA.items():
        if key in merged:
            resolved[key] = merged[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key}")
        else:
            resolved[key] = default
    return ExperimentConfig(resolved).validate()


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return make_config(parse_config_text(text), overrides)
