"""Closed-form guarantees for SAA with mixing data and for S-KM iterates.

Every bound depends on the concentration constant ``C`` of the empirical
measure under phi-mixing, which has no closed form; it enters here as the
positive scalar ``c_value`` and is echoed in every report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import ValidationError

__all__ = [
    "epsilon_radius", "out_of_sample_bound", "approx_error_bound", "fpr_bound",
    "deviation_bound", "pgd_regret_bound", "prs_regret_bound",
    "BoundInputs", "BoundEntry", "BoundReport", "evaluate",
]


def _positive(**values):
    for name, v in values.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValidationError(f"{name} must be positive and finite, got {v}")


def _nonneg(**values):
    for name, v in values.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValidationError(f"{name} must be non-negative and finite, got {v}")


def _confidence(beta):
    if not 0.0 < beta < 1.0:
        raise ValidationError(f"beta must lie in (0, 1), got {beta}")


def _samples(K):
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")


def epsilon_radius(K: int, beta: float, c_value: float = 1.0) -> float:
    """Radius ``sqrt(2 C log(2/beta) / K^2)`` of the 1 - beta confidence ball."""
    _samples(K)
    _confidence(beta)
    _positive(c_value=c_value)
    return math.sqrt(2.0 * c_value * math.log(2.0 / beta)) / K


def out_of_sample_bound(j_hat: float, l_cap: float, K: int, beta: float,
                        c_value: float = 1.0) -> float:
    """Upper 1 - beta confidence value ``J_hat + L * eps_K(beta)`` for the test loss."""
    _positive(l_cap=l_cap)
    return j_hat + l_cap * epsilon_radius(K, beta, c_value)


def approx_error_bound(r: float, c_value: float, K: int) -> float:
    """``Delta = sqrt(8 r^2 C / K^2) * Gamma(1/2)`` bounding ``E|eps_k|``."""
    _positive(r=r, c_value=c_value)
    _samples(K)
    return math.sqrt(8.0 * r * r * c_value) / K * math.gamma(0.5)


def fpr_bound(r: float, phi1: float, noise_sum: float, lambda_total: float) -> float:
    """Bound ``(2 r (1 + phi(1)) + 2 sum E|lam_k eps_k|) / Lambda_K`` on the ergodic FPR."""
    _positive(lambda_total=lambda_total)
    _nonneg(r=r, phi1=phi1, noise_sum=noise_sum)
    return (2.0 * r * (1.0 + phi1) + 2.0 * noise_sum) / lambda_total


def deviation_bound(r: float, K: int, tau: int, phi1: float, phi_tau1: float,
                    r_expect: float, kappa_sum: float) -> float:
    """Bound on ``E|sum_k (x_k - x*)|``.

    ``(1 + phi(1)) R + 2 (K - tau) r sqrt(phi(tau + 1)) + tau (kappa_sum + r)``
    """
    _samples(K)
    if not 0 <= tau <= K:
        raise ValidationError(f"tau must lie in [0, K], got {tau}")
    _nonneg(r=r, phi1=phi1, phi_tau1=phi_tau1, r_expect=r_expect, kappa_sum=kappa_sum)
    return ((1.0 + phi1) * r_expect + 2.0 * (K - tau) * r * math.sqrt(phi_tau1)
            + tau * (kappa_sum + r))


def pgd_regret_bound(r: float, K: int, gamma: float, beta_lip: float,
                     tau_min: float, c_value: float = 1.0) -> float:
    """Regret bound of the ergodic average for stochastic proximal gradient."""
    _samples(K)
    _positive(r=r, gamma=gamma, beta_lip=beta_lip, tau_min=tau_min, c_value=c_value)
    if gamma >= 2.0 * beta_lip:
        raise ValidationError("step size must lie in (0, 2 beta)")
    r2 = r * r
    return (r2 / (2.0 * K * gamma)
            + (1.0 / beta_lip - 1.0 / gamma) * (4.0 * r2 + 8.0 * r2 * math.pi * c_value / (K * tau_min)))


def _prs_terms(r, K, gamma, lam, tau_min, c_value):
    r2 = r * r
    return (r2 / (4.0 * gamma * lam * K),
            2.0 * (lam - 1.0) * r2 / (gamma * lam * lam),
            4.0 * r2 * math.pi / (gamma * lam * tau_min) * (1.0 - 1.0 / lam) * c_value / K)


def prs_regret_bound(r: float, K: int, gamma: float, lam: float, tau_min: float,
                     c_value: float = 1.0) -> float:
    """Regret bound at the averaged auxiliary points for relaxed Peaceman-Rachford.

    Evaluated verbatim: for ``lam < 1`` the last two terms are negative.
    """
    _samples(K)
    _positive(r=r, gamma=gamma, tau_min=tau_min, c_value=c_value)
    if not 0.0 < lam <= 1.0:
        raise ValidationError(f"lam must lie in (0, 1], got {lam}")
    return sum(_prs_terms(r, K, gamma, lam, tau_min, c_value))


# --------------------------------------------------------------------------
# Reports


@dataclass
class BoundInputs:
    """Everything the bound formulas read. Optional fields skip their bound."""

    K: int
    beta: float = 0.1
    c_value: float = 1.0
    phi_sum: Optional[float] = None
    phi1: float = 0.0
    phi_tau1: float = 0.0
    tau: int = 0
    r: float = 1.0
    l_cap: Optional[float] = None
    j_hat: Optional[float] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    lambda_total: Optional[float] = None
    tau_min: Optional[float] = None
    beta_lip: Optional[float] = None
    r_expect: Optional[float] = None
    kappa_sum: Optional[float] = None
    noise_sum: Optional[float] = None

    def __post_init__(self):
        _samples(self.K)
        _confidence(self.beta)
        _positive(c_value=self.c_value, r=self.r)


@dataclass
class BoundEntry:
    name: str
    value: float
    source: str
    inputs: dict
    flags: list = field(default_factory=list)


@dataclass
class BoundReport:
    entries: list

    FIELDS = ("bound_name", "value", "source", "flags", "inputs_json")

    def __getitem__(self, name: str) -> BoundEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self) -> list:
        return [e.name for e in self.entries]

    def to_text(self) -> str:
        width = max((len(e.name) for e in self.entries), default=0)
        lines = []
        for e in self.entries:
            flag = f"  [{', '.join(e.flags)}]" if e.flags else ""
            lines.append(f"{e.name:<{width}}  {e.value:>22.12g}  ({e.source}){flag}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        """One line per bound: ``bound_name,value,source,flags,inputs_json``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for e in self.entries:
            w.writerow([e.name, repr(e.value), e.source, ";".join(e.flags),
                        json.dumps(e.inputs, sort_keys=True)])
        return buf.getvalue()


def evaluate(inputs: BoundInputs) -> BoundReport:
    """Evaluate every bound whose inputs are present."""
    p = inputs
    out = []

    def add(name, source, fn, **kw):
        out.append(BoundEntry(name, float(fn(**kw)), source, dict(kw)))
        return out[-1]

    add("epsilon_radius", "concentration", epsilon_radius, K=p.K, beta=p.beta, c_value=p.c_value)
    if p.l_cap is not None and p.j_hat is not None:
        add("out_of_sample", "out-of-sample", out_of_sample_bound,
            j_hat=p.j_hat, l_cap=p.l_cap, K=p.K, beta=p.beta, c_value=p.c_value)
    delta = add("approx_error", "approximation-error", approx_error_bound,
                r=p.r, c_value=p.c_value, K=p.K).value
    if p.lambda_total is not None:
        noise_sum = p.noise_sum
        if noise_sum is None:
            # substitute E|lam_k eps_k| <= lam_k * Delta
            noise_sum = p.lambda_total * delta
        e = add("fpr", "fixed-point-residual", fpr_bound,
                r=p.r, phi1=p.phi1, noise_sum=noise_sum, lambda_total=p.lambda_total)
        if p.noise_sum is None:
            e.flags.append("noise-sum-from-approx-error")
    if p.r_expect is not None and p.kappa_sum is not None:
        add("deviation", "iterate-deviation", deviation_bound, r=p.r, K=p.K, tau=p.tau,
            phi1=p.phi1, phi_tau1=p.phi_tau1, r_expect=p.r_expect, kappa_sum=p.kappa_sum)
    if p.gamma is not None and p.beta_lip is not None and p.tau_min is not None:
        add("regret_pgd", "regret-pgd", pgd_regret_bound, r=p.r, K=p.K, gamma=p.gamma,
            beta_lip=p.beta_lip, tau_min=p.tau_min, c_value=p.c_value)
    if p.gamma is not None and p.lam is not None and p.tau_min is not None:
        e = add("regret_prs", "regret-prs", prs_regret_bound, r=p.r, K=p.K, gamma=p.gamma,
                lam=p.lam, tau_min=p.tau_min, c_value=p.c_value)
        terms = _prs_terms(p.r, p.K, p.gamma, p.lam, p.tau_min, p.c_value)
        if any(t < 0 for t in terms):
            e.flags.append("negative-terms")
    for e in out:
        if e.value < 0:
            e.flags.append("negative-value")
        if p.phi_sum is not None:
            e.inputs.setdefault("phi_sum", p.phi_sum)
    return BoundReport(out)


def inputs_to_json(inputs: BoundInputs) -> str:
    return json.dumps(asdict(inputs), sort_keys=True)
