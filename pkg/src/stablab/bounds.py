"""Closed-form stability and excess-risk bound calculators, the generic
growth-recursion unroller, and brute-force enumeration oracles.

All formulas are evaluated directly in 64-bit floats; desk-scale inputs never
need log-space tricks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ContractError, Dataset, FiniteSupportDistribution, LossFunction, empirical_risk
from .rules import Schedule


@dataclass
class BoundReport:
    """One theoretical bound value with provenance, paired with its empirical estimate."""

    name: str
    value: float
    inputs: dict = field(default_factory=dict)
    internals: dict = field(default_factory=dict)
    empirical_mean: Optional[float] = None
    empirical_stderr: Optional[float] = None
    verdict: Optional[str] = None  # "pass" | "fail" | "indicative" | None

    def __post_init__(self):
        if self.value < 0:
            raise ContractError("bound values are nonnegative")

    def judge(self, mean: float, stderr: float, certified: bool,
              slack_sigmas: float = 0.0) -> "BoundReport":
        """Attach the empirical estimate; pass/fail only when constants are certified.

        slack_sigmas > 0 allows `mean <= value + slack_sigmas * stderr` for
        bounds that hold in expectation and are checked by Monte Carlo.
        """
        self.empirical_mean = mean
        self.empirical_stderr = stderr
        if not certified:
            self.verdict = "indicative"
        else:
            limit = self.value + slack_sigmas * (stderr if math.isfinite(stderr) else 0.0)
            self.verdict = "pass" if mean <= limit else "fail"
        return self

    def to_json_dict(self) -> dict:
        empirical = None
        if self.empirical_mean is not None:
            empirical = {"mean": self.empirical_mean, "stderr": self.empirical_stderr}
        return {
            "name": self.name,
            "inputs": self.inputs,
            "value": self.value,
            "internals": self.internals,
            "empirical": empirical,
            "verdict": self.verdict,
        }


def convex_bound(L: float, n: int, schedule: Schedule, T: int) -> float:
    """Uniform stability of SGM on smooth convex losses: (2 L^2 / n) * sum_t alpha_t."""
    if n < 2:
        raise ContractError("need n >= 2")
    return 2.0 * L * L * schedule.partial_sum(T) / n


def strongly_convex_bound(L: float, gamma: float, n: int) -> float:
    """Projected SGM, constant alpha <= 1/beta: 2 L^2 / (gamma n), independent of T."""
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    if n < 2:
        raise ContractError("need n >= 2")
    return 2.0 * L * L / (gamma * n)


def strongly_convex_decaying_bound(
    L: float, beta: float, rho: float, gamma: float, n: int
) -> float:
    """Step sizes 1/(gamma t): (2 L^2 + beta rho) / (gamma n)."""
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    if rho < 0:
        raise ContractError("rho must be nonnegative")
    if n < 2:
        raise ContractError("need n >= 2")
    return (2.0 * L * L + beta * rho) / (gamma * n)


@dataclass(frozen=True)
class NonconvexBound:
    value: float
    t0: float
    exponent: float
    clamped: bool


def nonconvex_bound(L: float, beta: float, c: float, n: int, T: int) -> NonconvexBound:
    """Bounded nonconvex losses, alpha_t <= c/t.

    The closed form ((1 + 1/(beta c)) / (n-1)) (2 c L^2)^(1/(q+1)) T^(q/(q+1))
    with q = beta c is the two-term burn-in bound minimized over the burn-in
    cutoff t0 = (2 c L^2)^(1/(q+1)) T^(q/(q+1)). The cutoff must lie in [1, n];
    when the unconstrained optimizer leaves that range we clamp it, re-evaluate
    the two-term form t0/n + (2 L^2 / (beta (n-1))) (T/t0)^q, and flag the
    report.
    """
    if n < 2 or c <= 0 or T < 1 or L <= 0 or beta <= 0:
        raise ContractError("need n >= 2, c > 0, T >= 1, positive L and beta")
    q = beta * c
    exponent = q / (q + 1.0)
    t0 = (2.0 * c * L * L) ** (1.0 / (q + 1.0)) * T ** exponent
    if 1.0 <= t0 <= n:
        value = (1.0 + 1.0 / q) / (n - 1) * (2.0 * c * L * L) ** (1.0 / (q + 1.0)) * T ** exponent
        return NonconvexBound(value=value, t0=t0, exponent=exponent, clamped=False)
    t0_clamped = min(max(t0, 1.0), float(n))
    value = t0_clamped / n + (2.0 * L * L / (beta * (n - 1))) * (T / t0_clamped) ** q
    return NonconvexBound(value=value, t0=t0_clamped, exponent=exponent, clamped=True)


@dataclass(frozen=True)
class AveragingBound:
    """Iterate-averaged SGM stability; the derivation supports alpha (T+1) L^2 / n,
    the tighter alpha T L^2 / n is reported alongside. `safe` is the larger one."""

    statement: float
    derived: float

    @property
    def safe(self) -> float:
        return max(self.statement, self.derived)


def averaging_bound(L: float, alpha: float, T: int, n: int) -> AveragingBound:
    if n < 2 or T < 1 or alpha < 0:
        raise ContractError("need n >= 2, T >= 1, alpha >= 0")
    return AveragingBound(
        statement=alpha * T * L * L / n,
        derived=alpha * (T + 1) * L * L / n,
    )


def growth_recursion_unroll(T: int, n: int, eta_per_step, sigma_per_step) -> np.ndarray:
    """Unroll the expected-divergence recursion used by every stability proof.

    Delta_{t+1} = (1 - 1/n) eta_t Delta_t + (1/n)(min(eta_t, 1) Delta_t + 2 sigma_t),
    Delta_0 = 0; returns the full sequence Delta_0..Delta_T.
    """
    eta = np.asarray(eta_per_step, dtype=np.float64)
    sigma = np.asarray(sigma_per_step, dtype=np.float64)
    if eta.shape != (T,) or sigma.shape != (T,):
        raise ContractError("eta and sigma sequences must have length T")
    if np.any(eta < 0) or np.any(sigma < 0):
        raise ContractError("eta and sigma must be nonnegative")
    out = np.zeros(T + 1)
    inv_n = 1.0 / n
    for t in range(T):
        out[t + 1] = (
            (1.0 - inv_n) * eta[t] * out[t]
            + inv_n * (min(eta[t], 1.0) * out[t] + 2.0 * sigma[t])
        )
    return out


@dataclass(frozen=True)
class RiskBound:
    excess: float
    alpha: float


def ny_risk_bound(D: float, L: float, T: int, alpha: Optional[float] = None) -> RiskBound:
    """Averaged-iterate excess risk (1/2) D^2/(T alpha) + (1/2) L^2 alpha.

    With alpha omitted, uses the optimal D/(L sqrt(T)), giving D L / sqrt(T).
    """
    if D <= 0 or L <= 0 or T < 1:
        raise ContractError("need positive D, L and T >= 1")
    if alpha is None:
        alpha = D / (L * math.sqrt(T))
    elif alpha <= 0:
        raise ContractError("alpha must be positive")
    excess = 0.5 * D * D / (T * alpha) + 0.5 * L * L * alpha
    return RiskBound(excess=excess, alpha=alpha)


def multipass_risk_bound(D: float, L: float, n: int, T: int) -> RiskBound:
    """Multi-pass excess over the expected minimal empirical risk:
    (D L / sqrt(n)) sqrt((n + 2T)/T), at alpha = D sqrt(n) / (L sqrt(T (n + 2T)))."""
    if D <= 0 or L <= 0 or n < 1 or T < 1:
        raise ContractError("need positive inputs")
    excess = D * L / math.sqrt(n) * math.sqrt((n + 2.0 * T) / T)
    alpha = D * math.sqrt(n) / (L * math.sqrt(T * (n + 2.0 * T)))
    return RiskBound(excess=excess, alpha=alpha)


def risk_decomposition(expected_min_empirical: float, eps_opt: float, eps_stab: float) -> float:
    """Population risk bound: expected minimal empirical risk + eps_opt + eps_stab."""
    if eps_opt < 0 or eps_stab < 0:
        raise ContractError("error terms must be nonnegative")
    return expected_min_empirical + eps_opt + eps_stab


# ---------------------------------------------------------------------------
# enumeration oracle


@dataclass(frozen=True)
class ErmOracleResult:
    expected_min_empirical: float
    population_min: float
    slack: float


def _grid_minimize(fn, radius: float, points: int = 2001) -> tuple:
    grid = np.linspace(-radius, radius, points)
    vals = np.array([fn(np.array([g])) for g in grid])
    k = int(np.argmin(vals))
    return np.array([grid[k]]), float(vals[k])


def _minimize_empirical(loss: LossFunction, dataset: Dataset, radius: float):
    exact = getattr(loss, "exact_empirical_minimizer", None)
    if exact is not None:
        w = exact(dataset)
        return w, empirical_risk(loss, w, dataset)
    if dataset.dim != 1:
        raise ContractError("grid minimization oracle only supports 1-d parameters")
    return _grid_minimize(lambda w: empirical_risk(loss, w, dataset), radius)


def erm_vs_population_oracle(
    loss: LossFunction,
    dist: FiniteSupportDistribution,
    n: int,
    radius: float = 5.0,
    max_datasets: int = 10**6,
) -> ErmOracleResult:
    """Exact check that E_S[min_w R_S[w]] <= min_w R[w] by full enumeration.

    Enumerates dataset multisets over the finite support with multinomial
    weights and minimizes each empirical risk exactly (closed form when the
    loss provides one, fine grid otherwise).
    """
    if n < 2:
        raise ContractError("enumeration needs n >= 2")
    atoms, probs = dist.finite_support
    k = len(atoms)
    if k**n > max_datasets:
        raise ContractError(f"support^n = {k**n} exceeds enumeration budget {max_datasets}")

    total = 0.0
    log_probs = np.log(np.maximum(probs, 1e-300))
    for combo in itertools.combinations_with_replacement(range(k), n):
        counts = np.bincount(combo, minlength=k)
        log_weight = (
            math.lgamma(n + 1)
            - sum(math.lgamma(c + 1) for c in counts)
            + float(counts @ log_probs)
        )
        weight = math.exp(log_weight)
        if weight == 0.0:
            continue
        dataset = Dataset([atoms[j] for j in combo], dist.bound)
        _, min_emp = _minimize_empirical(loss, dataset, radius)
        total += weight * min_emp

    def population(w):
        return dist.exact_expectation(loss, w)

    exact = getattr(loss, "exact_population_minimizer", None)
    if exact is not None:
        w_star = exact(dist)
        pop_min = population(w_star)
    else:
        if dist.dim != 1:
            raise ContractError("grid minimization oracle only supports 1-d parameters")
        _, pop_min = _grid_minimize(lambda w: population(w), radius)
    return ErmOracleResult(
        expected_min_empirical=total,
        population_min=pop_min,
        slack=pop_min - total,
    )
