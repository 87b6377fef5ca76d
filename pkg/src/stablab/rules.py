"""Update maps G: Omega -> Omega with certified expansiveness and boundedness,
plus the sampling falsifiers that try to break the certificates.

Expansiveness eta bounds sup ||G(v)-G(w)|| / ||v-w||; boundedness sigma bounds
sup ||w - G(w)||. The certificates follow the closed-form factors the step
assembly is entitled to under each convexity class and step-size regime.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ContractError, Example, LossFunction, RegularityConstants, as_param_array
from .problems import sample_ball


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class Schedule:
    """Step size alpha_t for 1-based t: constant, c/t, or 1/(gamma t)."""

    kind: str
    param: float

    KINDS = ("constant", "inverse_t", "inverse_strong")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractError(f"unknown schedule kind {self.kind!r}")
        if self.param <= 0:
            raise ContractError("schedule parameter must be positive")

    @classmethod
    def constant(cls, alpha: float) -> "Schedule":
        return cls("constant", alpha)

    @classmethod
    def inverse_t(cls, c: float) -> "Schedule":
        return cls("inverse_t", c)

    @classmethod
    def inverse_strong(cls, gamma: float) -> "Schedule":
        return cls("inverse_strong", gamma)

    def alpha(self, t: int) -> float:
        if t < 1:
            raise ContractError("steps are 1-based")
        if self.kind == "constant":
            return self.param
        if self.kind == "inverse_t":
            return self.param / t
        return 1.0 / (self.param * t)

    def alphas(self, T: int) -> np.ndarray:
        t = np.arange(1, T + 1, dtype=np.float64)
        if self.kind == "constant":
            return np.full(T, self.param)
        if self.kind == "inverse_t":
            return self.param / t
        return 1.0 / (self.param * t)

    def partial_sum(self, T: int) -> float:
        """Sum of alpha_t for t = 1..T."""
        if T <= 0:
            return 0.0
        return float(np.sum(self.alphas(T)))


# ---------------------------------------------------------------------------
# dropout realizations


def apply_dropout_mask(g: np.ndarray, rate: float, keep_prob: float, mode: str,
                       mask: np.ndarray) -> np.ndarray:
    """Apply a precomputed keep-mask to g under the chosen dropout realization.

    norm_exact rescales the masked vector so its norm equals rate*||g||
    exactly (the all-zero mask, probability (1-keep_prob)^d, maps to 0 and is
    the one event where E||Dg|| falls below rate*||g||). inverted keeps
    coordinates and scales them by rate/keep_prob; it is only approximately
    norm-preserving and is flagged "approximate" wherever reported.
    """
    if mode == "norm_exact":
        masked = np.where(mask, g, 0.0)
        nrm = float(np.linalg.norm(masked))
        if nrm == 0.0:
            return np.zeros_like(g)
        return masked * (rate * float(np.linalg.norm(g)) / nrm)
    if mode == "inverted":
        return np.where(mask, g * (rate / keep_prob), 0.0)
    raise ContractError(f"unknown dropout mode {mode!r}")


def norm_exact_dropout(g, rate, keep_prob, rng):
    mask = rng.uniform(size=g.shape[0]) < keep_prob
    return apply_dropout_mask(g, rate, keep_prob, "norm_exact", mask)


def inverted_dropout(g, rate, keep_prob, rng):
    mask = rng.uniform(size=g.shape[0]) < keep_prob
    return apply_dropout_mask(g, rate, keep_prob, "inverted", mask)


DROPOUT_MODES = {"norm_exact": norm_exact_dropout, "inverted": inverted_dropout}


# ---------------------------------------------------------------------------
# proximal maps (closed forms only)


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Prox of tau*||.||_1: shrink each coordinate toward 0 by tau; exact 0 stays 0."""
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the centered ball of the given radius."""
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return v
    return v * (radius / nrm)


def shrink_toward_origin(v: np.ndarray, alpha: float) -> np.ndarray:
    """Prox of alpha * (1/2)||.||^2, i.e. v / (1 + alpha)."""
    return v / (1.0 + alpha)


# ---------------------------------------------------------------------------
# rules


@dataclass(frozen=True)
class RuleCertificate:
    """Closed-form (eta, sigma) certificate for one update rule application."""

    eta: float
    sigma: float
    in_expectation: bool = False
    assumptions: tuple = ()
    downgraded: bool = False
    certified: bool = True

    def __post_init__(self):
        if self.eta < 0 or self.sigma < 0:
            raise ContractError("certificate factors must be nonnegative")


class UpdateRule:
    """Base: a map w -> G(w), deterministic unless the subclass consumes rng."""

    stochastic = False

    def apply(self, w, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def certify(self, constants: RegularityConstants) -> RuleCertificate:
        raise NotImplementedError


@dataclass(frozen=True)
class GradientRule(UpdateRule):
    """w -> w - alpha * grad f(w; z)."""

    loss: LossFunction
    example: Example
    alpha: float

    def apply(self, w, rng=None):
        w = as_param_array(w)
        return w - self.alpha * self.loss.grad_xy(w, self.example.features, self.example.label)

    def certify(self, constants):
        eta, downgraded = gradient_eta(
            self.loss.convexity_class, self.alpha, constants.smoothness,
            constants.strong_convexity,
        )
        return RuleCertificate(
            eta=eta,
            sigma=self.alpha * constants.lipschitz,
            assumptions=("L", "beta") + (("gamma",) if constants.strong_convexity > 0 else ()),
            downgraded=downgraded,
            certified=constants.certified,
        )


def gradient_eta(convexity_class: str, alpha: float, beta: float, gamma: float):
    """Expansiveness factor of the plain gradient step; returns (eta, downgraded)."""
    if convexity_class == "strongly_convex" and gamma > 0 and alpha <= 2.0 / (beta + gamma):
        return 1.0 - alpha * beta * gamma / (beta + gamma), False
    if convexity_class in ("convex", "strongly_convex"):
        if alpha <= 2.0 / beta:
            return 1.0, False
        warnings.warn(
            f"step size {alpha} exceeds 2/beta = {2.0 / beta}; "
            "certificate downgraded to the smooth factor 1 + alpha*beta",
            stacklevel=3,
        )
        return 1.0 + alpha * beta, True
    return 1.0 + alpha * beta, False


@dataclass(frozen=True)
class WeightDecayRule(UpdateRule):
    """w -> (1 - alpha*mu) w - alpha * grad f(w; z)."""

    loss: LossFunction
    example: Example
    alpha: float
    mu: float

    def apply(self, w, rng=None):
        w = as_param_array(w)
        g = self.loss.grad_xy(w, self.example.features, self.example.label)
        return (1.0 - self.alpha * self.mu) * w - self.alpha * g

    def certify(self, constants):
        # abs() keeps the triangle-inequality derivation valid past alpha*mu = 1
        eta = abs(1.0 - self.alpha * self.mu) + self.alpha * constants.smoothness
        radius = constants.domain_radius
        sigma = self.alpha * (constants.lipschitz + self.mu * radius)
        return RuleCertificate(
            eta=eta,
            sigma=sigma,
            assumptions=("L", "beta", "domain_radius"),
            certified=constants.certified,
        )


@dataclass(frozen=True)
class DropoutRule(UpdateRule):
    """w -> w - alpha * D(grad f(w; z)) for a rate-s dropout operator D."""

    loss: LossFunction
    example: Example
    alpha: float
    rate: float
    keep_prob: Optional[float] = None
    mode: str = "norm_exact"

    stochastic = True

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ContractError("dropout rate must lie in (0, 1]")
        if self.mode not in DROPOUT_MODES:
            raise ContractError(f"unknown dropout mode {self.mode!r}")

    def apply(self, w, rng=None):
        if rng is None:
            raise ContractError("dropout consumes an explicit rng")
        w = as_param_array(w)
        g = self.loss.grad_xy(w, self.example.features, self.example.label)
        q = self.keep_prob if self.keep_prob is not None else self.rate
        return w - self.alpha * DROPOUT_MODES[self.mode](g, self.rate, q, rng)

    def certify(self, constants):
        eta, downgraded = gradient_eta(
            self.loss.convexity_class, self.alpha, constants.smoothness,
            constants.strong_convexity,
        )
        return RuleCertificate(
            eta=eta,
            sigma=self.rate * self.alpha * constants.lipschitz,
            in_expectation=True,
            assumptions=("L", "mask-coupled expansiveness", f"mode={self.mode}"),
            downgraded=downgraded,
            certified=constants.certified,
        )


@dataclass(frozen=True)
class ClippedRule(UpdateRule):
    """Gradient step with the gradient rescaled to norm <= clip before stepping."""

    loss: LossFunction
    example: Example
    alpha: float
    clip: float

    def apply(self, w, rng=None):
        w = as_param_array(w)
        g = self.loss.grad_xy(w, self.example.features, self.example.label)
        nrm = float(np.linalg.norm(g))
        if nrm > self.clip:
            g = g * (self.clip / nrm)
        return w - self.alpha * g

    def certify(self, constants):
        if constants.certified and self.clip >= constants.lipschitz:
            # clipping never binds; the plain gradient certificate applies
            eta, downgraded = gradient_eta(
                self.loss.convexity_class, self.alpha, constants.smoothness,
                constants.strong_convexity,
            )
        else:
            # rescaling is 1-Lipschitz in the gradient, so only smoothness survives
            eta, downgraded = 1.0 + self.alpha * constants.smoothness, False
        sigma = self.alpha * (
            min(self.clip, constants.lipschitz) if constants.certified else self.clip
        )
        return RuleCertificate(
            eta=eta,
            sigma=sigma,
            assumptions=("clip", "beta"),
            downgraded=downgraded,
            certified=constants.certified,
        )


@dataclass(frozen=True)
class ProjectedRule(UpdateRule):
    """Inner rule followed by Euclidean projection onto the radius-R ball."""

    inner: UpdateRule
    radius: float

    @property
    def stochastic(self):
        return self.inner.stochastic

    def apply(self, w, rng=None):
        return project_ball(self.inner.apply(w, rng), self.radius)

    def certify(self, constants):
        cert = self.inner.certify(constants)
        # projection is 1-expansive, and for w inside the ball it cannot
        # lengthen the step, so both factors pass through unchanged
        return RuleCertificate(
            eta=cert.eta,
            sigma=cert.sigma,
            in_expectation=cert.in_expectation,
            assumptions=cert.assumptions + ("projection: w in ball",),
            downgraded=cert.downgraded,
            certified=cert.certified,
        )


@dataclass(frozen=True)
class ProximalRule(UpdateRule):
    """w -> argmin_v (1/2)||w - v||^2 + alpha * g(v) for a closed-form convex g.

    Shipped g: "l1" (lam * l1-norm, soft threshold), "ball" (indicator of the
    radius ball, projection), "sq_norm" ((1/2)||.||^2, shrink by 1/(1+alpha)).
    """

    prox: str
    alpha: float
    lam: float = 1.0
    radius: float = 1.0

    PROXES = ("l1", "ball", "sq_norm")

    def __post_init__(self):
        if self.prox not in self.PROXES:
            raise ContractError(f"unknown prox {self.prox!r}; closed forms: {self.PROXES}")
        if self.alpha < 0:
            raise ContractError("alpha must be nonnegative")

    def apply(self, w, rng=None):
        w = as_param_array(w)
        if self.prox == "l1":
            return soft_threshold(w, self.alpha * self.lam)
        if self.prox == "ball":
            return project_ball(w, self.radius)
        return shrink_toward_origin(w, self.alpha)

    def certify(self, constants):
        if self.prox == "sq_norm":
            eta = 1.0 / (1.0 + self.alpha)
            radius = constants.domain_radius
            sigma = self.alpha / (1.0 + self.alpha) * radius
            return RuleCertificate(eta=eta, sigma=sigma, assumptions=("domain_radius",))
        # any convex g: 1-expansive; no useful universal sigma
        return RuleCertificate(eta=1.0, sigma=math.inf, assumptions=("convex g",))


def certify(rule: UpdateRule, constants: RegularityConstants) -> RuleCertificate:
    """Certificate for `rule` under the given constants (flagged when not certified)."""
    return rule.certify(constants)


# ---------------------------------------------------------------------------
# falsifiers


def empirical_expansiveness(
    rule: UpdateRule,
    dim: int,
    radius: float,
    trials: int = 1000,
    seed: int = 0,
) -> float:
    """Max observed ||G(v)-G(w)|| / ||v-w|| over sampled pairs in the radius ball.

    Stochastic rules are evaluated with coupled draws (same rng state on both
    points), matching how paired trainings share their mask stream.
    """
    if trials < 1000:
        raise ContractError("need at least 1000 trials")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=trials)
    worst = 0.0
    for k in range(trials):
        v = sample_ball(rng, dim, radius)
        w = sample_ball(rng, dim, radius)
        duv = float(np.linalg.norm(v - w))
        if duv < 1e-8:
            continue
        gv = rule.apply(v, np.random.default_rng(seeds[k]) if rule.stochastic else None)
        gw = rule.apply(w, np.random.default_rng(seeds[k]) if rule.stochastic else None)
        worst = max(worst, float(np.linalg.norm(gv - gw)) / duv)
    return worst


def empirical_boundedness(
    rule: UpdateRule,
    dim: int,
    radius: float,
    trials: int = 1000,
    seed: int = 0,
    mask_draws: int = 256,
) -> float:
    """Max observed ||w - G(w)|| over sampled points (per-point mean for dropout)."""
    if trials < 1000:
        raise ContractError("need at least 1000 trials")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w = sample_ball(rng, dim, radius)
        if rule.stochastic:
            moves = [
                float(np.linalg.norm(w - rule.apply(w, np.random.default_rng(s))))
                for s in rng.integers(0, 2**63 - 1, size=mask_draws)
            ]
            worst = max(worst, float(np.mean(moves)))
        else:
            worst = max(worst, float(np.linalg.norm(w - rule.apply(w))))
    return worst


def composed_step_certificate(
    convexity_class: str,
    constants: RegularityConstants,
    alpha: float,
    weight_decay: float = 0.0,
    dropout_rate: float = 0.0,
    clip: float = 0.0,
) -> RuleCertificate:
    """Per-step (eta_t, sigma_t) for the engine's composed update at step size alpha.

    Mirrors the rule-level certificates: weight decay replaces the gradient
    factor, dropout scales sigma in expectation, clipping caps the effective
    Lipschitz constant, projection changes nothing.
    """
    beta, gamma, L = constants.smoothness, constants.strong_convexity, constants.lipschitz
    downgraded = False
    in_expectation = False
    if weight_decay > 0:
        eta = abs(1.0 - alpha * weight_decay) + alpha * beta
    else:
        eta, downgraded = gradient_eta(convexity_class, alpha, beta, gamma)
    L_eff = min(L, clip) if clip > 0 else L
    sigma = alpha * L_eff
    if weight_decay > 0 and math.isfinite(constants.domain_radius):
        sigma += alpha * weight_decay * constants.domain_radius
    if dropout_rate > 0:
        sigma *= dropout_rate
        in_expectation = True
    return RuleCertificate(
        eta=eta,
        sigma=sigma,
        in_expectation=in_expectation,
        assumptions=("composed step",),
        downgraded=downgraded,
        certified=constants.certified,
    )
