"""Built-in losses with analytically certified regularity constants, plus
empirical falsifiers for the convexity and smoothness inequalities the
certificates rely on.

Constant derivations favour correctness over tightness: every certified
constant is an upper bound, so downstream theorem evaluations stay valid.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core import (
    CertificationError,
    ContractError,
    DataDistribution,
    Dataset,
    Example,
    LossFunction,
    RegularityConstants,
    as_param_array,
)


def _sigmoid(u):
    # np.exp overflow-safe split form
    out = np.empty_like(u, dtype=np.float64) if isinstance(u, np.ndarray) else None
    if out is None:
        return 1.0 / (1.0 + math.exp(-u)) if u >= 0 else math.exp(u) / (1.0 + math.exp(u))
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _check_pm1(y: float) -> None:
    if y not in (-1.0, 1.0):
        raise ContractError(f"classification losses need labels in {{-1, +1}}, got {y}")


class LeastSquaresLoss(LossFunction):
    """f(w; x, y) = (1/2)(w.x - y)^2 + (mu/2)||w||^2.

    Certified on the ball of radius `radius` with feature norms <= bound and
    |labels| <= label_bound:
        beta = bound^2 + mu,  gamma = mu,
        L = bound * (bound * radius + label_bound) + mu * radius.
    """

    def __init__(self, bound: float, ridge: float = 0.0, radius: float = 1.0,
                 label_bound: float = 1.0):
        if bound <= 0 or radius <= 0 or ridge < 0 or label_bound < 0:
            raise ContractError("bound and radius must be positive, ridge/label_bound nonnegative")
        self.bound = float(bound)
        self.ridge = float(ridge)
        self.radius = float(radius)
        self.label_bound = float(label_bound)
        self.convexity_class = "strongly_convex" if ridge > 0 else "convex"

    def value_xy(self, w, x, y):
        r = float(w @ x) - y
        v = 0.5 * r * r
        if self.ridge:
            v += 0.5 * self.ridge * float(w @ w)
        return v

    def grad_xy(self, w, x, y):
        r = float(w @ x) - y
        g = r * x
        if self.ridge:
            g = g + self.ridge * w
        return g

    def batch_value_xy(self, w, X, y):
        r = X @ w - y
        v = 0.5 * r * r
        if self.ridge:
            v = v + 0.5 * self.ridge * float(w @ w)
        return v

    def constants_at(self, radius: float) -> RegularityConstants:
        B, Y, mu = self.bound, self.label_bound, self.ridge
        margin = B * radius + Y
        return RegularityConstants(
            lipschitz=B * margin + mu * radius,
            smoothness=B * B + mu,
            strong_convexity=mu,
            range_bound=0.5 * margin * margin + 0.5 * mu * radius * radius,
            domain_radius=radius,
            certified=True,
        )

    def _normal_equations(self, X, y, weights):
        d = X.shape[1]
        A = (X * weights[:, None]).T @ X + self.ridge * np.eye(d)
        b = (X * weights[:, None]).T @ y
        if self.ridge > 0:
            return np.linalg.solve(A, b)
        return np.linalg.lstsq(A, b, rcond=None)[0]

    def exact_empirical_minimizer(self, dataset: Dataset) -> np.ndarray:
        n = dataset.n
        return self._normal_equations(
            dataset.feature_matrix, dataset.labels, np.full(n, 1.0 / n)
        )

    def exact_population_minimizer(self, dist) -> np.ndarray:
        atoms, probs = dist.finite_support
        X = np.asarray([z.features for z in atoms])
        y = np.asarray([z.label for z in atoms])
        return self._normal_equations(X, y, np.asarray(probs))


class LogisticLoss(LossFunction):
    """f(w; x, y) = log(1 + exp(-y w.x)) + (mu/2)||w||^2 for labels y in {-1, +1}.

    Certified on the radius-R ball: L = bound + mu R, beta = bound^2/4 + mu,
    gamma = mu.
    """

    def __init__(self, bound: float, ridge: float = 0.0, radius: float = 1.0):
        if bound <= 0 or radius <= 0 or ridge < 0:
            raise ContractError("bound and radius must be positive, ridge nonnegative")
        self.bound = float(bound)
        self.ridge = float(ridge)
        self.radius = float(radius)
        self.convexity_class = "strongly_convex" if ridge > 0 else "convex"

    def value_xy(self, w, x, y):
        _check_pm1(y)
        u = y * float(w @ x)
        v = float(np.logaddexp(0.0, -u))
        if self.ridge:
            v += 0.5 * self.ridge * float(w @ w)
        return v

    def grad_xy(self, w, x, y):
        _check_pm1(y)
        u = y * float(w @ x)
        g = (-y * _sigmoid(-u)) * x
        if self.ridge:
            g = g + self.ridge * w
        return g

    def batch_value_xy(self, w, X, y):
        u = y * (X @ w)
        v = np.logaddexp(0.0, -u)
        if self.ridge:
            v = v + 0.5 * self.ridge * float(w @ w)
        return v

    def zero_one_batch(self, w, X, y):
        """0/1 classification error of sign(w.x) against labels in {-1, +1}."""
        pred = np.where(X @ w >= 0, 1.0, -1.0)
        return (pred != y).astype(np.float64)

    def constants_at(self, radius: float) -> RegularityConstants:
        B, mu = self.bound, self.ridge
        return RegularityConstants(
            lipschitz=B + mu * radius,
            smoothness=0.25 * B * B + mu,
            strong_convexity=mu,
            range_bound=float(np.logaddexp(0.0, B * radius)) + 0.5 * mu * radius * radius,
            domain_radius=radius,
            certified=True,
        )


class SigmoidLoss(LossFunction):
    """Non-convex bounded loss f(w; x, y) = sigmoid(-y w.x) in (0, 1).

    Global constants: L = bound/4 (|sigmoid'| <= 1/4) and beta = bound^2/10,
    a documented upper bound on bound^2 * sup|sigmoid''| = bound^2/(6*sqrt(3))
    ~= 0.0962 * bound^2. rho = 1 since the value never leaves [0, 1].
    """

    convexity_class = "nonconvex"

    def __init__(self, bound: float):
        if bound <= 0:
            raise ContractError("bound must be positive")
        self.bound = float(bound)
        self.radius = math.inf

    def value_xy(self, w, x, y):
        _check_pm1(y)
        return float(_sigmoid(-y * float(w @ x)))

    def grad_xy(self, w, x, y):
        _check_pm1(y)
        u = y * float(w @ x)
        s = _sigmoid(u)
        return (-y * s * (1.0 - s)) * x

    def batch_value_xy(self, w, X, y):
        return _sigmoid(-y * (X @ w))

    def zero_one_batch(self, w, X, y):
        pred = np.where(X @ w >= 0, 1.0, -1.0)
        return (pred != y).astype(np.float64)

    def constants_at(self, radius: float) -> RegularityConstants:
        B = self.bound
        return RegularityConstants(
            lipschitz=0.25 * B,
            smoothness=0.1 * B * B,
            strong_convexity=0.0,
            range_bound=1.0,
            domain_radius=radius,
            certified=True,
        )


class TinyMLPLoss(LossFunction):
    """One-hidden-layer sigmoid network with squared error on a sigmoid output.

    Prediction yhat = sigmoid(w2 . sigmoid(W1 x + b1) + b2); the target is
    (y + 1)/2 for labels in {-1, +1}, so f = (yhat - target)^2 stays in [0, 1].
    Constants are never certified analytically; use the empirical estimator.
    """

    convexity_class = "nonconvex"

    def __init__(self, feature_dim: int, hidden: int = 4):
        if not 1 <= hidden <= 8:
            raise ContractError("hidden width must be in [1, 8]")
        if feature_dim < 1:
            raise ContractError("feature_dim must be positive")
        self.feature_dim = int(feature_dim)
        self.hidden = int(hidden)
        p, h = self.feature_dim, self.hidden
        self.param_blocks = (
            ("w1", slice(0, h * p)),
            ("b1", slice(h * p, h * p + h)),
            ("w2", slice(h * p + h, h * p + 2 * h)),
            ("b2", slice(h * p + 2 * h, h * p + 2 * h + 1)),
        )
        self.radius = math.inf

    def param_dim(self, feature_dim: int) -> int:
        if feature_dim != self.feature_dim:
            raise ContractError(f"loss built for {self.feature_dim} features, got {feature_dim}")
        return self.hidden * (feature_dim + 2) + 1

    def _unpack(self, w):
        p, h = self.feature_dim, self.hidden
        W1 = w[: h * p].reshape(h, p)
        b1 = w[h * p : h * p + h]
        w2 = w[h * p + h : h * p + 2 * h]
        b2 = w[h * p + 2 * h]
        return W1, b1, w2, b2

    @staticmethod
    def _target(y: float) -> float:
        return 0.5 * (y + 1.0) if y in (-1.0, 1.0) else min(max(y, 0.0), 1.0)

    def value_xy(self, w, x, y):
        W1, b1, w2, b2 = self._unpack(w)
        a1 = _sigmoid(W1 @ x + b1)
        yhat = _sigmoid(np.array([float(w2 @ a1) + b2]))[0]
        d = yhat - self._target(y)
        return float(d * d)

    def grad_xy(self, w, x, y):
        W1, b1, w2, b2 = self._unpack(w)
        z1 = W1 @ x + b1
        a1 = _sigmoid(z1)
        z2 = float(w2 @ a1) + b2
        yhat = float(_sigmoid(np.array([z2]))[0])
        dz2 = 2.0 * (yhat - self._target(y)) * yhat * (1.0 - yhat)
        dw2 = dz2 * a1
        dz1 = (dz2 * w2) * a1 * (1.0 - a1)
        g = np.empty_like(w)
        p, h = self.feature_dim, self.hidden
        g[: h * p] = np.outer(dz1, x).ravel()
        g[h * p : h * p + h] = dz1
        g[h * p + h : h * p + 2 * h] = dw2
        g[h * p + 2 * h] = dz2
        return g

    def zero_one_batch(self, w, X, y):
        preds = np.array([self.value_xy(w, X[i], 1.0) for i in range(X.shape[0])])
        # value against label +1 is (yhat - 1)^2, so yhat >= 1/2 iff value <= 1/4
        pred_label = np.where(preds <= 0.25, 1.0, -1.0)
        return (pred_label != y).astype(np.float64)

    def constants_at(self, radius: float) -> RegularityConstants:
        raise CertificationError(
            "TinyMLPLoss has no analytic constants; use estimate_constants_empirical"
        )


def certify_constants(loss: LossFunction, radius: float) -> RegularityConstants:
    """Analytic constants of `loss` on the radius-R ball; raises for uncertifiable losses."""
    return loss.constants_at(radius)


def sample_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform point in the radius-R ball: Gaussian direction, U^(1/d)-corrected radius."""
    u = rng.standard_normal(dim)
    u /= max(np.linalg.norm(u), 1e-300)
    r = radius * rng.uniform() ** (1.0 / dim)
    return r * u


def _probe_examples(dist: DataDistribution, rng: np.random.Generator, k: int):
    X, y = dist.sample_arrays(rng, k)
    return X, y


def estimate_constants_empirical(
    loss: LossFunction,
    dist: DataDistribution,
    radius: float,
    trials: int = 1000,
    seed: int = 0,
) -> RegularityConstants:
    """Sampled lower bounds on L and beta, reported as uncertified constants.

    L-hat is the max gradient norm over (w, z) draws; beta-hat the max
    gradient-difference ratio over pairs sharing z. Estimates of certified
    losses never exceed the certified constants.
    """
    if trials < 1000:
        raise ContractError("need at least 1000 trials for a meaningful estimate")
    rng = np.random.default_rng(seed)
    d = loss.param_dim(dist.dim)
    X, y = _probe_examples(dist, rng, trials)
    lip = 0.0
    smooth = 0.0
    rho = 0.0
    for k in range(trials):
        u = sample_ball(rng, d, radius)
        v = sample_ball(rng, d, radius)
        gu = loss.grad_xy(u, X[k], y[k])
        gv = loss.grad_xy(v, X[k], y[k])
        lip = max(lip, float(np.linalg.norm(gu)), float(np.linalg.norm(gv)))
        rho = max(rho, loss.value_xy(u, X[k], y[k]), loss.value_xy(v, X[k], y[k]))
        duv = float(np.linalg.norm(u - v))
        if duv >= 1e-8:
            smooth = max(smooth, float(np.linalg.norm(gu - gv)) / duv)
    return RegularityConstants(
        lipschitz=max(lip, 1e-300),
        smoothness=max(smooth, 1e-300),
        strong_convexity=0.0,
        range_bound=rho,
        domain_radius=radius,
        certified=False,
    )


def check_cocoercivity(
    loss: LossFunction,
    dist: DataDistribution,
    trials: int = 10_000,
    seed: int = 0,
    radius: Optional[float] = None,
) -> float:
    """Min slack of <grad f(v)-grad f(w), v-w> >= (1/beta)||grad f(v)-grad f(w)||^2.

    Holds for convex beta-smooth losses; certified convex losses must come
    out >= -1e-9.
    """
    if loss.convexity_class not in ("convex", "strongly_convex"):
        raise ContractError("co-coercivity applies to convex losses only")
    beta = loss.constants().smoothness
    if beta <= 1e-12:
        raise ContractError("co-coercivity is vacuous at beta = 0 (linear loss)")
    radius = radius if radius is not None else getattr(loss, "radius", 1.0)
    rng = np.random.default_rng(seed)
    d = loss.param_dim(dist.dim)
    X, y = _probe_examples(dist, rng, trials)
    worst = math.inf
    for k in range(trials):
        u = sample_ball(rng, d, radius)
        v = sample_ball(rng, d, radius)
        dg = loss.grad_xy(u, X[k], y[k]) - loss.grad_xy(v, X[k], y[k])
        slack = float(dg @ (u - v)) - float(dg @ dg) / beta
        worst = min(worst, slack)
    return worst


def check_strong_convexity_inequality(
    loss: LossFunction,
    gamma: float,
    dist: DataDistribution,
    trials: int = 10_000,
    seed: int = 0,
    radius: Optional[float] = None,
) -> float:
    """Min slack of f(u) - f(v) - <grad f(v), u-v> - (gamma/2)||u-v||^2 over sampled pairs."""
    if loss.convexity_class != "strongly_convex":
        raise ContractError("strong convexity check applies to strongly convex losses only")
    radius = radius if radius is not None else getattr(loss, "radius", 1.0)
    rng = np.random.default_rng(seed)
    d = loss.param_dim(dist.dim)
    X, y = _probe_examples(dist, rng, trials)
    worst = math.inf
    for k in range(trials):
        u = sample_ball(rng, d, radius)
        v = sample_ball(rng, d, radius)
        duv = u - v
        slack = (
            loss.value_xy(u, X[k], y[k])
            - loss.value_xy(v, X[k], y[k])
            - float(loss.grad_xy(v, X[k], y[k]) @ duv)
            - 0.5 * gamma * float(duv @ duv)
        )
        worst = min(worst, slack)
    return worst


class SyntheticDistribution(DataDistribution):
    """Seeded Gaussian features scaled to norm <= bound, labels from a planted vector.

    classification=True emits labels in {-1, +1} with each sign flipped with
    probability label_noise; otherwise labels are planted.x plus Gaussian
    noise of that standard deviation.
    """

    def __init__(self, dim: int, bound: float, planted, label_noise: float = 0.0,
                 classification: bool = True, label_clip: Optional[float] = None):
        planted = np.asarray(planted, dtype=np.float64)
        if planted.shape != (dim,):
            raise ContractError("planted vector must match feature dimension")
        bad_noise = not (0 <= label_noise <= 1) if classification else label_noise < 0
        if bad_noise:
            raise ContractError("label_noise out of range")
        if label_clip is not None and label_clip <= 0:
            raise ContractError("label_clip must be positive")
        self._dim = int(dim)
        self._bound = float(bound)
        self.planted = planted
        self.label_noise = float(label_noise)
        self.classification = bool(classification)
        self.label_clip = label_clip

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def bound(self) -> float:
        return self._bound

    def sample_arrays(self, rng: np.random.Generator, k: int):
        X = rng.standard_normal((k, self._dim))
        norms = np.linalg.norm(X, axis=1)
        X *= (self._bound / np.maximum(norms, self._bound))[:, None]
        raw = X @ self.planted
        if self.classification:
            y = np.where(raw >= 0, 1.0, -1.0)
            if self.label_noise > 0:
                flips = rng.uniform(size=k) < self.label_noise
                y = np.where(flips, -y, y)
        else:
            y = raw
            if self.label_noise > 0:
                y = y + self.label_noise * rng.standard_normal(k)
            if self.label_clip is not None:
                y = np.clip(y, -self.label_clip, self.label_clip)
        return X, y

    def atomize(self, atoms: int, seed: int, uniform: bool = True):
        """Freeze the distribution into an explicit finite support of `atoms` draws."""
        from .core import FiniteSupportDistribution

        rng = np.random.default_rng(seed)
        X, y = self.sample_arrays(rng, atoms)
        if uniform:
            probs = np.full(atoms, 1.0 / atoms)
        else:
            probs = rng.uniform(0.5, 1.5, size=atoms)
            probs /= probs.sum()
        return FiniteSupportDistribution(
            [Example(X[i], y[i]) for i in range(atoms)], probs, self._bound
        )


def synthetic_dataset(
    dim: int,
    n: int,
    bound: float,
    seed: int,
    planted=None,
    label_noise: float = 0.0,
    classification: bool = True,
) -> Dataset:
    """Convenience wrapper: one seeded draw of n examples from SyntheticDistribution."""
    rng = np.random.default_rng(seed)
    if planted is None:
        planted = rng.standard_normal(dim)
        planted /= max(np.linalg.norm(planted), 1e-300)
    dist = SyntheticDistribution(dim, bound, planted, label_noise, classification)
    return dist.sample_dataset(rng, n)
