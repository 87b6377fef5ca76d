import math

import numpy as np
import pytest

from stablab.core import (
    CertificationError,
    ContractError,
    Example,
    FiniteSupportDistribution,
    LossFunction,
    RegularityConstants,
    finite_diff_gradient_check,
)
from stablab.problems import (
    LeastSquaresLoss,
    LogisticLoss,
    SigmoidLoss,
    SyntheticDistribution,
    TinyMLPLoss,
    certify_constants,
    check_cocoercivity,
    check_strong_convexity_inequality,
    estimate_constants_empirical,
    sample_ball,
    synthetic_dataset,
)


class QuadLoss(LossFunction):
    """f = (1/2)||w||^2 regardless of the example: gradient is the identity."""

    convexity_class = "strongly_convex"

    def value_xy(self, w, x, y):
        return 0.5 * float(w @ w)

    def grad_xy(self, w, x, y):
        return w.copy()

    def constants_at(self, radius):
        return RegularityConstants(lipschitz=radius, smoothness=1.0,
                                   strong_convexity=1.0, domain_radius=radius)


class NearLinearLoss(LossFunction):
    convexity_class = "convex"

    def value_xy(self, w, x, y):
        return float(w @ x)

    def grad_xy(self, w, x, y):
        return x.copy()

    def constants_at(self, radius):
        return RegularityConstants(lipschitz=1.0, smoothness=1e-300, domain_radius=radius)


def cls_dist(noise=0.1):
    return SyntheticDistribution(2, 1.0, np.array([0.6, 0.8]), label_noise=noise,
                                 classification=True)


def reg_dist(noise=0.1):
    return SyntheticDistribution(2, 1.0, np.array([0.6, 0.8]), label_noise=noise,
                                 classification=False, label_clip=1.5)


def test_certified_constants_least_squares():
    consts = certify_constants(LeastSquaresLoss(1.0, ridge=0.0, label_bound=1.0), 1.0)
    assert consts.smoothness == pytest.approx(1.0)
    assert consts.strong_convexity == 0.0
    assert consts.lipschitz == pytest.approx(2.0)


def test_certified_constants_logistic():
    consts = certify_constants(LogisticLoss(2.0), 1.0)
    assert consts.lipschitz == pytest.approx(2.0)
    assert consts.smoothness == pytest.approx(1.0)


def test_certified_constants_sigmoid():
    consts = SigmoidLoss(4.0).constants()
    assert consts.lipschitz == pytest.approx(1.0)
    assert consts.range_bound == 1.0
    # documented conservative smoothness: above the true B^2/(6 sqrt(3))
    assert consts.smoothness >= 16.0 / (6.0 * math.sqrt(3.0))


def test_mlp_cannot_certify():
    with pytest.raises(CertificationError):
        certify_constants(TinyMLPLoss(2, hidden=3), 1.0)


def test_estimate_constants_constant_loss():
    class Flat(LossFunction):
        convexity_class = "convex"

        def value_xy(self, w, x, y):
            return 1.0

        def grad_xy(self, w, x, y):
            return np.zeros_like(w)

        def constants_at(self, radius):
            raise CertificationError("flat")

    est = estimate_constants_empirical(Flat(), cls_dist(), radius=1.0, trials=1000, seed=0)
    assert est.lipschitz <= 1e-12
    assert est.smoothness <= 1e-12
    assert not est.certified


def test_estimates_never_exceed_certified():
    radius = 2.0
    for loss in (LeastSquaresLoss(1.0, radius=radius, label_bound=1.5),
                 LogisticLoss(1.0, radius=radius)):
        dist = reg_dist() if isinstance(loss, LeastSquaresLoss) else cls_dist()
        cert = loss.constants_at(radius)
        est = estimate_constants_empirical(loss, dist, radius, trials=2000, seed=1)
        assert est.lipschitz <= cert.lipschitz * (1 + 1e-9)
        assert est.smoothness <= cert.smoothness * (1 + 1e-9)


def test_estimate_constants_mlp():
    loss = TinyMLPLoss(2, hidden=3)
    est = estimate_constants_empirical(loss, cls_dist(), radius=2.0, trials=1000, seed=2)
    assert est.lipschitz > 0 and math.isfinite(est.lipschitz)
    assert est.smoothness > 0 and math.isfinite(est.smoothness)
    assert not est.certified


def test_cocoercivity_identity_gradient_equality_case():
    # gradient is the identity and beta = 1: the inequality is tight everywhere
    slack = check_cocoercivity(QuadLoss(), cls_dist(), trials=1000, seed=3, radius=2.0)
    assert slack == pytest.approx(0.0, abs=1e-12)


def test_cocoercivity_logistic():
    loss = LogisticLoss(1.0, radius=2.0)
    slack = check_cocoercivity(loss, cls_dist(), trials=10_000, seed=4, radius=2.0)
    assert slack >= -1e-9


def test_cocoercivity_rejects_nonconvex():
    with pytest.raises(ContractError):
        check_cocoercivity(SigmoidLoss(1.0), cls_dist(), trials=1000, seed=5)


def test_cocoercivity_vacuous_for_linear():
    with pytest.raises(ContractError, match="vacuous"):
        check_cocoercivity(NearLinearLoss(), cls_dist(), trials=1000, seed=6)


def test_cocoercivity_linear_case_skipped():
    pytest.skip("linear loss has beta = 0: the co-coercivity constant 1/beta "
                "is undefined, so the check is vacuous")


def test_strong_convexity_ridge_only_equality():
    # f = (mu/2)||w||^2 with gamma = mu: slack identically zero
    class Ridge(LossFunction):
        convexity_class = "strongly_convex"

        def value_xy(self, w, x, y):
            return 0.25 * float(w @ w)

        def grad_xy(self, w, x, y):
            return 0.5 * w

        def constants_at(self, radius):
            return RegularityConstants(lipschitz=0.5 * radius, smoothness=0.5,
                                       strong_convexity=0.5, domain_radius=radius)

    slack = check_strong_convexity_inequality(Ridge(), 0.5, cls_dist(), trials=1000,
                                              seed=7, radius=2.0)
    assert slack == pytest.approx(0.0, abs=1e-12)


def test_strong_convexity_least_squares():
    loss = LeastSquaresLoss(1.0, ridge=0.1, radius=2.0, label_bound=1.5)
    slack = check_strong_convexity_inequality(loss, 0.1, reg_dist(), trials=10_000,
                                              seed=8, radius=2.0)
    assert slack >= -1e-9


def test_strong_convexity_falsifier_detects_inflated_gamma():
    loss = LeastSquaresLoss(1.0, ridge=0.1, radius=2.0, label_bound=1.5)
    beta = loss.constants_at(2.0).smoothness
    slack = check_strong_convexity_inequality(loss, beta + 1.0, reg_dist(), trials=2000,
                                              seed=9, radius=2.0)
    assert slack < 0


def test_sigmoid_values_in_unit_interval():
    loss = SigmoidLoss(4.0)
    rng = np.random.default_rng(10)
    dist = cls_dist()
    X, y = dist.sample_arrays(rng, 500)
    for k in range(500):
        v = loss.value_xy(sample_ball(rng, 2, 3.0), X[k], y[k])
        assert 0.0 <= v <= 1.0


def test_all_losses_pass_finite_diff():
    rng = np.random.default_rng(11)
    dist = cls_dist()
    cases = [
        (LeastSquaresLoss(1.0, ridge=0.1, radius=2.0, label_bound=1.5), reg_dist()),
        (LogisticLoss(1.0, ridge=0.05, radius=2.0), dist),
        (SigmoidLoss(2.0), dist),
        (TinyMLPLoss(2, hidden=4), dist),
    ]
    for loss, d in cases:
        dd = loss.param_dim(2)
        X, y = d.sample_arrays(rng, 100)
        for k in range(100):
            w = sample_ball(rng, dd, 2.0)
            err = finite_diff_gradient_check(loss, w, Example(X[k], y[k]))
            assert err < 1e-4, type(loss).__name__


def test_classification_losses_reject_other_labels():
    with pytest.raises(ContractError):
        LogisticLoss(1.0).value_xy(np.zeros(2), np.zeros(2), 0.5)
    with pytest.raises(ContractError):
        SigmoidLoss(1.0).grad_xy(np.zeros(2), np.zeros(2), 2.0)


def test_mlp_loss_range_and_blocks():
    loss = TinyMLPLoss(3, hidden=2)
    d = loss.param_dim(3)
    assert d == 2 * (3 + 2) + 1
    rng = np.random.default_rng(12)
    w = rng.standard_normal(d)
    for y in (-1.0, 1.0):
        v = loss.value_xy(w, rng.standard_normal(3), y)
        assert 0.0 <= v <= 1.0
    names = [name for name, _ in loss.param_blocks]
    assert names == ["w1", "b1", "w2", "b2"]
    covered = sum(sl.stop - sl.start for _, sl in loss.param_blocks)
    assert covered == d


def test_sample_ball_stays_in_ball_and_reaches_boundary():
    rng = np.random.default_rng(13)
    norms = [float(np.linalg.norm(sample_ball(rng, 3, 2.0))) for _ in range(2000)]
    assert max(norms) <= 2.0 * (1 + 1e-12)
    assert max(norms) > 1.9  # boundary region is exercised


def test_synthetic_dataset_deterministic_and_bounded():
    ds1 = synthetic_dataset(3, 20, bound=1.0, seed=5, label_noise=0.2)
    ds2 = synthetic_dataset(3, 20, bound=1.0, seed=5, label_noise=0.2)
    assert ds1 == ds2
    assert all(np.linalg.norm(z.features) <= 1.0 + 1e-12 for z in ds1.examples)
    assert all(z.label in (-1.0, 1.0) for z in ds1.examples)


def test_atomize_produces_finite_support():
    dist = cls_dist().atomize(8, seed=3)
    assert isinstance(dist, FiniteSupportDistribution)
    atoms, probs = dist.finite_support
    assert len(atoms) == 8
    assert float(np.sum(probs)) == pytest.approx(1.0, abs=1e-12)
