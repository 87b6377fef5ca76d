import math

import numpy as np
import pytest

from stablab.core import ContractError, Dataset, Example, make_neighbor
from stablab.engine import (
    RunConfig,
    SamplingScheme,
    average_iterates,
    derive_streams,
    index_sequence,
    initial_point,
    run_sgm,
    trajectory_to_csv,
)
from stablab.problems import LeastSquaresLoss, LogisticLoss, SyntheticDistribution
from stablab.rules import Schedule

from test_problems import QuadLoss


def single_example_dataset(x=1.0, y=1.0):
    z = Example([x], y)
    return Dataset([z, z], bound=abs(x))


def small_cls_dataset(n=10, seed=0):
    dist = SyntheticDistribution(2, 1.0, np.array([0.6, 0.8]), label_noise=0.1)
    return dist.sample_dataset(np.random.default_rng(seed), n)


def test_index_sequence_permutation_is_permutation():
    seq = index_sequence(0, SamplingScheme("permutation"), n=3, T=3)
    assert sorted(seq.tolist()) == [0, 1, 2]


def test_index_sequence_deterministic():
    for kind in ("uniform", "permutation"):
        a = index_sequence(42, SamplingScheme(kind), n=7, T=25)
        b = index_sequence(42, SamplingScheme(kind), n=7, T=25)
        assert np.array_equal(a, b)


def test_index_sequence_uniform_frequency():
    # binomial concentration: frequency of index 0 within 0.5 +/- 0.02
    seq = index_sequence(1, SamplingScheme("uniform"), n=2, T=10_000)
    freq = float(np.mean(seq == 0))
    assert abs(freq - 0.5) < 0.02


def test_index_sequence_epoch_multisets():
    T, n = 40, 8
    seq = index_sequence(3, SamplingScheme("permutation"), n=n, T=T)
    for e in range(T // n):
        assert sorted(seq[e * n:(e + 1) * n].tolist()) == list(range(n))


def test_fixed_permutation_repeats():
    seq = index_sequence(5, SamplingScheme("permutation", fixed_permutation=True), n=6, T=18)
    assert np.array_equal(seq[:6], seq[6:12])
    assert np.array_equal(seq[:6], seq[12:18])
    fresh = index_sequence(5, SamplingScheme("permutation"), n=6, T=18)
    assert not np.array_equal(fresh[:6], fresh[6:12])  # per-epoch refresh default


def test_zero_gradient_fixed_point():
    class ZeroLoss(QuadLoss):
        def grad_xy(self, w, x, y):
            return np.zeros_like(w)

    ds = small_cls_dataset()
    cfg = RunConfig(steps=50, schedule=Schedule.constant(0.5), seed=1)
    traj = run_sgm(ZeroLoss(), ds, cfg, w0=[0.3, -0.4])
    assert np.allclose(traj.final.values, [0.3, -0.4])


def test_one_dim_least_squares_hand_recursion():
    # w_{t+1} = w_t + alpha (1 - w_t) on f = (1/2)(w - 1)^2: 0 -> 0.5 -> 0.75
    loss = LeastSquaresLoss(1.0, radius=2.0, label_bound=1.0)
    cfg = RunConfig(steps=2, schedule=Schedule.constant(0.5), seed=2,
                    record_every=1, average=True)
    traj = run_sgm(loss, single_example_dataset(), cfg, w0=[0.0])
    assert [float(w[0]) for w in traj.record_points] == pytest.approx([0.5, 0.75])
    # averaged iterates: mean of (0.5, 0.75)
    assert average_iterates(traj).values[0] == pytest.approx(0.625)


def test_average_requires_flag():
    loss = LeastSquaresLoss(1.0, radius=2.0, label_bound=1.0)
    cfg = RunConfig(steps=2, schedule=Schedule.constant(0.5), seed=2)
    traj = run_sgm(loss, single_example_dataset(), cfg, w0=[0.0])
    with pytest.raises(ContractError):
        average_iterates(traj)


def test_constant_trajectory_average():
    class ZeroLoss(QuadLoss):
        def grad_xy(self, w, x, y):
            return np.zeros_like(w)

    cfg = RunConfig(steps=7, schedule=Schedule.constant(0.1), seed=0, average=True)
    traj = run_sgm(ZeroLoss(), small_cls_dataset(), cfg, w0=[1.0, 2.0])
    assert np.allclose(average_iterates(traj).values, [1.0, 2.0])


def test_projection_invariant():
    # large steps on a linear pull: every iterate stays in the ball
    class PullLoss(QuadLoss):
        def grad_xy(self, w, x, y):
            return -x

    cfg = RunConfig(steps=100, schedule=Schedule.constant(5.0), seed=3,
                    projection_radius=1.0, record_every=1)
    traj = run_sgm(PullLoss(), small_cls_dataset(), cfg, w0=[0.0, 0.0])
    for w in traj.record_points:
        assert np.linalg.norm(w) <= 1.0 + 1e-12
    assert traj.final.norm() <= 1.0 + 1e-12


def test_bit_determinism():
    loss = LogisticLoss(1.0, radius=3.0)
    ds = small_cls_dataset(n=12, seed=4)
    cfg = RunConfig(steps=300, schedule=Schedule.inverse_t(0.5), seed=9,
                    dropout_rate=0.5, record_every=10)
    t1 = run_sgm(loss, ds, cfg, w0=[0.1, -0.1])
    t2 = run_sgm(loss, ds, cfg, w0=[0.1, -0.1])
    assert np.array_equal(t1.indices, t2.indices)
    assert all(np.array_equal(a, b) for a, b in zip(t1.record_points, t2.record_points))
    assert t1.final == t2.final


def test_indices_independent_of_dataset_contents():
    # the neighbor dataset consumes the identical index sequence
    loss = LogisticLoss(1.0, radius=3.0)
    ds = small_cls_dataset(n=12, seed=5)
    pair = make_neighbor(ds, 3, Example([0.2, -0.1], -1.0))
    cfg = RunConfig(steps=120, schedule=Schedule.constant(0.05), seed=11)
    t1 = run_sgm(loss, ds, cfg, w0=[0.0, 0.0])
    t2 = run_sgm(loss, pair.variant, cfg, w0=[0.0, 0.0])
    assert np.array_equal(t1.indices, t2.indices)


def test_dropout_masks_shared_across_contents():
    # with dropout active, runs on S and S' stay identical until the hit step
    loss = LogisticLoss(1.0, radius=3.0)
    ds = small_cls_dataset(n=12, seed=6)
    pair = make_neighbor(ds, 7, Example([0.2, -0.1], -1.0))
    cfg = RunConfig(steps=60, schedule=Schedule.constant(0.05), seed=13,
                    dropout_rate=0.5, record_every=1)
    t1 = run_sgm(loss, ds, cfg, w0=[0.0, 0.0])
    t2 = run_sgm(loss, pair.variant, cfg, w0=[0.0, 0.0])
    first_hit = int(np.nonzero(t1.indices == 7)[0][0]) + 1
    for step, w1, w2 in zip(t1.record_steps, t1.record_points, t2.record_points):
        if step < first_hit:
            assert np.array_equal(w1, w2)


def test_divergence_aborts_with_step_index():
    # alpha = 3 on (1/2)(w-1)^2 gives |w_t - 1| = 2^t: overflows, run aborts
    loss = LeastSquaresLoss(1.0, radius=1e9, label_bound=1.0)
    cfg = RunConfig(steps=5000, schedule=Schedule.constant(3.0), seed=1)
    traj = run_sgm(loss, single_example_dataset(), cfg, w0=[0.0])
    assert traj.diverged
    assert traj.final is None
    assert 0 < traj.diverged_at <= 5000


def test_contraction_toward_minimizer_on_identical_examples():
    # dataset of identical examples: every stochastic step is the full
    # gradient, so with alpha <= 1/beta the distance to the minimizer is
    # non-increasing (the Lemma 3.7.3 regime)
    loss = LeastSquaresLoss(1.0, ridge=0.2, radius=3.0, label_bound=1.0)
    beta = loss.constants_at(3.0).smoothness
    ds = single_example_dataset(1.0, 1.0)
    w_star = loss.exact_empirical_minimizer(ds)
    cfg = RunConfig(steps=60, schedule=Schedule.constant(1.0 / beta), seed=2,
                    projection_radius=3.0, record_every=1)
    traj = run_sgm(loss, ds, cfg, w0=[-2.5])
    dists = [abs(float(w[0] - w_star[0])) for w in traj.record_points]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(dists, dists[1:]))


def test_streams_independent():
    # adding dropout must not perturb the index stream
    idx1, _, _ = derive_streams(77)
    seq_plain = index_sequence(idx1, SamplingScheme("uniform"), 10, 50)
    loss = LogisticLoss(1.0, radius=3.0)
    ds = small_cls_dataset(n=10, seed=7)
    cfg = RunConfig(steps=50, schedule=Schedule.constant(0.05), seed=77, dropout_rate=0.5)
    traj = run_sgm(loss, ds, cfg, w0=[0.0, 0.0])
    assert np.array_equal(traj.indices, seq_plain)


def test_initial_point_modes():
    cfg0 = RunConfig(steps=1, schedule=Schedule.constant(0.1), seed=5, init="zeros")
    assert np.array_equal(initial_point(cfg0, 4), np.zeros(4))
    cfg1 = RunConfig(steps=1, schedule=Schedule.constant(0.1), seed=5, init="gauss")
    a = initial_point(cfg1, 4)
    b = initial_point(cfg1, 4)
    assert np.array_equal(a, b)
    assert np.any(a != 0)


def test_trajectory_csv(tmp_path):
    loss = LogisticLoss(1.0, radius=3.0)
    ds = small_cls_dataset(n=8, seed=8)
    cfg = RunConfig(steps=20, schedule=Schedule.constant(0.05), seed=3, record_every=5)
    traj = run_sgm(loss, ds, cfg, w0=[0.0, 0.0])
    path = tmp_path / "traj.csv"
    probe = ds.feature_matrix, ds.labels
    trajectory_to_csv(traj, path, loss=loss, probe=probe)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,alpha_t,i_t,delta_recorded,w_norm,loss_on_probe_mean"
    assert len(lines) == 1 + len(traj.record_steps)


def test_run_config_validation():
    with pytest.raises(ContractError):
        RunConfig(steps=0, schedule=Schedule.constant(0.1))
    with pytest.raises(ContractError):
        RunConfig(steps=1, schedule=Schedule.constant(0.1), dropout_rate=1.5)
    with pytest.raises(ContractError):
        RunConfig(steps=1, schedule=Schedule.constant(0.1), init="ones")
