"""Paired-run protocol and empirical estimators of stability quantities.

A paired run trains on S and on its neighbor S' with the same coupled
randomness (identical index and mask streams) and tracks the parameter
divergence delta_t = ||w_t - w_t'||, the hit time (first step touching the
substituted example), and the loss deviation over a finite probe set.

The probe max is a lower bound on the sup over z, and averaging over trials
is a proxy for the expectation over the algorithm; both approximations are
one-sided, so "empirical <= bound" stays a valid check of every upper bound.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    ContractError,
    DataDistribution,
    Dataset,
    LossFunction,
    NeighborPair,
    as_param_array,
)
from .engine import RunConfig, SamplingScheme, derive_streams, index_sequence, initial_point
from .rules import apply_dropout_mask


@dataclass
class PairedTrace:
    """Divergence record of one paired training."""

    record_steps: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    hit_time: Optional[int] = None
    i_star: int = -1
    indices: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None
    probe_deviation: float = 0.0
    final_delta: float = 0.0
    block_names: Optional[tuple] = None
    block_deltas: Optional[list] = None
    diverged_at: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


@dataclass(frozen=True)
class StabilityEstimate:
    """Trial-averaged probe-max loss deviation (the uniform-stability estimator)."""

    mean: float
    stderr: float
    trials: int
    probe_size: int
    mean_delta: float
    excluded: int = 0

    def to_json_dict(self, config_digest: str = "") -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "trials": self.trials,
            "probe_size": self.probe_size,
            "mean_delta": self.mean_delta,
            "excluded": self.excluded,
            "config_digest": config_digest,
        }


@dataclass(frozen=True)
class GapEstimate:
    """Mean of R_S[w] - R[w] over fresh-sample trials (signed; negate for test-minus-train)."""

    mean: float
    stderr: float
    trials: int
    zero_one_mean: Optional[float] = None
    zero_one_stderr: Optional[float] = None
    excluded: int = 0

    def to_json_dict(self, config_digest: str = "") -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "trials": self.trials,
            "zero_one_mean": self.zero_one_mean,
            "zero_one_stderr": self.zero_one_stderr,
            "excluded": self.excluded,
            "config_digest": config_digest,
        }


def default_probe(
    dist: DataDistribution, rng: np.random.Generator, probe_size: int,
    pair: Optional[NeighborPair] = None,
):
    """Probe set for the sup over z: fresh draws plus both substitution variants."""
    X, y = dist.sample_arrays(rng, probe_size)
    if pair is not None:
        z_old = pair.base[pair.index]
        z_new = pair.replacement
        X = np.vstack([X, z_old.features[None, :], z_new.features[None, :]])
        y = np.concatenate([y, [z_old.label], [z_new.label]])
    return X, y


def run_paired(
    loss: LossFunction,
    pair: NeighborPair,
    config: RunConfig,
    w0=None,
    probe=None,
    indices: Optional[np.ndarray] = None,
) -> PairedTrace:
    """Train on S and S' in lockstep with shared index and mask streams.

    delta is recorded every `stride` steps, at every step that touches the
    substituted index (so the burn-in boundary is always captured), and at T.
    The per-step arithmetic mirrors engine.run_sgm exactly.
    """
    S, Sp = pair.base, pair.variant
    i_star = pair.index
    T, n = config.steps, S.n
    idx_ss, drop_ss, init_ss = derive_streams(config.seed)
    if indices is None:
        indices = index_sequence(idx_ss, config.scheme, n, T)
    elif len(indices) != T:
        raise ContractError("index override must have length T")
    alphas = config.schedule.alphas(T)
    d = loss.param_dim(S.dim)
    w = initial_point(config, d, init_ss) if w0 is None else as_param_array(w0).copy()
    wp = w.copy()

    X, Y = S.feature_matrix, S.labels
    Xp, Yp = Sp.feature_matrix, Sp.labels
    drop = config.dropout_rate > 0
    drop_rng = np.random.default_rng(drop_ss) if drop else None
    keep = config.dropout_keep if config.dropout_keep is not None else config.dropout_rate
    wd, clip, proj = config.weight_decay, config.clip, config.projection_radius
    stride = config.stride

    blocks = loss.param_blocks
    trace = PairedTrace(i_star=i_star, indices=indices, alphas=alphas)
    if blocks is not None:
        trace.block_names = tuple(name for name, _ in blocks)
        trace.block_deltas = []

    def record(step: int, delta: float):
        trace.record_steps.append(step)
        trace.deltas.append(delta)
        if blocks is not None:
            trace.block_deltas.append(
                [float(np.linalg.norm(w[sl] - wp[sl])) for _, sl in blocks]
            )

    record(0, 0.0)
    proj2 = proj * proj
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected, not raised
        for t in range(T):
            i = indices[t]
            a = alphas[t]
            hit = i == i_star
            if hit and trace.hit_time is None:
                trace.hit_time = t + 1
            g = loss.grad_xy(w, X[i], Y[i])
            gp = loss.grad_xy(wp, Xp[i], Yp[i])
            if drop:
                mask = drop_rng.uniform(size=d) < keep
                g = apply_dropout_mask(g, config.dropout_rate, keep, config.dropout_mode, mask)
                gp = apply_dropout_mask(gp, config.dropout_rate, keep, config.dropout_mode, mask)
            if clip > 0:
                nrm = math.sqrt(float(g @ g))
                if nrm > clip:
                    g = g * (clip / nrm)
                nrm = math.sqrt(float(gp @ gp))
                if nrm > clip:
                    gp = gp * (clip / nrm)
            if wd > 0:
                w = (1.0 - a * wd) * w - a * g
                wp = (1.0 - a * wd) * wp - a * gp
            else:
                w = w - a * g
                wp = wp - a * gp
            if proj > 0:
                nrm2 = float(w @ w)
                if nrm2 > proj2:
                    w = w * (proj / math.sqrt(nrm2))
                nrm2 = float(wp @ wp)
                if nrm2 > proj2:
                    wp = wp * (proj / math.sqrt(nrm2))
            dvec = w - wp
            delta = math.sqrt(float(dvec @ dvec))
            if not math.isfinite(delta):
                trace.diverged_at = t + 1
                break
            if hit or (t + 1) % stride == 0 or t + 1 == T:
                record(t + 1, delta)

    trace.final_delta = trace.deltas[-1]
    if not trace.diverged and probe is not None:
        pX, py = probe
        dev = np.abs(loss.batch_value_xy(w, pX, py) - loss.batch_value_xy(wp, pX, py))
        trace.probe_deviation = float(np.max(dev))
    return trace


# ---------------------------------------------------------------------------
# trial workers (module level so the process pool can pickle them)


def _stability_trial(payload):
    loss, dist, n, config, probe_size, data_ss, run_seed = payload
    rng = np.random.default_rng(data_ss)
    S = dist.sample_dataset(rng, n)
    i_star = int(rng.integers(n))
    z_new = dist.draw(rng)
    pair = NeighborPair(S, i_star, z_new)
    probe = default_probe(dist, rng, probe_size, pair)
    trace = run_paired(loss, pair, replace(config, seed=run_seed), probe=probe)
    if trace.diverged:
        return None
    return trace.probe_deviation, trace.final_delta


def _gap_trial(payload):
    from .core import empirical_risk, population_risk_estimate
    from .engine import run_sgm

    loss, dist, n, config, pop_samples, data_ss, run_seed, pop_seed = payload
    rng = np.random.default_rng(data_ss)
    S = dist.sample_dataset(rng, n)
    traj = run_sgm(loss, S, replace(config, seed=run_seed))
    if traj.diverged:
        return None
    w = traj.final.values
    train = empirical_risk(loss, w, S)
    pop = population_risk_estimate(loss, w, dist, m=pop_samples, seed=pop_seed).mean
    gap = train - pop
    gap01 = None
    if hasattr(loss, "zero_one_batch"):
        train01 = float(np.mean(loss.zero_one_batch(w, S.feature_matrix, S.labels)))
        support = dist.finite_support
        if support is not None:
            atoms, probs = support
            aX = np.asarray([z.features for z in atoms])
            ay = np.asarray([z.label for z in atoms])
            pop01 = float(np.dot(probs, loss.zero_one_batch(w, aX, ay)))
        else:
            pX, py = dist.sample_arrays(np.random.default_rng(pop_seed), pop_samples)
            pop01 = float(np.mean(loss.zero_one_batch(w, pX, py)))
        gap01 = train01 - pop01
    return gap, gap01


def _pool_map(fn, payloads):
    """Ordered map over trials; STAB_WORKERS > 1 fans out to a process pool."""
    workers = int(os.environ.get("STAB_WORKERS", "1"))
    if workers <= 1 or len(payloads) < 2:
        return [fn(p) for p in payloads]
    with multiprocessing.get_context("spawn").Pool(workers) as pool:
        return pool.map(fn, payloads)


def _mean_stderr(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    stderr = float(np.std(arr, ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.inf
    return float(np.mean(arr)), stderr


def stability_samples(
    loss: LossFunction,
    dist: DataDistribution,
    n: int,
    config: RunConfig,
    trials: int,
    probe_size: int,
    seed: int,
) -> tuple:
    """Per-trial (probe deviation, final delta) pairs; diverged trials are dropped.

    Per trial: fresh S ~ D^n, uniform substitution position, fresh replacement,
    coupled paired run.
    """
    root = np.random.SeedSequence(seed)
    payloads = []
    for child in root.spawn(trials):
        data_ss, run_ss = child.spawn(2)
        payloads.append((loss, dist, n, config, probe_size, data_ss,
                         int(run_ss.generate_state(1)[0])))
    results = _pool_map(_stability_trial, payloads)
    kept = [r for r in results if r is not None]
    devs = [r[0] for r in kept]
    deltas = [r[1] for r in kept]
    return devs, deltas, trials - len(kept)


def estimate_stability(
    loss: LossFunction,
    dist: DataDistribution,
    n: int,
    config: RunConfig,
    trials: int = 100,
    probe_size: int = 256,
    seed: int = 0,
) -> StabilityEstimate:
    """Monte Carlo estimate of the uniform-stability constant.

    The trial average of the probe-max loss deviation; both the probe max and
    the trial average under-approximate the sup/expectation in the definition,
    so the estimate is a lower bound on the true constant.
    """
    if trials < 30:
        raise ContractError("need at least 30 trials")
    devs, deltas, excluded = stability_samples(
        loss, dist, n, config, trials, probe_size, seed
    )
    mean, stderr = _mean_stderr(devs)
    return StabilityEstimate(
        mean=mean,
        stderr=stderr,
        trials=len(devs),
        probe_size=probe_size,
        mean_delta=float(np.mean(deltas)) if deltas else math.nan,
        excluded=excluded,
    )


def gap_samples(
    loss: LossFunction,
    dist: DataDistribution,
    n: int,
    config: RunConfig,
    trials: int,
    seed: int,
    population_samples: int = 4096,
) -> tuple:
    """Per-trial (loss gap, 0/1 gap or None) pairs; diverged trials are dropped."""
    root = np.random.SeedSequence(seed)
    payloads = []
    for child in root.spawn(trials):
        data_ss, run_ss, pop_ss = child.spawn(3)
        payloads.append((loss, dist, n, config, population_samples, data_ss,
                         int(run_ss.generate_state(1)[0]),
                         int(pop_ss.generate_state(1)[0])))
    results = _pool_map(_gap_trial, payloads)
    kept = [r for r in results if r is not None]
    gaps = [r[0] for r in kept]
    gaps01 = [r[1] for r in kept]
    return gaps, gaps01, trials - len(kept)


def estimate_generalization_gap(
    loss: LossFunction,
    dist: DataDistribution,
    n: int,
    config: RunConfig,
    trials: int = 100,
    seed: int = 0,
    population_samples: int = 4096,
) -> GapEstimate:
    """Mean of R_S[w_T] - R[w_T] over fresh-sample trials.

    The population term is exact whenever the distribution has finite support.
    For classification losses the 0/1-error gap is reported alongside.
    """
    if trials < 2:
        raise ContractError("need at least 2 trials")
    gaps, gaps01, excluded = gap_samples(
        loss, dist, n, config, trials, seed, population_samples
    )
    mean, stderr = _mean_stderr(gaps)
    gaps01 = [g for g in gaps01 if g is not None]
    mean01, stderr01 = _mean_stderr(gaps01) if gaps01 else (None, None)
    return GapEstimate(
        mean=mean,
        stderr=stderr,
        trials=len(gaps),
        zero_one_mean=mean01,
        zero_one_stderr=stderr01,
        excluded=excluded,
    )


def hit_time_distribution(
    scheme: SamplingScheme,
    n: int,
    T: int,
    trials: int = 10_000,
    seed: int = 0,
) -> np.ndarray:
    """Empirical P(I <= t0) for t0 = 0..n, I the first step using the substituted index."""
    if trials < 10_000:
        raise ContractError("need at least 10^4 trials")
    root = np.random.SeedSequence(seed)
    istar_rng = np.random.default_rng(root.spawn(1)[0])
    hit_counts = np.zeros(n + 1, dtype=np.int64)
    for child in root.spawn(trials + 1)[1:]:
        indices = index_sequence(child, scheme, n, T)
        i_star = int(istar_rng.integers(n))
        hits = np.nonzero(indices == i_star)[0]
        if hits.size:
            first = hits[0] + 1  # 1-based
            if first <= n:
                hit_counts[first] += 1
    return np.cumsum(hit_counts) / trials


def early_vs_late_substitution(
    loss: LossFunction,
    pair: NeighborPair,
    config: RunConfig,
    w0=None,
    probe=None,
) -> tuple:
    """Two paired traces forcing the substituted example to epoch position 1 vs n."""
    if config.scheme.kind != "permutation":
        raise ContractError("early-vs-late substitution requires the permutation scheme")
    n = pair.base.n
    if config.steps < n:
        raise ContractError("need at least one full epoch")
    idx_ss = derive_streams(config.seed)[0]
    base = index_sequence(idx_ss, config.scheme, n, config.steps)
    pos = int(np.nonzero(base[:n] == pair.index)[0][0])
    early = base.copy()
    early[0], early[pos] = early[pos], early[0]
    late = base.copy()
    late[n - 1], late[pos] = late[pos], late[n - 1]
    trace_early = run_paired(loss, pair, config, w0=w0, probe=probe, indices=early)
    trace_late = run_paired(loss, pair, config, w0=w0, probe=probe, indices=late)
    return trace_early, trace_late


def paired_trace_to_csv(trace: PairedTrace, path) -> None:
    """Columns: t, delta, is_hit_step, alpha_t."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "delta", "is_hit_step", "alpha_t"])
        for t, delta in zip(trace.record_steps, trace.deltas):
            is_hit = int(t > 0 and trace.indices is not None
                         and trace.indices[t - 1] == trace.i_star)
            alpha = repr(float(trace.alphas[t - 1])) if t > 0 else ""
            writer.writerow([t, repr(delta), is_hit, alpha])
