"""SGM training loop: index sampling, step composition, trajectory recording.

One root seed derives three independent streams (index choices, dropout
masks, initialization) so turning a knob on never perturbs the others, and
index/mask consumption is independent of dataset contents -- the coupling the
paired-run protocol depends on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import ContractError, Dataset, LossFunction, ParamVector, as_param_array
from .rules import Schedule, apply_dropout_mask


@dataclass(frozen=True)
class SamplingScheme:
    """uniform: i.i.d. uniform index per step; permutation: cycle per-epoch shuffles."""

    kind: str = "uniform"
    fixed_permutation: bool = False

    def __post_init__(self):
        if self.kind not in ("uniform", "permutation"):
            raise ContractError(f"unknown sampling scheme {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    steps: int
    schedule: Schedule
    scheme: SamplingScheme = SamplingScheme()
    seed: int = 0
    weight_decay: float = 0.0
    dropout_rate: float = 0.0
    dropout_keep: Optional[float] = None
    dropout_mode: str = "norm_exact"
    clip: float = 0.0
    projection_radius: float = 0.0
    record_every: int = 0  # 0 = auto: max(1, steps // 1000)
    average: bool = False
    init: str = "zeros"
    init_scale: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.record_every < 0:
            raise ContractError("record_every must be >= 0")
        if self.weight_decay < 0 or self.clip < 0 or self.projection_radius < 0:
            raise ContractError("rule options must be nonnegative")
        if self.dropout_rate and not 0 < self.dropout_rate <= 1:
            raise ContractError("dropout rate must lie in (0, 1]")
        if self.dropout_keep is not None and not 0 < self.dropout_keep <= 1:
            raise ContractError("dropout keep probability must lie in (0, 1]")
        if self.init not in ("zeros", "gauss"):
            raise ContractError("init must be 'zeros' or 'gauss'")

    @property
    def stride(self) -> int:
        return self.record_every if self.record_every else max(1, self.steps // 1000)


@dataclass
class Trajectory:
    """Record of one SGM run: thinned iterates plus exact final/averaged points."""

    indices: np.ndarray
    alphas: np.ndarray
    record_steps: list = field(default_factory=list)
    record_points: list = field(default_factory=list)
    final: Optional[ParamVector] = None
    averaged: Optional[ParamVector] = None
    diverged_at: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def derive_streams(seed: int):
    """(index, dropout, init) child seeds of the root seed."""
    return np.random.SeedSequence(seed).spawn(3)


def index_sequence(
    seed: Union[int, np.random.SeedSequence],
    scheme: SamplingScheme,
    n: int,
    T: int,
) -> np.ndarray:
    """The i_t sequence: a function of (seed, scheme, n, T) only, never of data values."""
    if n < 2:
        raise ContractError("need n >= 2")
    if T < 1:
        raise ContractError("need T >= 1")
    rng = np.random.default_rng(seed)
    if scheme.kind == "uniform":
        return rng.integers(0, n, size=T)
    epochs = (T + n - 1) // n
    if scheme.fixed_permutation:
        perm = rng.permutation(n)
        out = np.tile(perm, epochs)
    else:
        out = np.concatenate([rng.permutation(n) for _ in range(epochs)])
    return out[:T]


def initial_point(config: RunConfig, dim: int, init_ss=None) -> np.ndarray:
    if config.init == "zeros":
        return np.zeros(dim)
    if init_ss is None:
        init_ss = derive_streams(config.seed)[2]
    rng = np.random.default_rng(init_ss)
    return config.init_scale * rng.standard_normal(dim)


def run_sgm(
    loss: LossFunction,
    dataset: Dataset,
    config: RunConfig,
    w0=None,
    indices: Optional[np.ndarray] = None,
) -> Trajectory:
    """Iterate w_{t+1} = step(w_t, z_{i_t}, alpha_t) for T steps, bit-deterministically.

    The per-step composition is gradient -> optional dropout -> optional clip
    -> decayed step -> optional projection. A non-finite iterate aborts the
    run with `diverged_at` set to the offending step.
    """
    T, n = config.steps, dataset.n
    idx_ss, drop_ss, init_ss = derive_streams(config.seed)
    if indices is None:
        indices = index_sequence(idx_ss, config.scheme, n, T)
    elif len(indices) != T:
        raise ContractError("index override must have length T")
    alphas = config.schedule.alphas(T)
    d = loss.param_dim(dataset.dim)
    w = initial_point(config, d, init_ss) if w0 is None else as_param_array(w0).copy()
    if w.shape[0] != d:
        raise ContractError(f"w0 dimension {w.shape[0]}, loss expects {d}")

    X, Y = dataset.feature_matrix, dataset.labels
    drop = config.dropout_rate > 0
    drop_rng = np.random.default_rng(drop_ss) if drop else None
    keep = config.dropout_keep if config.dropout_keep is not None else config.dropout_rate
    wd, clip, proj = config.weight_decay, config.clip, config.projection_radius
    stride = config.stride
    avg = np.zeros(d) if config.average else None

    traj = Trajectory(indices=indices, alphas=alphas)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected, not raised
        for t in range(T):
            i = indices[t]
            a = alphas[t]
            g = loss.grad_xy(w, X[i], Y[i])
            if drop:
                mask = drop_rng.uniform(size=d) < keep
                g = apply_dropout_mask(g, config.dropout_rate, keep, config.dropout_mode, mask)
            if clip > 0:
                nrm = math.sqrt(float(g @ g))
                if nrm > clip:
                    g = g * (clip / nrm)
            if wd > 0:
                w = (1.0 - a * wd) * w - a * g
            else:
                w = w - a * g
            if proj > 0:
                nrm2 = float(w @ w)
                if nrm2 > proj * proj:
                    w = w * (proj / math.sqrt(nrm2))
            if not np.all(np.isfinite(w)):
                traj.diverged_at = t + 1
                break
            if avg is not None:
                avg += w
            if (t + 1) % stride == 0 or t + 1 == T:
                traj.record_steps.append(t + 1)
                traj.record_points.append(w.copy())

    if not traj.diverged:
        traj.final = ParamVector(w)
        if avg is not None:
            traj.averaged = ParamVector(avg / T)
    return traj


def average_iterates(trajectory: Trajectory) -> ParamVector:
    """Exact streaming mean of w_1..w_T, available when averaging was enabled."""
    if trajectory.averaged is None:
        raise ContractError("averaging was not enabled for this run")
    return trajectory.averaged


def trajectory_to_csv(
    trajectory: Trajectory,
    path,
    loss: Optional[LossFunction] = None,
    probe=None,
    deltas: Optional[dict] = None,
) -> None:
    """Columns: t, alpha_t, i_t, delta_recorded, w_norm, loss_on_probe_mean."""
    probe_X = probe_y = None
    if probe is not None and loss is not None:
        probe_X, probe_y = probe
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha_t", "i_t", "delta_recorded", "w_norm", "loss_on_probe_mean"])
        for t, w in zip(trajectory.record_steps, trajectory.record_points):
            delta = "" if deltas is None or t not in deltas else repr(deltas[t])
            probe_mean = ""
            if probe_X is not None:
                probe_mean = repr(float(np.mean(loss.batch_value_xy(w, probe_X, probe_y))))
            writer.writerow(
                [t, repr(float(trajectory.alphas[t - 1])), int(trajectory.indices[t - 1]),
                 delta, repr(float(np.linalg.norm(w))), probe_mean]
            )
