"""Domain types for parameters, examples, datasets and losses, plus basic risk functionals.

Everything here is immutable after construction and safe to share across
workers; operations are pure functions of their inputs.
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

CONVEXITY_CLASSES = ("nonconvex", "convex", "strongly_convex")


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class CertificationError(RuntimeError):
    """Analytic regularity constants were requested for a loss that cannot certify them."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be a 1-d real sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


class ParamVector:
    """A point w in R^d: finite entries, fixed dimension, read-only storage."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = _as_float_vector(values, "parameter vector").copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, key, value):
        raise AttributeError("ParamVector is immutable")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"ParamVector({np.array2string(self.values, threshold=6)})"


def as_param_array(w) -> np.ndarray:
    """Accept a ParamVector or any 1-d array-like; return a float64 ndarray."""
    if isinstance(w, ParamVector):
        return w.values
    return _as_float_vector(w, "parameter vector")


class Example:
    """One example z = (features, label)."""

    __slots__ = ("features", "label")

    def __init__(self, features, label: float):
        feats = _as_float_vector(features, "features").copy()
        feats.setflags(write=False)
        if not math.isfinite(float(label)):
            raise ContractError("label must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", float(label))

    def __setattr__(self, key, value):
        raise AttributeError("Example is immutable")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Example):
            return NotImplemented
        return self.label == other.label and bool(np.array_equal(self.features, other.features))

    def __hash__(self):
        return hash((self.features.tobytes(), self.label))

    def __repr__(self) -> str:
        return f"Example({np.array2string(self.features, threshold=4)}, y={self.label})"


class Dataset:
    """An ordered sample S = (z_1, ..., z_n), n >= 2, with a declared feature-norm bound."""

    __slots__ = ("examples", "bound", "feature_matrix", "labels")

    def __init__(self, examples: Sequence[Example], bound: float):
        examples = tuple(examples)
        if len(examples) < 2:
            raise ContractError("a dataset needs at least 2 examples")
        if bound <= 0:
            raise ContractError("feature bound must be positive")
        dim = examples[0].dim
        for i, z in enumerate(examples):
            if z.dim != dim:
                raise ContractError(f"example {i} has dimension {z.dim}, expected {dim}")
            nrm = float(np.linalg.norm(z.features))
            if nrm > bound * (1 + 1e-12):
                raise ContractError(f"example {i} feature norm {nrm} exceeds bound {bound}")
        X = np.ascontiguousarray([z.features for z in examples], dtype=np.float64)
        y = np.ascontiguousarray([z.label for z in examples], dtype=np.float64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "examples", examples)
        object.__setattr__(self, "bound", float(bound))
        object.__setattr__(self, "feature_matrix", X)
        object.__setattr__(self, "labels", y)

    def __setattr__(self, key, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_arrays(cls, X, y, bound: float) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return cls([Example(X[i], y[i]) for i in range(X.shape[0])], bound)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def n(self) -> int:
        return len(self.examples)

    @property
    def dim(self) -> int:
        return self.examples[0].dim

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.bound == other.bound
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.examples, other.examples))
        )

    def __hash__(self):
        return hash((self.bound, self.feature_matrix.tobytes(), self.labels.tobytes()))


class NeighborPair:
    """A dataset S together with the single-position substitution defining its neighbor S'."""

    __slots__ = ("base", "index", "replacement", "_variant")

    def __init__(self, base: Dataset, index: int, replacement: Example):
        if not 0 <= index < base.n:
            raise ContractError(f"substitution index {index} out of range [0, {base.n})")
        if replacement.dim != base.dim:
            raise ContractError("replacement example dimension mismatch")
        nrm = float(np.linalg.norm(replacement.features))
        if nrm > base.bound * (1 + 1e-12):
            raise ContractError(f"replacement feature norm {nrm} exceeds bound {base.bound}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "index", int(index))
        object.__setattr__(self, "replacement", replacement)
        object.__setattr__(self, "_variant", None)

    def __setattr__(self, key, value):
        raise AttributeError("NeighborPair is immutable")

    @property
    def variant(self) -> Dataset:
        """S': equal to S everywhere except at `index`. Examples are shared by reference."""
        if self._variant is None:
            examples = list(self.base.examples)
            examples[self.index] = self.replacement
            object.__setattr__(self, "_variant", Dataset(examples, self.base.bound))
        return self._variant


def make_neighbor(dataset: Dataset, index: int, replacement: Example) -> NeighborPair:
    """Pair S with the neighbor obtained by substituting `replacement` at `index`."""
    return NeighborPair(dataset, index, replacement)


@dataclass(frozen=True)
class RegularityConstants:
    """Certified (or estimated) regularity constants of a loss on a parameter ball.

    lipschitz L bounds the gradient norm, smoothness beta the gradient's
    Lipschitz constant, strong_convexity gamma the curvature floor,
    range_bound rho the supremum of the loss value, all over the ball of
    radius domain_radius (math.inf means global).
    """

    lipschitz: float
    smoothness: float
    strong_convexity: float = 0.0
    range_bound: float = math.inf
    domain_radius: float = math.inf
    certified: bool = True

    def __post_init__(self):
        if self.lipschitz <= 0 or self.smoothness <= 0:
            raise ContractError("lipschitz and smoothness constants must be positive")
        if self.strong_convexity < 0 or self.range_bound < 0:
            raise ContractError("strong_convexity and range_bound must be nonnegative")
        if self.strong_convexity > self.smoothness * (1 + 1e-12):
            raise ContractError("strong convexity cannot exceed smoothness")
        if self.domain_radius <= 0:
            raise ContractError("domain radius must be positive")


class LossFunction(ABC):
    """Interface for a per-example loss f(w; z) with analytic gradient.

    Subclasses implement the array fast path (value_xy / grad_xy /
    batch_value_xy); the Example-based methods delegate to it. The SGM
    engine and the falsifiers only ever touch the fast path.
    """

    convexity_class: str = "nonconvex"
    #: named (block, slice) pairs when parameters have layered structure
    param_blocks: Optional[tuple] = None

    @abstractmethod
    def value_xy(self, w: np.ndarray, x: np.ndarray, y: float) -> float: ...

    @abstractmethod
    def grad_xy(self, w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray: ...

    def batch_value_xy(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.array([self.value_xy(w, X[i], y[i]) for i in range(X.shape[0])])

    def value(self, w, z: Example) -> float:
        return self.value_xy(as_param_array(w), z.features, z.label)

    def gradient(self, w, z: Example) -> ParamVector:
        return ParamVector(self.grad_xy(as_param_array(w), z.features, z.label))

    def param_dim(self, feature_dim: int) -> int:
        """Dimension of the parameter vector for `feature_dim` input features."""
        return feature_dim

    @abstractmethod
    def constants_at(self, radius: float) -> RegularityConstants: ...

    def constants(self) -> RegularityConstants:
        return self.constants_at(getattr(self, "radius", math.inf))


class DataDistribution(ABC):
    """A seeded source of examples; optionally carries an explicit finite support."""

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    @abstractmethod
    def bound(self) -> float: ...

    @abstractmethod
    def sample_arrays(self, rng: np.random.Generator, k: int) -> tuple:
        """Draw k examples; returns (X, y) with X of shape (k, dim)."""

    def draw(self, rng: np.random.Generator) -> Example:
        X, y = self.sample_arrays(rng, 1)
        return Example(X[0], y[0])

    def sample(self, rng: np.random.Generator, k: int) -> list:
        X, y = self.sample_arrays(rng, k)
        return [Example(X[i], y[i]) for i in range(k)]

    def sample_dataset(self, rng: np.random.Generator, n: int) -> Dataset:
        X, y = self.sample_arrays(rng, n)
        return Dataset.from_arrays(X, y, self.bound)

    @property
    def finite_support(self) -> Optional[tuple]:
        """(atoms, probabilities) when the distribution is an explicit finite mixture."""
        return None


class FiniteSupportDistribution(DataDistribution):
    """Discrete distribution over explicit atoms; enables exact expectations."""

    def __init__(self, atoms: Sequence[Example], probabilities, bound: float):
        atoms = tuple(atoms)
        probs = np.asarray(probabilities, dtype=np.float64)
        if len(atoms) == 0 or probs.shape != (len(atoms),):
            raise ContractError("need one probability per atom")
        if np.any(probs < 0):
            raise ContractError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ContractError(f"probabilities sum to {probs.sum()}, not 1")
        dim = atoms[0].dim
        for z in atoms:
            if z.dim != dim:
                raise ContractError("atoms must share dimension")
            if float(np.linalg.norm(z.features)) > bound * (1 + 1e-12):
                raise ContractError("atom feature norm exceeds bound")
        probs.setflags(write=False)
        self.atoms = atoms
        self.probabilities = probs
        self._dim = dim
        self._bound = float(bound)
        self._X = np.ascontiguousarray([z.features for z in atoms])
        self._y = np.ascontiguousarray([z.label for z in atoms])

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def bound(self) -> float:
        return self._bound

    def sample_arrays(self, rng: np.random.Generator, k: int):
        idx = rng.choice(len(self.atoms), size=k, p=self.probabilities)
        return self._X[idx], self._y[idx]

    @property
    def finite_support(self):
        return self.atoms, self.probabilities

    def exact_expectation(self, loss: LossFunction, w) -> float:
        vals = loss.batch_value_xy(as_param_array(w), self._X, self._y)
        return float(np.dot(self.probabilities, vals))


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo (or exact) scalar estimate with its standard error."""

    mean: float
    stderr: float
    samples: int

    def __iter__(self):
        return iter((self.mean, self.stderr))


def empirical_risk(loss: LossFunction, w, dataset: Dataset) -> float:
    """Mean of f(w; z_i) over the dataset."""
    warr = as_param_array(w)
    expected = loss.param_dim(dataset.dim)
    if warr.shape[0] != expected:
        raise ContractError(f"parameter dimension {warr.shape[0]}, loss expects {expected}")
    vals = loss.batch_value_xy(warr, dataset.feature_matrix, dataset.labels)
    return float(np.mean(vals))


def population_risk_estimate(
    loss: LossFunction,
    w,
    dist: DataDistribution,
    m: int = 1000,
    seed: int = 0,
) -> Estimate:
    """E_z f(w; z): exact on finite support, otherwise a Monte Carlo mean over m draws."""
    if m < 1:
        raise ContractError("need at least one sample")
    warr = as_param_array(w)
    support = dist.finite_support
    if support is not None:
        atoms, probs = support
        X = np.asarray([z.features for z in atoms])
        y = np.asarray([z.label for z in atoms])
        vals = loss.batch_value_xy(warr, X, y)
        return Estimate(float(np.dot(probs, vals)), 0.0, len(atoms))
    rng = np.random.default_rng(seed)
    X, y = dist.sample_arrays(rng, m)
    vals = loss.batch_value_xy(warr, X, y)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(m)) if m > 1 else math.inf
    return Estimate(float(np.mean(vals)), stderr, m)


def finite_diff_gradient_check(
    loss: LossFunction, w, z: Example, h: float = 1e-5
) -> float:
    """Max relative deviation between the analytic gradient and a central difference."""
    if h <= 0:
        raise ContractError("h must be positive")
    warr = as_param_array(w).copy()
    x, y = z.features, z.label
    g = loss.grad_xy(warr, x, y)
    worst = 0.0
    for i in range(warr.shape[0]):
        orig = warr[i]
        warr[i] = orig + h
        fp = loss.value_xy(warr, x, y)
        warr[i] = orig - h
        fm = loss.value_xy(warr, x, y)
        warr[i] = orig
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(fd - g[i]) / (abs(g[i]) + h))
    return worst


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write one row per example: columns f0..f{p-1},label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for z in dataset.examples:
            writer.writerow([repr(float(v)) for v in z.features] + [repr(z.label)])


def load_dataset_csv(path, bound: float) -> Dataset:
    """Read a dataset written by save_dataset_csv; the header row is required."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "label" or header[0] != "f0":
            raise ContractError(f"{path}: expected header f0..f{{p-1}},label")
        p = len(header) - 1
        examples = []
        for row in reader:
            if not row:
                continue
            if len(row) != p + 1:
                raise ContractError(f"{path}: row has {len(row)} fields, expected {p + 1}")
            examples.append(Example([float(v) for v in row[:p]], float(row[p])))
    return Dataset(examples, bound)
