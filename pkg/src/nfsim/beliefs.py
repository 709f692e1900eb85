"""Core probability types and numerics.

Everything downstream (generative models, inference, the environment) is
built out of three array-backed value types: `Categorical` vectors,
`ConditionalTensor` stochastic tensors and `DirichletCounts` pseudo-count
arrays, plus the handful of numeric kernels operating on them. All
operations here are pure; the wrapper types validate on construction and
are safe to share read-only between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .errors import DegenerateDistribution, InvalidInput, ShapeError

# Floor applied inside logarithms so that log(0) never produces -inf where a
# finite value is semantically fine. KL keeps its +inf sentinel on purpose.
PROB_FLOOR = 1e-16

NORMALIZATION_ATOL = 1e-9


def _floored_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, PROB_FLOOR))


@dataclass(frozen=True)
class Categorical:
    """A normalized probability vector.

    Entries must be non-negative and sum to 1 within 1e-9.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size < 1:
            raise ShapeError(f"categorical must be a non-empty vector, got shape {probs.shape}")
        if np.any(probs < 0):
            raise DegenerateDistribution("categorical has negative entries")
        total = probs.sum()
        if not np.isclose(total, 1.0, rtol=0.0, atol=NORMALIZATION_ATOL):
            raise DegenerateDistribution(f"categorical sums to {total!r}, not 1")

    def __len__(self) -> int:
        return self.probs.size

    def entropy(self) -> float:
        p = self.probs
        return float(-np.sum(p * _floored_log(p), where=p > 0, initial=0.0))


@dataclass(frozen=True)
class ConditionalTensor:
    """Stochastic tensor indexed [outcome, condition...].

    Every conditional slice (fixing all condition indices) is a valid
    Categorical over the leading outcome axis.
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", table)
        if table.ndim < 1:
            raise ShapeError("conditional tensor needs at least an outcome axis")
        if np.any(table < 0):
            raise DegenerateDistribution("conditional tensor has negative entries")
        sums = table.sum(axis=0)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=NORMALIZATION_ATOL):
            worst = float(np.abs(sums - 1.0).max())
            raise DegenerateDistribution(f"conditional slices deviate from 1 by {worst:g}")

    @property
    def n_outcomes(self) -> int:
        return self.table.shape[0]

    @property
    def condition_shape(self) -> tuple[int, ...]:
        return self.table.shape[1:]

    def slice(self, *condition: int) -> Categorical:
        return Categorical(self.table[(slice(None),) + condition])


@dataclass(frozen=True)
class DirichletCounts:
    """Concentration parameters over a conditional tensor (same layout).

    Entries are strictly positive pseudo-counts; `expectation()` yields the
    mean categorical parameters and `expected_log()` the Dirichlet expected
    log-probabilities.
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "counts", counts)
        if counts.ndim < 1:
            raise ShapeError("counts need at least an outcome axis")
        if np.any(counts <= 0):
            raise DegenerateDistribution("Dirichlet counts must be strictly positive")

    def expectation(self) -> ConditionalTensor:
        return ConditionalTensor(self.counts / self.counts.sum(axis=0, keepdims=True))

    def expected_log(self, method: str = "digamma") -> np.ndarray:
        return expected_log(self, method=method)

    def total_mass(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class BinGrid:
    """Discretization grid given by strictly increasing bin centers."""

    centers: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        object.__setattr__(self, "centers", centers)
        if centers.ndim != 1 or centers.size < 1:
            raise ShapeError("grid centers must form a non-empty vector")
        if centers.size > 1 and np.any(np.diff(centers) <= 0):
            raise InvalidInput("grid centers must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return self.centers.size

    @property
    def bin_width(self) -> float:
        """Common spacing of an equispaced grid."""
        if self.n_bins < 2:
            raise InvalidInput("bin width undefined for a single-bin grid")
        diffs = np.diff(self.centers)
        if not np.allclose(diffs, diffs[0], rtol=1e-9, atol=0.0):
            raise InvalidInput("grid is not equispaced")
        return float(diffs[0])

    def nearest(self, value: float) -> int:
        return int(np.abs(self.centers - value).argmin())

    @staticmethod
    def linspace(lo: float, hi: float, n_bins: int) -> "BinGrid":
        return BinGrid(np.linspace(lo, hi, n_bins))


def normalize(raw) -> Categorical:
    """Rescale a non-negative vector into a Categorical.

    Raises DegenerateDistribution on negative entries or an all-zero vector.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {raw.shape}")
    if np.any(~np.isfinite(raw)):
        raise InvalidInput("non-finite entries")
    if np.any(raw < 0):
        raise DegenerateDistribution("negative entries cannot be normalized")
    total = raw.sum()
    if total <= 0:
        raise DegenerateDistribution("all-zero vector cannot be normalized")
    return Categorical(raw / total)


def softmax(logits, precision: float = 1.0) -> Categorical:
    """Categorical proportional to exp(precision * logits), max-stabilized."""
    logits = np.asarray(logits, dtype=float)
    if np.any(np.isnan(logits)):
        raise InvalidInput("NaN logits")
    if precision < 0:
        raise InvalidInput("precision must be >= 0")
    z = precision * logits
    z = z - z.max()
    e = np.exp(z)
    return Categorical(e / e.sum())


def entropy(p: Categorical | np.ndarray) -> float:
    probs = p.probs if isinstance(p, Categorical) else np.asarray(p, dtype=float)
    return float(-np.sum(probs * _floored_log(probs), where=probs > 0, initial=0.0))


def kl_divergence(p: Categorical, q: Categorical) -> float:
    """KL(p || q) in nats, with the 0 ln 0 = 0 convention.

    Returns +inf when p has support where q does not.
    """
    pp, qq = p.probs, q.probs
    if pp.shape != qq.shape:
        raise ShapeError(f"length mismatch: {pp.shape} vs {qq.shape}")
    support = pp > 0
    if np.any(support & (qq <= 0)):
        return float("inf")
    return float(np.sum(pp[support] * np.log(pp[support] / qq[support])))


def discretize_gaussian(mean: float, sigma: float, grid: BinGrid, rule: str = "center") -> Categorical:
    """Project a Gaussian N(mean, sigma^2) onto a bin grid.

    `mean` and `sigma` are in the units of the grid centers. The default
    "center" rule normalizes the density evaluated at each center; the
    "interval" rule integrates the density between midpoint bin edges
    (outer bins extend to +-inf).
    """
    if sigma <= 0:
        raise InvalidInput("sigma must be > 0")
    c = grid.centers
    if rule == "center":
        logits = -((c - mean) ** 2) / (2.0 * sigma**2)
        return softmax(logits)
    if rule == "interval":
        from scipy.special import ndtr

        edges = np.concatenate(([-np.inf], (c[:-1] + c[1:]) / 2.0, [np.inf]))
        cdf = ndtr((edges - mean) / sigma)
        return normalize(np.diff(cdf))
    raise InvalidInput(f"unknown discretization rule {rule!r}")


def expected_log(counts: DirichletCounts, method: str = "digamma") -> np.ndarray:
    """Expected log-probabilities of each conditional slice under the Dirichlet.

    The digamma rule gives psi(count) - psi(slice total); the "point" method
    is the plain log of the normalized counts, kept for ablation.
    """
    a = counts.counts
    if method == "digamma":
        return digamma(a) - digamma(a.sum(axis=0, keepdims=True))
    if method == "point":
        return _floored_log(a / a.sum(axis=0, keepdims=True))
    raise InvalidInput(f"unknown expected-log method {method!r}")


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector using a single uniform."""
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"), probs.size - 1))
