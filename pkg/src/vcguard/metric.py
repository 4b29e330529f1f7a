"""Volatility-in-certainty (VC) metric over classifier softmax outputs.

VC is computed from model outputs alone, never from labels. For each sample
the certainty margin is the top-1 minus the top-2 class probability; the
margins are sorted ascending, adjacent margins are compared through squared
log-ratios ("gap volatilities"), and the central window of those gaps is
averaged. A smooth, confident batch of predictions yields a small VC; drifted
or adversarial inputs roughen the sorted margin curve and inflate it.

All functions here are pure: values are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateMetricError, InputError

SIMPLEX_ATOL = 1e-6
# Slack when checking that probabilities sit inside [0, 1].
_RANGE_ATOL = 1e-9
# Trim fractions like 0.2 are not exactly representable; snap the window
# indices to the nearest integer within this tolerance so e.g. 0.2 * 10
# selects gap 2, not gap 3.
_INDEX_SNAP = 1e-9

Normalization = Literal["count_mean", "paper_literal"]


def _validate_simplex_rows(rows: np.ndarray) -> None:
    """Raise InputError naming the first offending row, if any."""
    lo = rows.min(axis=1)
    hi = rows.max(axis=1)
    bad = np.flatnonzero((lo < -_RANGE_ATOL) | (hi > 1.0 + _RANGE_ATOL))
    if bad.size:
        i = int(bad[0])
        raise InputError(
            f"row {i}: probability outside [0, 1] (min {lo[i]:.6g}, max {hi[i]:.6g})"
        )
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_ATOL)
    if bad.size:
        i = int(bad[0])
        raise InputError(
            f"row {i}: probabilities sum to {sums[i]:.8f}, expected 1 within {SIMPLEX_ATOL:g}"
        )


@dataclass(frozen=True)
class ProbabilityMatrix:
    """N rows of C-class softmax outputs, each row on the probability simplex.

    Rows must sum to 1 within ``SIMPLEX_ATOL`` and every entry must lie in
    [0, 1]; N >= 2 and C >= 2. The underlying array is treated as immutable.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2:
            raise InputError(f"expected a 2-D matrix, got ndim={arr.ndim}")
        n, c = arr.shape
        if n < 2:
            raise InputError(f"need at least 2 samples, got {n}")
        if c < 2:
            raise InputError(f"need at least 2 classes, got {c}")
        if not np.all(np.isfinite(arr)):
            raise InputError("probabilities must be finite")
        _validate_simplex_rows(arr)
        object.__setattr__(self, "probs", arr)

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_rows(cls, rows) -> "ProbabilityMatrix":
        return cls(np.asarray(rows, dtype=np.float64))


@dataclass(frozen=True)
class CertaintySequence:
    """Ascending-sorted per-sample certainty margins, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise InputError("certainty sequence needs at least 2 values")
        if np.any(arr < -_RANGE_ATOL) or np.any(arr > 1.0 + _RANGE_ATOL):
            raise InputError("certainty margins must lie in [0, 1]")
        if np.any(np.diff(arr) < 0):
            raise InputError("certainty sequence must be non-decreasing")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class VcConfig:
    """Knobs of the VC computation.

    ``epsilon0`` stabilises the log-ratios; 0 is accepted as a test-only
    override (production entry points insist on a positive value). The trim
    window keeps gap indices k with ceil(trim_low*N) <= k <= floor(trim_high*N),
    1-based over k = 1..N-1. ``count_mean`` divides the windowed sum by the
    number of included gaps; ``paper_literal`` divides by
    (trim_high - trim_low) * N regardless of how many gaps the rounding kept.
    """

    epsilon0: float = 1e-6
    trim_low: float = 0.2
    trim_high: float = 0.8
    normalization: Normalization = "count_mean"

    def __post_init__(self) -> None:
        if not (self.epsilon0 >= 0 and math.isfinite(self.epsilon0)):
            raise InputError(f"epsilon0 must be >= 0, got {self.epsilon0}")
        if not (0.0 <= self.trim_low < self.trim_high <= 1.0):
            raise InputError(
                f"need 0 <= trim_low < trim_high <= 1, got ({self.trim_low}, {self.trim_high})"
            )
        if self.normalization not in ("count_mean", "paper_literal"):
            raise InputError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class VcReport:
    """Result of one VC evaluation.

    ``log_vc`` is the natural log of ``vc`` and is None when vc == 0 (a
    pathologically uniform certainty profile). ``gap_volatilities`` holds all
    N-1 squared log-ratios, not just the windowed ones; ``included_count`` is
    the number the average actually used.
    """

    vc: float
    log_vc: float | None
    gap_volatilities: np.ndarray
    included_count: int
    config: VcConfig


def certainty_margin(p) -> float:
    """Top-1 minus top-2 probability of a single softmax vector.

    Ties in the maximum yield 0. Raises InputError for fewer than two
    classes or a vector off the simplex.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InputError("certainty margin needs a vector of at least 2 probabilities")
    if np.any(arr < -_RANGE_ATOL) or np.any(arr > 1.0 + _RANGE_ATOL):
        raise InputError("probabilities must lie in [0, 1]")
    if abs(float(arr.sum()) - 1.0) > SIMPLEX_ATOL:
        raise InputError(
            f"probabilities sum to {float(arr.sum()):.8f}, expected 1 within {SIMPLEX_ATOL:g}"
        )
    top2 = np.partition(arr, arr.size - 2)[-2:]
    return float(top2[1] - top2[0])


def certainty_sequence(m: ProbabilityMatrix) -> CertaintySequence:
    """Per-row certainty margins of a probability matrix, sorted ascending."""
    top2 = np.partition(m.probs, m.n_classes - 2, axis=1)[:, -2:]
    margins = top2[:, 1] - top2[:, 0]
    return CertaintySequence(np.sort(margins))


def local_volatility(seq: CertaintySequence, epsilon0: float) -> np.ndarray:
    """Squared log-ratios between adjacent sorted margins.

    Element k (1-based, k = 1..N-1) is (ln(d_{k+1} / (d_k + epsilon0)))^2.
    A zero numerator is floored at epsilon0 — by sortedness that can only
    happen when d_k is also zero, so the ratio becomes 1 and the gap carries
    no volatility. With the test-only epsilon0 = 0 the sequence must be
    strictly positive for finite output.
    """
    if not (epsilon0 >= 0 and math.isfinite(epsilon0)):
        raise InputError(f"epsilon0 must be >= 0, got {epsilon0}")
    d = seq.values
    num = np.where(d[1:] > 0.0, d[1:], epsilon0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(num / (d[:-1] + epsilon0)) ** 2
    return out


def _trim_window(n: int, cfg: VcConfig) -> tuple[int, int]:
    """Inclusive 1-based gap index bounds of the trim window."""
    lo = max(1, math.ceil(cfg.trim_low * n - _INDEX_SNAP))
    hi = min(math.floor(cfg.trim_high * n + _INDEX_SNAP), n - 1)
    return lo, hi


def vc(m: ProbabilityMatrix, cfg: VcConfig | None = None) -> VcReport:
    """Volatility in certainty of a probability matrix.

    Sorts the per-sample certainty margins, forms the squared log-ratio of
    each adjacent pair, and averages the pairs whose 1-based index falls in
    the trim window. Raises InputError when the window is empty for the
    given N and trim fractions (guaranteed non-empty for N >= 5 at the
    default 0.2/0.8 window).
    """
    cfg = cfg if cfg is not None else VcConfig()
    seq = certainty_sequence(m)
    vols = local_volatility(seq, cfg.epsilon0)
    n = m.n_samples
    lo, hi = _trim_window(n, cfg)
    if lo > hi:
        raise InputError(
            f"empty trim window for N={n}: gap indices [{lo}, {hi}] with "
            f"trim ({cfg.trim_low}, {cfg.trim_high})"
        )
    included = vols[lo - 1 : hi]
    count = hi - lo + 1
    if cfg.normalization == "count_mean":
        value = float(included.sum() / count)
    else:
        value = float(included.sum() / ((cfg.trim_high - cfg.trim_low) * n))
    log_value = math.log(value) if value > 0 else None
    return VcReport(
        vc=value,
        log_vc=log_value,
        gap_volatilities=vols,
        included_count=count,
        config=cfg,
    )


def log_vc(report: VcReport) -> float:
    """Natural log of a report's VC; errors on zero volatility."""
    if report.vc <= 0 or report.log_vc is None:
        raise DegenerateMetricError(
            "degenerate zero volatility: log(VC) undefined for a perfectly "
            "uniform certainty profile"
        )
    return report.log_vc
