"""Statistical validation machinery.

Three procedures back the drift-detection protocol: Pearson correlation
between accuracy and log(VC), Welch's unequal-variance two-sample t-test,
and bootstrap resampling that manufactures a distribution of log-VC values
from a single probability matrix. The Student-t tail probability behind the
t-test is evaluated through the regularized incomplete beta function using
a modified Lentz continued fraction, accurate to well below 1e-8 over
df in [1, 1000] and |t| <= 50.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetricError, InputError
from .metric import ProbabilityMatrix, VcConfig, log_vc, vc


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson product-moment coefficient and the sample count behind it."""

    rho: float
    n: int


@dataclass(frozen=True)
class WelchResult:
    """Welch t statistic, Welch-Satterthwaite df, and two-sided p-value."""

    t: float
    df: float
    p_two_sided: float


def pearson(xs, ys) -> CorrelationResult:
    """Pearson correlation of two equal-length sequences.

    Requires n >= 3 and non-constant inputs; a constant sequence makes the
    coefficient undefined and raises DegenerateMetricError.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise InputError("pearson needs two 1-D sequences of equal length")
    if x.size < 3:
        raise InputError(f"pearson needs at least 3 pairs, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("pearson inputs must be finite")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateMetricError("zero variance: correlation undefined")
    rho = float((xc @ yc) / math.sqrt(sxx * syy))
    return CorrelationResult(rho=rho, n=int(x.size))


def welch_t(a, b) -> WelchResult:
    """Welch's two-sample t-test, two-sided.

    t = (mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b) with n-1 sample
    variances; degrees of freedom by Welch-Satterthwaite; p-value from the
    Student-t survival function. Raises DegenerateMetricError when both
    samples have zero variance.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise InputError("welch_t needs 1-D samples")
    if x.size < 2 or y.size < 2:
        raise InputError("welch_t needs at least 2 elements per sample")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("welch_t inputs must be finite")
    va = float(x.var(ddof=1))
    vb = float(y.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise DegenerateMetricError("degenerate samples: both variances are zero")
    na, nb = x.size, y.size
    se2 = va / na + vb / nb
    t = float((x.mean() - y.mean()) / math.sqrt(se2))
    df = se2 * se2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return WelchResult(t=t, df=float(df), p_two_sided=student_t_sf(t, df))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for 0 <= x <= 1."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Two-sided Student-t tail probability P(|T| >= |t|).

    Uses the identity P(|T| >= |t|) = I_x(df/2, 1/2) with x = df/(df + t^2).
    """
    if not math.isfinite(t):
        raise InputError(f"non-finite t statistic: {t}")
    if not (math.isfinite(df) and df > 0):
        raise InputError(f"degrees of freedom must be positive and finite, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    p = _reg_inc_beta(0.5 * df, 0.5, x)
    return min(1.0, max(0.0, p))


def bootstrap_vc_samples(
    m: ProbabilityMatrix,
    subset_size: int,
    trials: int,
    seed: int,
    cfg: VcConfig | None = None,
) -> list[float]:
    """log-VC over repeated uniform subsets of a probability matrix.

    Each trial draws ``subset_size`` rows without replacement using an RNG
    stream derived from (seed, trial), so results are deterministic for a
    fixed seed and trials are independent of one another (safe to evaluate
    in parallel). VC is a set-level statistic; this resampling is what turns
    one test set into a sample its distribution can be tested from.
    """
    if trials < 2:
        raise InputError(f"need at least 2 bootstrap trials, got {trials}")
    if subset_size > m.n_samples:
        raise InputError(
            f"subset_size {subset_size} exceeds matrix size {m.n_samples}"
        )
    if seed < 0:
        raise InputError("seed must be a non-negative integer")
    cfg = cfg if cfg is not None else VcConfig()
    lo, hi = _bootstrap_window_check(subset_size, cfg)
    samples: list[float] = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        idx = rng.choice(m.n_samples, size=subset_size, replace=False)
        report = vc(ProbabilityMatrix(m.probs[idx]), cfg)
        samples.append(log_vc(report))
    return samples


def _bootstrap_window_check(subset_size: int, cfg: VcConfig) -> tuple[int, int]:
    from .metric import _trim_window

    if subset_size < 2:
        raise InputError("subset too small: need at least 2 samples")
    lo, hi = _trim_window(subset_size, cfg)
    if lo > hi:
        raise InputError(
            f"subset too small for a non-empty trim window: size {subset_size} "
            f"with trim ({cfg.trim_low}, {cfg.trim_high})"
        )
    return lo, hi
