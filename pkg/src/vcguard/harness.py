"""Experiment protocols: contamination sweeps, epsilon sweeps, early-warning
detection, and training-trajectory correlation.

Every run is deterministic under its master seed; each (level, trial) cell
derives its own RNG stream, so cells are order-independent and could run in
parallel. VC only ever sees probability matrices — labels are used solely to
score accuracy and to aim the attack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset, SweepRecord
from .errors import DegenerateMetricError, InputError
from .metric import ProbabilityMatrix, VcConfig, log_vc, vc
from .stats import bootstrap_vc_samples, pearson, welch_t
from .tinynet import FgsmConfig, Mlp, accuracy, fgsm, forward, input_gradient, softmax

DEFAULT_CONTAMINATION_COUNTS = tuple(range(0, 101, 5))
DEFAULT_EPSILONS = tuple(round(0.002 * i, 3) for i in range(16))
DEFAULT_DETECTION_LEVELS = (0.01, 0.02, 0.05, 0.10)


@dataclass(frozen=True)
class DetectionResult:
    """Smallest significant contamination level plus the full p-value curve."""

    p_star: float | None
    p_values: tuple[tuple[float, float], ...]
    alpha: float

    def to_payload(self) -> dict:
        return {
            "p_star": self.p_star,
            "alpha": self.alpha,
            "p_values": [{"level": lv, "p": p} for lv, p in self.p_values],
        }


def _model_log_vc(net: Mlp, images: np.ndarray, cfg: VcConfig | None) -> float | None:
    """Label-free log VC of the model's softmax outputs; None if degenerate."""
    probs = ProbabilityMatrix(softmax(forward(net, images)))
    try:
        return log_vc(vc(probs, cfg))
    except DegenerateMetricError:
        return None


def _attack(net: Mlp, data: LabeledDataset, cfg: FgsmConfig) -> LabeledDataset:
    grads = input_gradient(net, data.images, data.labels)
    return LabeledDataset(fgsm(data.images, grads, cfg), data.labels.copy())


def make_contaminated_set(
    clean: LabeledDataset,
    adversarial: LabeledDataset,
    n_replace: int,
    seed,
) -> LabeledDataset:
    """Replace n uniformly chosen rows of the clean set by their attacked twins.

    ``adversarial`` must be index-aligned with ``clean`` (same length, same
    labels). Labels are retained for accuracy scoring only. ``seed`` may be
    an int or a numpy Generator.
    """
    if len(clean) != len(adversarial):
        raise InputError(
            f"misaligned sets: {len(clean)} clean vs {len(adversarial)} adversarial rows"
        )
    if clean.images.shape != adversarial.images.shape or not np.array_equal(
        clean.labels, adversarial.labels
    ):
        raise InputError("misaligned sets: adversarial must be the attacked image of clean")
    if not 0 <= n_replace <= len(clean):
        raise InputError(f"n_replace must be in [0, {len(clean)}], got {n_replace}")
    rng = np.random.default_rng(seed)
    images = clean.images.copy()
    idx = rng.choice(len(clean), size=n_replace, replace=False)
    images[idx] = adversarial.images[idx]
    return LabeledDataset(images, clean.labels.copy())


def contamination_sweep(
    net: Mlp,
    clean_pool: LabeledDataset,
    fgsm_cfg: FgsmConfig,
    set_size: int = 1000,
    levels=DEFAULT_CONTAMINATION_COUNTS,
    trials: int = 1,
    seed: int = 42,
    vc_cfg: VcConfig | None = None,
) -> list[SweepRecord]:
    """Scenario A: mix n attacked samples into fresh clean subsets.

    ``levels`` are replacement counts out of ``set_size``. For each
    (level, trial) a fresh subset is drawn from the pool, attacked whole,
    and mixed at that count; the record stores the contamination fraction,
    labeled accuracy, and label-free log VC.
    """
    levels = [int(lv) for lv in levels]
    if len(clean_pool) < set_size:
        raise InputError(
            f"pool has {len(clean_pool)} samples, need at least set_size={set_size}"
        )
    if any(lv < 0 or lv > set_size for lv in levels):
        raise InputError(f"levels must be counts in [0, {set_size}]")
    if trials < 1:
        raise InputError("trials must be >= 1")
    records: list[SweepRecord] = []
    for level in levels:
        for trial in range(trials):
            rng = np.random.default_rng([seed, level, trial])
            idx = rng.choice(len(clean_pool), size=set_size, replace=False)
            clean = clean_pool.subset(idx)
            mixed = make_contaminated_set(clean, _attack(net, clean, fgsm_cfg), level, rng)
            records.append(
                SweepRecord(
                    level=level / set_size,
                    accuracy=accuracy(net, mixed),
                    log_vc=_model_log_vc(net, mixed.images, vc_cfg),
                    trial=trial,
                )
            )
    return records


def epsilon_sweep(
    net: Mlp,
    test_set: LabeledDataset,
    epsilons=DEFAULT_EPSILONS,
    clip_min: float = 0.0,
    clip_max: float = 1.0,
    vc_cfg: VcConfig | None = None,
) -> list[SweepRecord]:
    """Scenario B: attack the whole set at each perturbation magnitude.

    The input gradient is epsilon-independent, so it is computed once and
    reused across the schedule. The epsilon = 0 record reproduces clean
    accuracy exactly.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise InputError("epsilon list must be non-empty")
    if len(test_set) == 0:
        raise InputError("test set must be non-empty")
    grads = input_gradient(net, test_set.images, test_set.labels)
    records: list[SweepRecord] = []
    for eps in epsilons:
        cfg = FgsmConfig(epsilon=eps, clip_min=clip_min, clip_max=clip_max)
        attacked = LabeledDataset(
            fgsm(test_set.images, grads, cfg), test_set.labels.copy()
        )
        records.append(
            SweepRecord(
                level=eps,
                accuracy=accuracy(net, attacked),
                log_vc=_model_log_vc(net, attacked.images, vc_cfg),
                trial=0,
            )
        )
    return records


def _child_seed(seed: int, *keys: int) -> int:
    """Deterministic derived seed for APIs that take a plain integer."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def detect_min_contamination(
    net: Mlp,
    clean_pool: LabeledDataset,
    fgsm_cfg: FgsmConfig,
    levels=DEFAULT_DETECTION_LEVELS,
    alpha: float = 0.05,
    set_size: int = 1000,
    bootstrap_trials: int = 30,
    bootstrap_size: int = 200,
    seed: int = 42,
    vc_cfg: VcConfig | None = None,
) -> DetectionResult:
    """Early-warning scan: smallest contamination whose VC shifts significantly.

    One evaluation set is drawn from the pool and attacked whole; for each
    level (a fraction of the set) the clean and mixed sets are bootstrapped
    into log-VC samples and compared with Welch's t-test. The bootstrap
    subset indices are shared between the reference and every candidate
    (paired design), so a level of 0 compares identical samples and yields
    p = 1 exactly. The p-value curve is reported for all levels, not just
    the first significant one.
    """
    levels = [float(lv) for lv in levels]
    if any(not 0.0 <= lv <= 1.0 for lv in levels):
        raise InputError("levels must be fractions in [0, 1]")
    if sorted(levels) != levels:
        raise InputError("levels must be sorted ascending")
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must be in [0, 1]")
    if len(clean_pool) < set_size:
        raise InputError(
            f"pool has {len(clean_pool)} samples, need at least set_size={set_size}"
        )
    rng = np.random.default_rng([seed, 0])
    idx = rng.choice(len(clean_pool), size=set_size, replace=False)
    clean = clean_pool.subset(idx)
    adversarial = _attack(net, clean, fgsm_cfg)
    boot_seed = _child_seed(seed, 1)
    clean_probs = ProbabilityMatrix(softmax(forward(net, clean.images)))
    reference = bootstrap_vc_samples(
        clean_probs, bootstrap_size, bootstrap_trials, boot_seed, vc_cfg
    )
    p_values: list[tuple[float, float]] = []
    p_star: float | None = None
    for i, level in enumerate(levels):
        n_replace = round(level * set_size)
        mixed = make_contaminated_set(
            clean, adversarial, n_replace, np.random.default_rng([seed, 2, i])
        )
        probs = ProbabilityMatrix(softmax(forward(net, mixed.images)))
        candidate = bootstrap_vc_samples(
            probs, bootstrap_size, bootstrap_trials, boot_seed, vc_cfg
        )
        p = welch_t(reference, candidate).p_two_sided
        p_values.append((level, p))
        if p_star is None and level > 0 and p < alpha:
            p_star = level
    return DetectionResult(p_star=p_star, p_values=tuple(p_values), alpha=alpha)


def trajectory_correlation(traj, threshold: float):
    """Pearson(accuracy, log VC) split at a validation-accuracy threshold.

    Each epoch contributes one point: its validation accuracy paired with
    the mean of its finite log-VC samples. A side with fewer than 3 points
    reports None; a constant side surfaces the stats error.
    """
    points: list[tuple[float, float]] = []
    for rec in traj.records:
        finite = [v for v in rec.val_log_vcs if math.isfinite(v)]
        if finite:
            points.append((rec.val_accuracy, float(np.mean(finite))))
    above = [(a, v) for a, v in points if a > threshold]
    below = [(a, v) for a, v in points if a <= threshold]
    rho_above = (
        pearson([a for a, _ in above], [v for _, v in above]).rho
        if len(above) >= 3
        else None
    )
    rho_below = (
        pearson([a for a, _ in below], [v for _, v in below]).rho
        if len(below) >= 3
        else None
    )
    return rho_above, rho_below
