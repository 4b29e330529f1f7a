"""vcguard: label-free drift monitoring via volatility in certainty.

The public surface re-exported here mirrors the package layout: the VC
metric over probability matrices (metric), the statistical validation
machinery (stats), a self-contained MLP trainer with FGSM (tinynet), data
ingestion and serialization (datasets), and the experiment harness
(harness).
"""

from .errors import DegenerateMetricError, DivergenceError, InputError, VcGuardError
from .metric import (
    CertaintySequence,
    ProbabilityMatrix,
    VcConfig,
    VcReport,
    certainty_margin,
    certainty_sequence,
    local_volatility,
    log_vc,
    vc,
)
from .stats import (
    CorrelationResult,
    WelchResult,
    bootstrap_vc_samples,
    pearson,
    student_t_sf,
    welch_t,
)
from .tinynet import (
    AdamState,
    EpochRecord,
    FgsmConfig,
    Mlp,
    TrainConfig,
    TrainTrajectory,
    accuracy,
    adam_step,
    backward,
    fgsm,
    forward,
    input_gradient,
    load_checkpoint,
    save_checkpoint,
    smoothed_cross_entropy,
    softmax,
    train,
)
from .datasets import (
    LabeledDataset,
    SweepRecord,
    load_idx_images,
    load_idx_labels,
    read_prob_csv,
    read_sweep_records,
    synth_blobs,
    write_idx_images,
    write_idx_labels,
    write_prob_csv,
    write_report_json,
    write_sweep_csv,
)
from .harness import (
    DetectionResult,
    contamination_sweep,
    detect_min_contamination,
    epsilon_sweep,
    make_contaminated_set,
    trajectory_correlation,
)

__version__ = "0.1.0"
