"""Online continual learning with an external-attention transformer,
class-wise learnable focuses, focal contrastive replay, and a dual-classifier
head, plus the stream/evaluation harness to measure accuracy and forgetting
under Task-free and Task-aware protocols.
"""

from .data_stream import (
    AugmentedPair,
    StreamBatch,
    TaskSpec,
    augment_two_views,
    get_dataset,
    make_task_splits,
    split_manifest,
    stream_batches,
)
from .errors import ConfigurationError, NonFiniteLossError
from .evaluation import (
    AccuracyMatrix,
    evaluate_boundary,
    evaluate_task,
    forgetting,
    incremental_metrics,
    overall_accuracy,
)
from .experiment import ExperimentConfig, emit_report, run_experiment, run_methods
from .losses import (
    ContrastiveBatch,
    LossWeights,
    accumulation_loss,
    fc_loss,
    injection_loss,
    scl_loss,
    total_loss,
)
from .model import (
    CvtConfig,
    CvtModel,
    ExternalAttention,
    FocusBank,
    ModelOutputs,
    activate_focuses,
    count_parameters,
)
from .replay import MemoryBuffer, reservoir_update, sample_memory_batch
from .trainer import RunResult, StepReport, TrainConfig, run_stream, train_step

__version__ = "0.1.0"
