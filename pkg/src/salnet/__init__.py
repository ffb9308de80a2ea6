"""Convolutional saliency prediction: network, training, post-processing, metrics and file formats."""

from .errors import (
    CheckpointFormatError,
    DegenerateInputError,
    DivergenceError,
    FixationValidationError,
    IncompatibleCheckpointError,
    InconsistentTraceError,
    InvalidArgumentError,
    InvalidShapeError,
    ParseError,
    SalnetError,
    TruncatedFileError,
)
from .estimator import SaliencyNetRegressor, SaliencyPostprocessor
from .io import load_checkpoint, load_fixations, load_gt_map, load_image, load_manifest, save_checkpoint
from .layers import Network, net_backward, net_forward
from .metrics import FixationSet, MetricReport, auc_borji, auc_judd, auc_shuffled, cc, evaluate_dataset, similarity
from .postproc import gaussian_blur, postprocess, predict_pipeline, resize_bilinear
from .training import TrainConfig, lr_schedule, train

__version__ = "0.1.0"
