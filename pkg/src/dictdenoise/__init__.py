"""Convolutional dictionary-learning image denoising toolkit.

A small unrolled-optimization denoiser: learned multi-subband
analysis/synthesis convolutions with noise-adaptive thresholds, a
reference ISTA solver used as the correctness oracle, hand-derived
gradients, ADAM training with constraint projection and checkpoint
backtracking, blind noise estimation, and a CLI for the whole pipeline.
"""

from .checkpoint import AdamState, CheckpointError, CheckpointRecord, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, configs_from_text, load_configs
from .conv import FilterBank, SubbandCode, analysis_conv, synthesis_conv
from .images import (
    Image,
    MaskSignal,
    apply_mask,
    awgn,
    make_bayer_mask,
    nn_fill_rggb,
    psnr,
    subtract_mean,
    add_mean,
)
from .losses import GradientSet, LossReport, backward, loss_mcsure, loss_mse, mc_divergence
from .model import (
    LayerParams,
    ModelConfig,
    ModelParams,
    effective_thresholds,
    forward,
    forward_jdd,
    init_params,
    param_count,
    project_constraints,
)
from .noise import NoiseEstimate, estimate_mad, estimate_pca
from .solvers import (
    BpdnProblem,
    block_threshold,
    bpdn_objective,
    ista,
    soft_threshold,
    spectral_norm,
    universal_threshold,
)
from .training import Dataset, adam_step, evaluate_image, lr_schedule, maybe_backtrack, sample_batch, train

__version__ = "0.1.0"
