"""Pixel-wise eddy segmentation of sea-surface-height maps with a small
U-Net, implemented in numpy."""

from .data import EddyContour, GridGeometry, PatchPair, SshGrid, SynthConfig, rasterize_contours, synth_scene
from .evaluator import EvalProtocolConfig, evaluate_protocol, ghost_check, predict_grid
from .formats import FormatError, load_grid, load_weights, save_grid, save_weights
from .losses import MetricReport, categorical_cross_entropy, dice_loss, metric_report
from .model import EddyNetConfig, NetworkWeights, backward, build_model, forward, predict_labels
from .trainer import TrainConfig, TrainingHistory, train

__version__ = "0.1.0"
