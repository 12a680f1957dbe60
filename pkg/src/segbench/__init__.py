"""Volumetric segmentation benchmarking toolkit."""
from .ensemble import VoteConfig, argmax_labels, average_probs, majority_vote
from .io import read_labels, read_nifti, read_volume, write_nifti, write_volume
from .losses import default_matrix, gwdl_loss_and_grad, gwdl_score
from .metrics import NA, MetricRecord, Task, avd, dice, evaluate_case, hd95_asd, sensitivity
from .report import MetricTable, run_manifest
from .stats import bootstrap_ci, bootstrap_superiority, summarize
from .taxonomy import Taxonomy
from .volume import BinaryMask, LabelVolume, ProbVolume, Spacing, Volume

__version__ = "0.1.0"
