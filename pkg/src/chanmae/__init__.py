"""Masked-autoencoder pretraining and downstream tasks on synthetic CSI."""

from .channel import PathSet, ScenarioParams, scenario
from .dataset import CsiSample, DatasetHeader, generate_dataset, load_dataset, samples_to_arrays
from .estimators import (
    ChannelExtrapolator,
    ChannelFeedbackAutoencoder,
    ChannelMaskedAutoencoder,
    CsiPositioner,
    TrainHistory,
    zero_shot_eval,
)
from .metrics import MetricsReport, cdf_table, nmse, position_errors, read_report, write_report
from .network import ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ChannelExtrapolator",
    "ChannelFeedbackAutoencoder",
    "ChannelMaskedAutoencoder",
    "CsiPositioner",
    "CsiSample",
    "DatasetHeader",
    "MetricsReport",
    "ModelConfig",
    "PathSet",
    "ScenarioParams",
    "TrainHistory",
    "cdf_table",
    "generate_dataset",
    "load_dataset",
    "nmse",
    "position_errors",
    "read_report",
    "samples_to_arrays",
    "scenario",
    "write_report",
    "zero_shot_eval",
]
