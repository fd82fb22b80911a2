"""Spiking neural networks trained by ANN conversion followed by spike-timing-dependent backpropagation."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analysis import SpikeReport, average_spikes_per_layer, compare_energy, spike_report
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .conversion import balance_thresholds, convert, copy_weights
from .datasets import load_dataset, load_mnist
from .encoding import poisson_encode
from .errors import (ComparisonError, ConfigError, DegenerateThresholdError, FormatError,
                     InputError, NumericError, ShapeError, SNNError, TrainingDivergedError)
from .network import (ArchitectureSpec, AvgPool, Conv, Dropout, Linear, NetworkParams,
                      ResidualBlock, ann_forward, init_neuron_state, init_params, preset,
                      resnet8_lite, simulate, snn_forward, vgg5)
from .neuron import LifState, NeuronConfig, SurrogateConfig
from .tensor import precision, set_precision
from .training import (TrainConfig, evaluate_ann, evaluate_snn, stdb_backward, train_ann,
                       train_stdb, truncated_bptt_step)

__all__ = [
    "BACKEND", "ArchitectureSpec", "AvgPool", "Checkpoint", "ComparisonError", "ConfigError",
    "Conv", "DegenerateThresholdError", "Dropout", "FormatError", "InputError", "LifState",
    "Linear", "NetworkParams", "NeuronConfig", "NumericError", "ResidualBlock", "RunConfig",
    "SNNError", "ShapeError", "SpikeReport", "SurrogateConfig", "TrainConfig",
    "TrainingDivergedError", "ann_forward", "average_spikes_per_layer", "balance_thresholds",
    "compare_energy", "convert", "copy_weights", "evaluate_ann", "evaluate_snn",
    "init_neuron_state", "init_params", "load_checkpoint", "load_config", "load_dataset",
    "load_mnist", "poisson_encode",
    "precision", "preset", "resnet8_lite", "save_checkpoint", "set_precision", "simulate",
    "snn_forward", "spike_report", "stdb_backward", "train_ann", "train_stdb",
    "truncated_bptt_step", "vgg5",
]
