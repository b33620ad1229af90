"""SSVEP classification with a dual-stream (native + complex-spectrum) attention network.

Plain numpy/scipy implementation with its own reverse-mode autodiff, a
synthetic SSVEP generator, leave-one-subject-out evaluation and ITR tooling.
"""

__version__ = "0.1.0"

from .data import EegEpochSet, SynthConfig, load_epochs, save_epochs, synthesize
from .errors import BimaError
from .evaluation import EvalReport, accuracy, itr_bits_per_min, paired_t_test, read_report, write_report
from .model import BimaConfig, BimaModel, load_checkpoint, save_checkpoint
from .spectral import SpectralConfig, complex_spectrum, dft
from .training import TrainConfig, ablate, adam_step, loso, train

__all__ = [
    "BimaConfig",
    "BimaError",
    "BimaModel",
    "EegEpochSet",
    "EvalReport",
    "SpectralConfig",
    "SynthConfig",
    "TrainConfig",
    "ablate",
    "accuracy",
    "adam_step",
    "complex_spectrum",
    "dft",
    "itr_bits_per_min",
    "load_checkpoint",
    "load_epochs",
    "loso",
    "paired_t_test",
    "read_report",
    "save_checkpoint",
    "save_epochs",
    "synthesize",
    "train",
    "write_report",
]
