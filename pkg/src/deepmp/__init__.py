"""Message-passing training of binary multilayer perceptrons.

BP, BPI, MF and AMP inner loops inside a Posterior-as-Prior outer loop,
plus a BinaryNet baseline and evaluation tools.
"""

from .data import Dataset, load_dataset, permuted_tasks, to_two_class
from .evalkit import bayesian_error, local_energy, overlaps, pointwise_error
from .layers import ALGORITHMS, NumericalError
from .trainer import PaspConfig, PaspState, init_priors, pasp_step, train, train_continual

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "Dataset",
    "NumericalError",
    "PaspConfig",
    "PaspState",
    "bayesian_error",
    "init_priors",
    "load_dataset",
    "local_energy",
    "overlaps",
    "pasp_step",
    "permuted_tasks",
    "pointwise_error",
    "to_two_class",
    "train",
    "train_continual",
]
