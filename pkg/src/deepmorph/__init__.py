"""Deep morphological networks: trainable structuring elements via binarized
depthwise filter banks, with a classical-morphology oracle for verification."""

from . import architectures, classical, datasets, morph, netpbm, nn, tensor_ops
from .architectures import ARCHITECTURES, build_network, count_parameters
from .classical import StructuringElement, make_se
from .morph import (
    FilterBank,
    MorphLayer,
    MorphNeuron,
    NeuronSpec,
    dilate_se_for_reconstruction,
    framework_morph,
    max_binarize,
    recover_se,
)
from .nn import Metrics, Network, TrainConfig, derive_rng, evaluate, gradcheck, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "FilterBank",
    "Metrics",
    "MorphLayer",
    "MorphNeuron",
    "Network",
    "NeuronSpec",
    "StructuringElement",
    "TrainConfig",
    "architectures",
    "build_network",
    "classical",
    "count_parameters",
    "datasets",
    "derive_rng",
    "dilate_se_for_reconstruction",
    "evaluate",
    "framework_morph",
    "gradcheck",
    "make_se",
    "max_binarize",
    "morph",
    "netpbm",
    "nn",
    "recover_se",
    "sgd_step",
    "tensor_ops",
    "train",
]
