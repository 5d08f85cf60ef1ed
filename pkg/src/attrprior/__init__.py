"""Attribute-prior logit adjustment for compositional zero-shot learning."""

from .bundle import FeatureBundle, import_features, read_bundle, write_bundle
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, NumericalError, ShapeError, ValidationError
from .evaluate import EvalReport, bias_sweep, harmonic_mean, infer
from .pipeline import CompositionalModel, evaluate, fit, sweep
from .priors import build_inference_prior, compute_k, instance_k_hat
from .space import CompositionSpace, build_space
from .synthgen import SynthSpec, generate, imbalance_report
from .training import TrainConfig, loss_cls, loss_ic, train_stage1, train_stage2

__all__ = [
    "CompositionSpace", "CompositionalModel", "ContractError", "EvalReport", "FeatureBundle",
    "NumericalError", "ShapeError", "SynthSpec", "TrainConfig", "ValidationError",
    "bias_sweep", "build_inference_prior", "build_space", "compute_k", "evaluate", "fit",
    "generate", "harmonic_mean", "imbalance_report", "import_features", "infer",
    "instance_k_hat", "load_checkpoint", "loss_cls", "loss_ic", "read_bundle",
    "save_checkpoint", "sweep", "train_stage1", "train_stage2", "write_bundle",
]
