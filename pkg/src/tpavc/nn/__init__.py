"""Differentiable-computation substrate: tape autodiff, layers, optimiser, checkpoints."""
from tpavc.nn.checkpoint import load_checkpoint, save_checkpoint
from tpavc.nn.gradcheck import analytic_gradients, finite_difference_check
from tpavc.nn.module import (
    LSTM,
    MLP,
    AttentionBlock,
    BiLSTM,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    uniform_init,
)
from tpavc.nn.optim import Adam
from tpavc.nn.tensor import ParamTensor, Tape, Tensor

__all__ = [
    "Adam", "AttentionBlock", "BiLSTM", "Embedding", "LSTM", "LayerNorm", "Linear", "MLP",
    "Module", "ParamTensor", "Tape", "Tensor", "analytic_gradients", "finite_difference_check",
    "load_checkpoint", "save_checkpoint", "uniform_init",
]
