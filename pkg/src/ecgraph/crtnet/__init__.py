"""CRT-Net on a small reverse-mode autograd engine."""

from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import OPS, UnknownOp, grad_check
from .layers import (OddModelDim, bigru_sequence, bigru_step, conv_block_forward,
                     multi_head_attention, positional_encoding, scaled_dot_attention,
                     transformer_encoder)
from .model import ConfigShapeMismatch, ModelConfig, crtnet_forward, init_params, tiny_config
from .train import EmptyDataset, LabelOutOfRange, TrainConfig, train

__all__ = ["OPS", "ConfigShapeMismatch", "EmptyDataset", "LabelOutOfRange", "ModelConfig",
           "OddModelDim", "Tensor", "TrainConfig", "UnknownOp", "bigru_sequence", "bigru_step",
           "conv_block_forward", "crtnet_forward", "grad_check", "init_params", "load_checkpoint",
           "multi_head_attention", "positional_encoding", "save_checkpoint",
           "scaled_dot_attention", "tiny_config", "train", "transformer_encoder"]
