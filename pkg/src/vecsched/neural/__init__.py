"""Minimal dense-tensor layer with reverse-mode differentiation, plus the
offloading policy network built on it (multi-head graph attention encoder,
bidirectional GRU sequence encoder, attentional GRU decoder, actor softmax
head, critic value head)."""

from .autodiff import Tape, Tensor, no_recording
from .params import BlockSpec, ParameterRegistry, init_params, load_params, save_params
from .policy import PolicyConfig, SubtaskState

__all__ = [
    "Tape",
    "Tensor",
    "no_recording",
    "BlockSpec",
    "ParameterRegistry",
    "init_params",
    "load_params",
    "save_params",
    "PolicyConfig",
    "SubtaskState",
]
