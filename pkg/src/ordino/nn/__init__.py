from .params import Parameter, ParameterStore, load_checkpoint, save_checkpoint
from .layers import (
    GruLayerConfig,
    attention_backward,
    attention_forward,
    dropout_backward,
    dropout_forward,
    embedding_backward,
    embedding_forward,
    gru_backward,
    gru_forward,
    gru_init,
    linear_backward,
    linear_forward,
    log_softmax,
    sigmoid,
    softmax,
)
from .optim import Adam, clip_global_norm
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Adam",
    "GradCheckReport",
    "GruLayerConfig",
    "Parameter",
    "ParameterStore",
    "attention_backward",
    "attention_forward",
    "clip_global_norm",
    "dropout_backward",
    "dropout_forward",
    "embedding_backward",
    "embedding_forward",
    "grad_check",
    "gru_backward",
    "gru_forward",
    "gru_init",
    "linear_backward",
    "linear_forward",
    "load_checkpoint",
    "log_softmax",
    "save_checkpoint",
    "sigmoid",
    "softmax",
]
