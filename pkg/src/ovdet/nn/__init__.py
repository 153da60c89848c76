from ovdet.nn.tensor import (
    Tensor,
    concat,
    gelu,
    l2_normalize,
    layer_norm,
    log_sigmoid,
    logsumexp,
    maximum,
    minimum,
    no_grad,
    relu,
    sigmoid,
    softmax,
    softplus,
    stack,
)
from ovdet.nn.params import ParamStore
from ovdet.nn.optim import (
    AdamState,
    OptimizerConfig,
    adam_step,
    clip_by_global_norm,
    cosine_lr,
    global_norm,
    per_example_clip,
    sgd_step,
)
from ovdet.nn.gradcheck import gradcheck, numerical_gradient
from ovdet.nn.layers import multi_head_attention

__all__ = [
    "AdamState",
    "OptimizerConfig",
    "ParamStore",
    "Tensor",
    "adam_step",
    "clip_by_global_norm",
    "concat",
    "cosine_lr",
    "gelu",
    "global_norm",
    "gradcheck",
    "l2_normalize",
    "layer_norm",
    "log_sigmoid",
    "logsumexp",
    "maximum",
    "minimum",
    "multi_head_attention",
    "no_grad",
    "numerical_gradient",
    "per_example_clip",
    "relu",
    "sgd_step",
    "sigmoid",
    "softmax",
    "softplus",
    "stack",
]
