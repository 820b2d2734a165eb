from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    attn_pool,
    attn_scores,
    bilinear_attention,
    backward,
    concat,
    current_tape,
    elementwise_add,
    elementwise_mul,
    embedding,
    getitem,
    linear,
    log,
    log_softmax,
    lstm_sequence,
    lstm_step,
    mean,
    mul,
    no_grad,
    reshape,
    set_check_finite,
    sigmoid,
    softmax,
    square,
    sub,
    take_along,
    tanh,
    tanh_act,
    tanh_linear,
    fused_enabled,
    composed_ops,
    unbind,
    where,
)
from .tensor import sum as tsum
from .params import Adam, ParameterStore, load_checkpoint, save_checkpoint, sgd_adam_step
from .gradcheck import grad_check, relative_error
