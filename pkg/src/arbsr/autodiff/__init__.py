from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import AdamState, adam_step, clip_grad_norm, global_norm
from .tensor import (
    MAG_FLOOR,
    NonFiniteError,
    Tensor,
    abs_,
    add,
    as_tensor,
    clamp_min,
    concat,
    conv1d,
    dense,
    dft_magnitude,
    div,
    frame,
    frobenius_norm,
    l1_loss,
    log,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    slice_,
    sqrt,
    square,
    sub,
    sum_,
    take_rows,
    transpose,
)
