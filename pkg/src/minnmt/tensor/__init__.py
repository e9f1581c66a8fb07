"""Dense tensors, a tape-based reverse-mode autodiff engine, and a buffer-sharing planner."""

from .autodiff import backward
from .ops import (
    OPS,
    add,
    add_bias,
    add_n,
    apply,
    attention_scores,
    column_slice,
    concat,
    dropout,
    embedding,
    exp,
    log_softmax,
    matmul,
    mul,
    nll_pick,
    pointwise,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    sub,
    sum_squares,
    tanh,
    total,
    weighted_sum,
    where,
)
from .sharing import (
    ArenaStats,
    PlanMismatchError,
    RunResult,
    SharingPlan,
    identity_plan,
    liveness,
    plan_buffer_sharing,
    run_with_plan,
)
from .tape import DimensionError, Node, Tape, Tensor
from ..kernels import NonFiniteError

__all__ = [
    "ArenaStats", "DimensionError", "Node", "NonFiniteError", "OPS", "PlanMismatchError",
    "RunResult", "SharingPlan", "Tape", "Tensor", "add", "add_bias", "add_n", "apply",
    "attention_scores", "backward", "column_slice", "concat", "dropout", "embedding", "exp",
    "identity_plan", "liveness", "log_softmax", "matmul", "mul", "nll_pick", "plan_buffer_sharing",
    "pointwise", "reshape", "run_with_plan", "scale", "sigmoid", "softmax", "stack", "sub",
    "sum_squares", "tanh", "total", "weighted_sum", "where",
]
