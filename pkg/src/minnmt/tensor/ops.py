"""Differentiable ops.

Each op is described by an :class:`OpDef`: a shape rule, a forward kernel
that writes into a preallocated buffer, a backward rule, and the list of
values the backward rule reads.  That last list is what the sharing
planner uses to extend buffer lifetimes into the backward pass, and the
executor hands the backward rule *only* those values, so a rule that reads
something it did not declare fails loudly instead of silently reading a
recycled buffer.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import kernels as K
from .tape import DimensionError, Node, Tensor

ALL = "all"


@dataclass(frozen=True)
class OpDef:
    shape: Callable
    forward: Callable
    backward: Callable
    saves_inputs: tuple | str = ()
    saves_output: bool = False

    def saved_input_indices(self, n_inputs):
        if self.saves_inputs == ALL:
            return tuple(range(n_inputs))
        return self.saves_inputs


OPS: dict[str, OpDef] = {}


def _register(name, **kw):
    OPS[name] = OpDef(**kw)


def _same_shape(op):
    def rule(shapes, attrs):
        first = shapes[0]
        for s in shapes[1:]:
            if s != first:
                raise DimensionError(f"{op}: shape mismatch {first} vs {s}")
        return first
    return rule


def _unary_shape(shapes, attrs):
    return shapes[0]


def _matmul_shape(shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise DimensionError(f"matmul: cannot multiply {a} by {b}")
    return (a[0], b[1])


_register(
    "matmul",
    shape=_matmul_shape,
    forward=lambda x, at, out: K.matmul(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [
        g @ x[1].T if need[0] else None,
        x[0].T @ g if need[1] else None,
    ],
    saves_inputs=ALL,
)
_register(
    "add",
    shape=_same_shape("add"),
    forward=lambda x, at, out: K.add(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [g, g],
)
_register(
    "sub",
    shape=_same_shape("sub"),
    forward=lambda x, at, out: K.sub(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [g, -g],
)
_register(
    "mul",
    shape=_same_shape("mul"),
    forward=lambda x, at, out: K.mul(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [
        g * x[1] if need[0] else None,
        g * x[0] if need[1] else None,
    ],
    saves_inputs=ALL,
)
_register(
    "scale",
    shape=_unary_shape,
    forward=lambda x, at, out: K.scale(x[0], at["factor"], out),
    backward=lambda g, x, y, at, need: [g * at["factor"]],
)
_register(
    "sigmoid",
    shape=_unary_shape,
    forward=lambda x, at, out: K.sigmoid(x[0], out),
    backward=lambda g, x, y, at, need: [g * y * (1.0 - y)],
    saves_output=True,
)
_register(
    "tanh",
    shape=_unary_shape,
    forward=lambda x, at, out: K.tanh(x[0], out),
    backward=lambda g, x, y, at, need: [g * (1.0 - y * y)],
    saves_output=True,
)
_register(
    "exp",
    shape=_unary_shape,
    forward=lambda x, at, out: K.exp(x[0], out),
    backward=lambda g, x, y, at, need: [g * y],
    saves_output=True,
)


def _bias_shape(shapes, attrs):
    x, b = shapes
    if len(x) != 2 or b != (x[1],):
        raise DimensionError(f"add_bias: bias {b} does not match rows {x}")
    return x


_register(
    "add_bias",
    shape=_bias_shape,
    forward=lambda x, at, out: K.add_bias(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [g, g.sum(axis=0) if need[1] else None],
)


def _concat_shape(shapes, attrs):
    lead = shapes[0][:-1]
    for s in shapes:
        if s[:-1] != lead:
            raise DimensionError(f"concat: leading dims differ in {shapes}")
    return lead + (sum(s[-1] for s in shapes),)


def _concat_backward(g, x, y, at, need):
    grads, lo = [], 0
    for width in at["widths"]:
        grads.append(g[..., lo:lo + width])
        lo += width
    return grads


_register(
    "concat",
    shape=_concat_shape,
    forward=lambda x, at, out: K.concat(x, out),
    backward=_concat_backward,
)


def _slice_shape(shapes, attrs):
    (s,) = shapes
    lo, hi = attrs["lo"], attrs["hi"]
    if not 0 <= lo < hi <= s[-1]:
        raise DimensionError(f"column slice [{lo}:{hi}] out of range for {s}")
    return s[:-1] + (hi - lo,)


def _slice_backward(g, x, y, at, need):
    gx = np.zeros(at["in_shape"], dtype=g.dtype)
    gx[..., at["lo"]:at["hi"]] = g
    return [gx]


_register(
    "slice",
    shape=_slice_shape,
    forward=lambda x, at, out: K.column_slice(x[0], at["lo"], at["hi"], out),
    backward=_slice_backward,
)
_register(
    "total",
    shape=lambda shapes, attrs: (),
    forward=lambda x, at, out: K.total(x[0], out),
    backward=lambda g, x, y, at, need: [np.full(at["in_shape"], g, dtype=g.dtype)],
)


def _embedding_shape(shapes, attrs):
    (t,) = shapes
    if len(t) != 2:
        raise DimensionError(f"embedding table must be 2-D, got {t}")
    ids = attrs["ids"]
    if ids.size and (ids.min() < 0 or ids.max() >= t[0]):
        raise IndexError(f"embedding id out of range for table of {t[0]} rows")
    return tuple(ids.shape) + (t[1],)


def _embedding_backward(g, x, y, at, need):
    gt = np.zeros(at["in_shape"], dtype=g.dtype)
    np.add.at(gt, at["ids"], g)
    return [gt]


_register(
    "embedding",
    shape=_embedding_shape,
    forward=lambda x, at, out: K.embedding(x[0], at["ids"], out),
    backward=_embedding_backward,
)


def _where_shape(shapes, attrs):
    a, b = shapes
    if a != b:
        raise DimensionError(f"where: shape mismatch {a} vs {b}")
    np.broadcast_shapes(attrs["mask"].shape, a)
    return a


_register(
    "where",
    shape=_where_shape,
    forward=lambda x, at, out: K.where(at["mask"], x[0], x[1], out),
    backward=lambda g, x, y, at, need: [
        np.where(at["mask"], g, 0.0) if need[0] else None,
        np.where(at["mask"], 0.0, g) if need[1] else None,
    ],
)
_register(
    "dropout",
    shape=_unary_shape,
    forward=lambda x, at, out: K.mul(x[0], at["mask"], out),
    backward=lambda g, x, y, at, need: [g * at["mask"]],
)


def _rows_shape(shapes, attrs):
    (s,) = shapes
    if len(s) != 2:
        raise DimensionError(f"expected a 2-D [rows, n] tensor, got {s}")
    return s


_register(
    "log_softmax",
    shape=_rows_shape,
    forward=lambda x, at, out: K.log_softmax_rows(x[0], out),
    backward=lambda g, x, y, at, need: [g - np.exp(y) * g.sum(axis=-1, keepdims=True)],
    saves_output=True,
)


def _softmax_shape(shapes, attrs):
    s = _rows_shape(shapes, attrs)
    mask = attrs.get("mask")
    if mask is not None and mask.shape != s:
        raise DimensionError(f"softmax: mask {mask.shape} does not match {s}")
    return s


_register(
    "softmax",
    shape=_softmax_shape,
    forward=lambda x, at, out: K.masked_softmax_rows(x[0], at.get("mask"), out),
    backward=lambda g, x, y, at, need: [y * (g - (g * y).sum(axis=-1, keepdims=True))],
    saves_output=True,
)


def _scores_shape(shapes, attrs):
    q, m = shapes
    if len(q) != 2 or len(m) != 3 or m[0] != q[0] or m[2] != q[1]:
        raise DimensionError(f"attention scores: query {q} vs memory {m}")
    return (m[0], m[1])


_register(
    "attention_scores",
    shape=_scores_shape,
    forward=lambda x, at, out: K.attention_scores(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [
        np.einsum("bs,bsr->br", g, x[1]) if need[0] else None,
        g[:, :, None] * x[0][:, None, :] if need[1] else None,
    ],
    saves_inputs=ALL,
)


def _wsum_shape(shapes, attrs):
    w, m = shapes
    if len(w) != 2 or len(m) != 3 or m[:2] != w:
        raise DimensionError(f"weighted sum: weights {w} vs memory {m}")
    return (m[0], m[2])


_register(
    "weighted_sum",
    shape=_wsum_shape,
    forward=lambda x, at, out: K.weighted_sum(x[0], x[1], out),
    backward=lambda g, x, y, at, need: [
        (x[1] * g[:, None, :]).sum(axis=-1) if need[0] else None,
        x[0][:, :, None] * g[:, None, :] if need[1] else None,
    ],
    saves_inputs=ALL,
)


def _stack_shape(shapes, attrs):
    first = shapes[0]
    if len(first) != 2 or any(s != first for s in shapes):
        raise DimensionError(f"stack: expected equal [B, r] shapes, got {shapes}")
    return (first[0], len(shapes), first[1])


_register(
    "stack",
    shape=_stack_shape,
    forward=lambda x, at, out: K.stack_steps(x, out),
    backward=lambda g, x, y, at, need: [g[:, s] for s in range(g.shape[1])],
)


def _nll_shape(shapes, attrs):
    (s,) = shapes
    if len(s) != 2 or attrs["targets"].shape != (s[0],) or attrs["weights"].shape != (s[0],):
        raise DimensionError(f"nll_pick: targets/weights do not match {s}")
    return ()


def _nll_backward(g, x, y, at, need):
    gx = np.zeros(at["in_shape"], dtype=g.dtype)
    rows = np.arange(gx.shape[0])
    gx[rows, at["targets"]] = -at["weights"] * g
    return [gx]


_register(
    "nll_pick",
    shape=_nll_shape,
    forward=lambda x, at, out: K.nll_pick(x[0], at["targets"], at["weights"], out),
    backward=_nll_backward,
)
_register(
    "add_n",
    shape=_same_shape("add_n"),
    forward=lambda x, at, out: K.add_n(x, out),
    backward=lambda g, x, y, at, need: [g] * len(x),
)


def apply(op, inputs, **attrs):
    """Apply ``op`` to tensors; record it when any input lives on a tape."""
    opdef = OPS[op]
    inputs = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64)) for t in inputs]
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs belong to different tapes")
            tape = t.tape
    if tape is not None:
        inputs = [t if t.tape is tape else tape.leaf(t.data, requires_grad=False) for t in inputs]
    shapes = [t.shape for t in inputs]
    shape = tuple(opdef.shape(shapes, attrs))
    if op in ("slice", "total", "embedding", "nll_pick"):
        attrs["in_shape"] = shapes[0]
    if op == "concat":
        attrs["widths"] = tuple(s[-1] for s in shapes)

    value = None
    if tape is None or tape.eager:
        dtype = tape.dtype if tape is not None else np.result_type(*[t.data for t in inputs])
        value = np.empty(shape, dtype=dtype)
        opdef.forward([t.data for t in inputs], attrs, value)
        K.check_finite(value, op)
    if tape is None:
        return Tensor(value)
    node = Node(op, tuple(t.node for t in inputs), shape, attrs,
                requires_grad=any(tape.nodes[t.node].requires_grad for t in inputs))
    idx = tape._append(node, value)
    return Tensor(value, tape=tape, node=idx, shape=shape)


def matmul(a, b):
    return apply("matmul", [a, b])


def add(a, b):
    return apply("add", [a, b])


def sub(a, b):
    return apply("sub", [a, b])


def mul(a, b):
    return apply("mul", [a, b])


def scale(a, factor):
    return apply("scale", [a], factor=float(factor))


def sigmoid(x):
    return apply("sigmoid", [x])


def tanh(x):
    return apply("tanh", [x])


def exp(x):
    return apply("exp", [x])


_POINTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "exp": exp}


def pointwise(kind, *operands, factor=None):
    """Dispatch an elementwise op by name (``scale`` takes ``factor``)."""
    if kind == "scale":
        return scale(operands[0], factor)
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}") from None
    return fn(*operands)


def add_bias(x, bias):
    return apply("add_bias", [x, bias])


def concat(tensors):
    return apply("concat", list(tensors))


def column_slice(x, lo, hi):
    return apply("slice", [x], lo=int(lo), hi=int(hi))


def total(x):
    return apply("total", [x])


def embedding(table, ids):
    return apply("embedding", [table], ids=np.asarray(ids, dtype=np.int64))


def where(mask, a, b):
    return apply("where", [a, b], mask=np.asarray(mask, dtype=bool))


def dropout(x, rate, rng):
    keep = rng.random(x.shape) >= rate
    return apply("dropout", [x], mask=keep / (1.0 - rate))


def log_softmax(x):
    return apply("log_softmax", [x])


def softmax(x, mask=None):
    """Masked, max-stabilised softmax over the last axis of a 1-D or 2-D tensor."""
    if len(x.shape) == 1:
        rows = reshape_rows(x)
        m = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
        out = apply("softmax", [rows], mask=m)
        return _flatten_row(out)
    m = None if mask is None else np.asarray(mask, dtype=bool)
    return apply("softmax", [x], mask=m)


def attention_scores(query, memory):
    return apply("attention_scores", [query, memory])


def weighted_sum(weights, memory):
    return apply("weighted_sum", [weights, memory])


def stack(tensors):
    return apply("stack", list(tensors))


def nll_pick(logp, targets, weights):
    return apply("nll_pick", [logp],
                 targets=np.asarray(targets, dtype=np.int64),
                 weights=np.asarray(weights, dtype=np.float64))


def add_n(tensors):
    return apply("add_n", list(tensors))


def sum_squares(x):
    return total(mul(x, x))


def _reshape_shape(shapes, attrs):
    if int(np.prod(attrs["to"])) != int(np.prod(shapes[0])):
        raise DimensionError(f"cannot reshape {shapes[0]} to {attrs['to']}")
    return attrs["to"]


_register(
    "reshape",
    shape=_reshape_shape,
    forward=lambda x, at, out: np.copyto(out, x[0].reshape(out.shape)),
    backward=lambda g, x, y, at, need: [g.reshape(at["in_shape"])],
)


def reshape(x, shape):
    return apply("reshape", [x], to=tuple(shape), in_shape=x.shape)


def reshape_rows(x):
    return reshape(x, (1,) + x.shape)


def _flatten_row(x):
    return reshape(x, x.shape[1:])
