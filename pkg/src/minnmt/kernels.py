"""Forward numpy kernels shared by the autodiff engine and the inference runtime.

Every kernel writes its result into a caller-provided ``out`` array so the
same arithmetic runs whether buffers are private, drawn from a shared arena,
or allocated by the deployment decoder.  Results for one batch row never
depend on the other rows or on trailing padding:

* ``matmul`` routes single-row products through the two-row GEMM path
  (BLAS uses a different GEMV kernel for one row, which differs in the
  last bits);
* reductions over source positions are accumulated one position at a
  time, so masked (zero) tail positions add exact zeros.

This module must stay importable without the training stack.
"""

import numpy as np


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf."""


def check_finite(out, op):
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def matmul(a, b, out):
    a = np.ascontiguousarray(a)
    if a.shape[0] == 1:
        padded = np.zeros((2, a.shape[1]), dtype=a.dtype)
        padded[0] = a[0]
        out[...] = (padded @ b)[:1]
    else:
        np.matmul(a, b, out=out)
    return out


def add(a, b, out):
    return np.add(a, b, out=out)


def sub(a, b, out):
    return np.subtract(a, b, out=out)


def mul(a, b, out):
    return np.multiply(a, b, out=out)


def scale(a, factor, out):
    return np.multiply(a, factor, out=out)


def sigmoid(x, out):
    # 0.5 * tanh(x/2) + 0.5 never overflows and gives sigmoid(0) == 0.5 exactly
    np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    np.multiply(out, 0.5, out=out)
    np.add(out, 0.5, out=out)
    return out


def tanh(x, out):
    return np.tanh(x, out=out)


def exp(x, out):
    # overflow is reported by the finiteness check, not as a numpy warning
    with np.errstate(over="ignore"):
        return np.exp(x, out=out)


def add_bias(x, bias, out):
    return np.add(x, bias, out=out)


def concat(arrays, out):
    lo = 0
    for arr in arrays:
        hi = lo + arr.shape[-1]
        out[..., lo:hi] = arr
        lo = hi
    return out


def column_slice(x, lo, hi, out):
    out[...] = x[..., lo:hi]
    return out


def embedding(table, ids, out):
    return np.take(table, ids, axis=0, out=out)


def where(mask, a, b, out):
    """``mask`` broadcasts against ``a``; true rows take ``a``."""
    out[...] = np.where(mask, a, b)
    return out


def log_softmax_rows(x, out):
    m = x.max(axis=-1, keepdims=True)
    np.subtract(x, m, out=out)
    lse = np.log(np.exp(out).sum(axis=-1, keepdims=True))
    np.subtract(out, lse, out=out)
    return out


def masked_softmax_rows(x, mask, out):
    """Softmax over the last axis of a 2-D array; masked-out entries are exactly 0.

    ``mask`` is boolean with True marking valid positions (or None).  The
    normaliser is summed position by position so that appending masked
    positions leaves every valid output bit-identical.
    """
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("invalid mask: a row has every position masked")
    shifted = np.where(mask, x, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    np.subtract(shifted, m, out=out)
    np.exp(out, out=out)
    total = out[:, 0].copy()
    for s in range(1, out.shape[1]):
        total += out[:, s]
    np.divide(out, total[:, None], out=out)
    return out


def attention_scores(query, memory, out):
    """Dot scores between query rows [B, r] and memory [B, S, r] -> [B, S]."""
    prod = memory * query[:, None, :]
    np.sum(prod, axis=-1, out=out)
    return out


def weighted_sum(weights, memory, out):
    """Context vectors: sum_s weights[:, s] * memory[:, s] -> [B, r]."""
    np.multiply(memory[:, 0], weights[:, 0:1], out=out)
    for s in range(1, memory.shape[1]):
        out += memory[:, s] * weights[:, s:s + 1]
    return out


def stack_steps(arrays, out):
    for s, arr in enumerate(arrays):
        out[:, s] = arr
    return out


def nll_pick(logp, targets, weights, out):
    picked = logp[np.arange(logp.shape[0]), targets]
    out[...] = -np.sum(weights * picked)
    return out


def add_n(arrays, out):
    out[...] = arrays[0]
    for arr in arrays[1:]:
        out += arr
    return out


def total(x, out):
    out[...] = np.sum(x)
    return out
