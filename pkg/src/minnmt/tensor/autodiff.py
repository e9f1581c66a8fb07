"""Reverse-mode differentiation over a recorded tape.

Eager backward and planned (arena-backed) execution share one reverse
pass, so the two paths perform the same floating-point operations in the
same order and agree bit for bit.
"""

import numpy as np

from .. import kernels as K
from .ops import OPS
from .tape import DimensionError


def backward_nodes(tape, loss):
    """Nodes visited by the reverse pass: ancestors of ``loss`` that require grad."""
    nodes = tape.nodes
    visit = [False] * len(nodes)
    if loss is None:
        return visit
    reach = [False] * len(nodes)
    reach[loss] = True
    for i in range(loss, -1, -1):
        if not reach[i]:
            continue
        if nodes[i].requires_grad:
            visit[i] = True
        for k in nodes[i].inputs:
            reach[k] = True
    return visit


def forward_pass(tape, leaf_values, alloc, trace=None):
    values = [None] * len(tape.nodes)
    for i, node in enumerate(tape.nodes):
        if node.is_leaf:
            values[i] = leaf_values[i]
            continue
        ins = [values[k] for k in node.inputs]
        if trace is not None:
            for k in node.inputs:
                trace(("a", k), i)
        out = alloc(("a", i), node.shape)
        if trace is not None:
            trace(("a", i), i)
        OPS[node.op].forward(ins, node.attrs, out)
        K.check_finite(out, node.op)
        values[i] = out
    return values


def reverse_pass(tape, values, loss, param_shapes, alloc, trace=None):
    """Propagate d(loss)/d(node) backwards; returns gradients of named leaves.

    ``alloc`` supplies the buffer for each intermediate gradient; leaf
    gradients are always private arrays because they outlive the pass.
    """
    nodes = tape.nodes
    n = len(nodes)
    if nodes[loss].shape not in ((), (1,)):
        raise DimensionError(f"loss must be scalar, got shape {nodes[loss].shape}")
    visit = backward_nodes(tape, loss)
    grads = {}
    leaf_grads = {}

    def when(i):
        return 2 * n - 1 - i

    g0 = alloc(("g", loss), nodes[loss].shape)
    g0[...] = 1.0
    grads[loss] = g0
    if trace is not None:
        trace(("g", loss), when(loss))

    for i in range(loss, -1, -1):
        if not visit[i]:
            continue
        node = nodes[i]
        if node.is_leaf:
            continue
        t = when(i)
        g = grads.pop(i)
        if trace is not None:
            trace(("g", i), t)
        opdef = OPS[node.op]
        saved = set(opdef.saved_input_indices(len(node.inputs)))
        ins = []
        for pos, k in enumerate(node.inputs):
            if pos in saved:
                ins.append(values[k])
                if trace is not None:
                    trace(("a", k), t)
            else:
                ins.append(None)
        out = None
        if opdef.saves_output:
            out = values[i]
            if trace is not None:
                trace(("a", i), t)
        need = tuple(visit[k] for k in node.inputs)
        contribs = opdef.backward(g, ins, out, node.attrs, need)
        for k, c in zip(node.inputs, contribs):
            if c is None or not visit[k]:
                continue
            target = nodes[k]
            if target.is_leaf:
                buf = leaf_grads.get(target.name)
                if buf is None:
                    leaf_grads[target.name] = np.array(c, dtype=g.dtype, copy=True).reshape(target.shape)
                else:
                    np.add(buf, c, out=buf)
                continue
            buf = grads.get(k)
            if buf is None:
                buf = alloc(("g", k), target.shape)
                np.copyto(buf, c)
                grads[k] = buf
            else:
                np.add(buf, c, out=buf)
            if trace is not None:
                trace(("g", k), t)

    result = {}
    for name, shape in param_shapes.items():
        if name in leaf_grads:
            K.check_finite(leaf_grads[name], f"gradient of {name}")
            result[name] = leaf_grads[name]
        else:
            result[name] = np.zeros(shape, dtype=tape.dtype)
    return result


def _private(bid, shape, dtype):
    return np.empty(shape, dtype=dtype)


def backward(tape, loss=None, params=None):
    """Gradients of a scalar loss with respect to named parameters.

    ``params`` maps names to arrays (or shapes); parameters the loss never
    touched get zero gradients.  Defaults to every named leaf on the tape.
    """
    if not tape.eager:
        raise RuntimeError("deferred tapes are executed with run_with_plan")
    if loss is None:
        loss = tape.loss
    elif not isinstance(loss, int):
        loss = loss.node
    if loss is None:
        raise ValueError("no loss node given or marked")
    shapes = _param_shapes(tape, params)
    return reverse_pass(tape, tape.values, loss, shapes,
                        lambda bid, shape: _private(bid, shape, tape.dtype))


def _param_shapes(tape, params):
    if params is None:
        return {tape.nodes[i].name: tape.nodes[i].shape for i in tape.param_nodes().values()}
    shapes = {}
    for name, p in dict(params).items():
        shapes[name] = tuple(p) if isinstance(p, tuple) else tuple(np.shape(p))
    return shapes
