"""Liveness-based buffer sharing for recorded tapes.

The timeline has one tick per forward node (tick ``i``) followed by one
tick per node in the reverse pass (tick ``2N - 1 - i``).  A buffer is
identified by ``("a", i)`` for the forward value of node ``i`` and
``("g", i)`` for its gradient.  Its live range is the closed interval
from its first write to its last read, where reads by a backward rule of
a saved activation count.  Buffers with disjoint ranges may share an
arena slot.  Leaf values (parameters, constants) and parameter gradients
are owned by the caller and never planned.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward_nodes, forward_pass, reverse_pass
from .ops import OPS


class PlanMismatchError(ValueError):
    """The plan was built for a different tape."""


@dataclass(frozen=True)
class ArenaStats:
    naive_bytes: int
    shared_bytes: int

    @property
    def ratio(self):
        return self.shared_bytes / self.naive_bytes if self.naive_bytes else 0.0


@dataclass
class SharingPlan:
    assignment: dict = field(default_factory=dict)
    slot_sizes: list = field(default_factory=list)
    buffer_sizes: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    itemsize: int = 8
    signature: tuple = ()

    @property
    def naive_bytes(self):
        return sum(self.buffer_sizes.values()) * self.itemsize

    @property
    def shared_bytes(self):
        return sum(self.slot_sizes) * self.itemsize

    def stats(self):
        return ArenaStats(self.naive_bytes, self.shared_bytes)

    def slot_members(self):
        members = {}
        for bid, slot in self.assignment.items():
            members.setdefault(slot, []).append(bid)
        return members


def liveness(tape):
    """Closed live intervals for every plannable buffer of a tape."""
    nodes = tape.nodes
    n = len(nodes)
    end_of_run = 2 * n
    visit = backward_nodes(tape, tape.loss)

    def bwd(i):
        return 2 * n - 1 - i

    intervals = {}
    for i, node in enumerate(nodes):
        if not node.is_leaf:
            intervals[("a", i)] = [i, i]

    def extend(bid, t):
        iv = intervals.get(bid)
        if iv is not None and t > iv[1]:
            iv[1] = t

    for j, node in enumerate(nodes):
        if node.is_leaf:
            continue
        opdef = OPS[node.op]
        for k in node.inputs:
            extend(("a", k), j)
        if visit[j]:
            for pos in opdef.saved_input_indices(len(node.inputs)):
                extend(("a", node.inputs[pos]), bwd(j))
            if opdef.saves_output:
                extend(("a", j), bwd(j))
    for i in [tape.loss, *tape.outputs]:
        if i is not None:
            extend(("a", i), end_of_run)

    if tape.loss is not None:
        intervals[("g", tape.loss)] = [bwd(tape.loss), bwd(tape.loss)]
        for j in range(tape.loss, -1, -1):
            if not visit[j] or nodes[j].is_leaf:
                continue
            for k in nodes[j].inputs:
                if visit[k] and not nodes[k].is_leaf:
                    bid = ("g", k)
                    if bid not in intervals:
                        intervals[bid] = [bwd(j), bwd(k)]
    return {bid: (s, e) for bid, (s, e) in intervals.items()}


def _buffer_size(tape, bid):
    return max(1, tape.nodes[bid[1]].size)


def plan_buffer_sharing(tape):
    """First-fit assignment of buffers to arena slots over live intervals.

    Buffers are taken in order of first write.  Each goes into the first
    free slot (lowest id) large enough to hold it; failing that, the
    largest free slot is grown; failing that, a new slot is opened.
    """
    intervals = liveness(tape)
    sizes = {bid: _buffer_size(tape, bid) for bid in intervals}
    order = sorted(intervals, key=lambda b: (intervals[b][0], b[0] == "g", b[1]))

    slot_sizes = []
    assignment = {}
    busy = []          # heap of (end, slot)
    free = []          # sorted slot ids
    for bid in order:
        start, end = intervals[bid]
        while busy and busy[0][0] < start:
            _, slot = heapq.heappop(busy)
            free.append(slot)
        free.sort()
        need = sizes[bid]
        chosen = None
        for slot in free:
            if slot_sizes[slot] >= need:
                chosen = slot
                break
        if chosen is None and free:
            chosen = max(free, key=lambda s: (slot_sizes[s], -s))
            slot_sizes[chosen] = need
        if chosen is None:
            chosen = len(slot_sizes)
            slot_sizes.append(need)
        else:
            free.remove(chosen)
        assignment[bid] = chosen
        heapq.heappush(busy, (end, chosen))

    return SharingPlan(assignment, slot_sizes, sizes, intervals,
                       itemsize=tape.dtype.itemsize, signature=tape.signature())


def identity_plan(tape):
    """One private slot per buffer (the unshared baseline)."""
    intervals = liveness(tape)
    sizes = {bid: _buffer_size(tape, bid) for bid in intervals}
    order = sorted(intervals)
    assignment = {bid: slot for slot, bid in enumerate(order)}
    return SharingPlan(assignment, [sizes[b] for b in order], sizes, intervals,
                       itemsize=tape.dtype.itemsize, signature=tape.signature())


@dataclass
class RunResult:
    loss: float | None
    outputs: list
    grads: dict
    stats: ArenaStats


def run_with_plan(tape, plan, inputs=None, trace=None):
    """Execute forward (and backward, when a loss is marked) inside the plan's arena.

    ``inputs`` overrides recorded leaf values by leaf name.  Returned
    outputs and gradients are private copies, safe after the arena is gone.
    """
    if plan.signature != tape.signature():
        raise PlanMismatchError("sharing plan was built for a different tape")
    leaf_values = {}
    inputs = inputs or {}
    for i, node in enumerate(tape.nodes):
        if node.is_leaf:
            value = inputs.get(node.name, tape.values[i]) if node.name else tape.values[i]
            if tuple(np.shape(value)) != node.shape:
                raise PlanMismatchError(f"input {node.name!r} has shape {np.shape(value)}, expected {node.shape}")
            leaf_values[i] = np.asarray(value, dtype=tape.dtype)

    arena = [np.empty(size, dtype=tape.dtype) for size in plan.slot_sizes]

    def alloc(bid, shape):
        try:
            slot = arena[plan.assignment[bid]]
        except KeyError:
            raise PlanMismatchError(f"buffer {bid} has no slot in the plan") from None
        return slot[:int(np.prod(shape, dtype=np.int64))].reshape(shape)

    values = forward_pass(tape, leaf_values, alloc, trace)
    outputs = [values[i].copy() for i in tape.outputs]
    if trace is not None:
        for i in tape.outputs:
            trace(("a", i), 2 * len(tape.nodes))
    loss = None
    grads = {}
    if tape.loss is not None:
        loss = float(values[tape.loss].reshape(-1)[0])
        if trace is not None:
            trace(("a", tape.loss), 2 * len(tape.nodes))
        shapes = {tape.nodes[i].name: tape.nodes[i].shape for i in tape.param_nodes().values()}
        grads = reverse_pass(tape, values, tape.loss, shapes, alloc, trace)
    return RunResult(loss, outputs, grads, plan.stats())
