"""Naive float64 executor for primitive graphs, used as a correctness oracle.

Every output element of a convolution is the exactly rounded sum
(``math.fsum``) of its k*k*c_in_per_group products. Summation order therefore
cannot leak into comparisons: a group conv with g=1 and a full conv with the
same weights give bit-identical results, as do a group conv with
g = c_in = c_out and a depthwise conv.

Weight layout for every conv node is ``[k][k][c_in_per_group][c_out]``.

Random values come from splitmix64: the state advances by 0x9E3779B97F4A7C15,
the output is mixed with the two multiply/xor-shift rounds
(0xBF58476D1CE4E5B9, 0x94D049BB133111EB), the top 53 bits form a uniform
u in [0, 1), and the emitted value is 2u - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_ir import GRAPH_INPUT, OpKind, PrimitiveGraph, PrimitiveOp, TensorShape, count_params
from .errors import ValidationError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DenseTensor:
    shape: TensorShape
    data: np.ndarray  # (h, w, c) float64, row-major

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).reshape(self.shape.h, self.shape.w, self.shape.c)
        if not np.all(np.isfinite(data)):
            raise ValidationError("tensor values must be finite")
        object.__setattr__(self, "data", data)

    def flat(self):
        return self.data.ravel()


def splitmix64(state):
    """One splitmix64 step: returns (new_state, 64-bit output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def random_values(n, seed):
    state = seed & _MASK64
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        state, z = splitmix64(state)
        out[i] = 2.0 * ((z >> 11) * 2.0**-53) - 1.0
    return out


def gen_random_tensor(shape: TensorShape, seed: int) -> DenseTensor:
    return DenseTensor(shape, random_values(shape.numel, seed))


def weight_shape(op: PrimitiveOp):
    return (op.k, op.k, op.in_shape.c // op.groups, op.out_shape.c)


def random_weights(graph: PrimitiveGraph, seed: int) -> dict:
    """Seeded weights for every conv node; node ``i`` uses seed ``seed + i``."""
    weights = {}
    for i, node in enumerate(graph.nodes):
        if node.op.kind.is_conv:
            weights[i] = random_values(count_params(node.op), seed + i).reshape(weight_shape(node.op))
    return weights


def _pad(x, k):
    r = k // 2
    return np.pad(x, ((r, r), (r, r), (0, 0)))


def _conv(op: PrimitiveOp, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k, s, g = op.k, op.stride, op.groups
    cin_g = op.in_shape.c // g
    cout_g = op.out_shape.c // g
    out_shape = op.out_shape
    xp = _pad(x, k)
    out = np.empty((out_shape.h, out_shape.w, out_shape.c))
    for y in range(out_shape.h):
        for xx in range(out_shape.w):
            window = xp[y * s:y * s + k, xx * s:xx * s + k, :]
            for o in range(out_shape.c):
                grp = o // cout_g
                patch = window[:, :, grp * cin_g:(grp + 1) * cin_g]
                out[y, xx, o] = math.fsum((patch * w[:, :, :, o]).ravel())
    return out


def exec_op(op: PrimitiveOp, inputs, weights=None) -> DenseTensor:
    """Evaluate one op on its input tensor(s)."""
    if isinstance(inputs, DenseTensor):
        inputs = [inputs]
    inputs = list(inputs)
    if len(inputs) != op.n_inputs:
        raise ValidationError(f"{op.kind.value} takes {op.n_inputs} inputs, got {len(inputs)}")
    for t, want in zip(inputs, op.input_shapes()):
        if t.shape != want:
            raise ValidationError(f"{op.kind.value}: input shape {t.shape} != {want}")
    kind = op.kind
    if kind.is_conv:
        if weights is None:
            raise ValidationError(f"{kind.value} needs weights")
        w = np.asarray(weights, dtype=np.float64)
        if w.size != count_params(op):
            raise ValidationError(f"{kind.value}: {w.size} weights, expected {count_params(op)}")
        data = _conv(op, inputs[0].data, w.reshape(weight_shape(op)))
    elif kind is OpKind.SLICE:
        start, stop = op.slice_range
        data = inputs[0].data[:, :, start:stop]
    elif kind is OpKind.CONCAT:
        data = np.concatenate([t.data for t in inputs], axis=2)
    elif kind is OpKind.ADD:
        data = inputs[0].data + inputs[1].data
    else:  # pragma: no cover - OpKind is closed
        raise ValidationError(f"unsupported op {kind}")
    return DenseTensor(op.out_shape, data)


def exec_graph(graph: PrimitiveGraph, x: DenseTensor, weights: dict) -> DenseTensor:
    if x.shape != graph.input_shape:
        raise ValidationError(f"graph input shape {graph.input_shape} != tensor shape {x.shape}")
    values = {GRAPH_INPUT: x}
    for i, node in enumerate(graph.nodes):
        args = [values[src] for src in node.inputs]
        values[i] = exec_op(node.op, args, weights.get(i))
    return values[len(graph.nodes) - 1]


def partition_gc_weights(op: PrimitiveOp, w, decomposed: PrimitiveGraph) -> dict:
    """Map direct group-conv weights onto the branch convs of ``decompose_gc(op)``.

    Branch ``i`` owns output channels ``[i*q, (i+1)*q)`` of the direct kernel.
    """
    w = np.asarray(w, dtype=np.float64).reshape(weight_shape(op))
    q = op.out_shape.c // op.groups
    out = {}
    branch = 0
    for i, node in enumerate(decomposed.nodes):
        if node.op.kind.is_conv:
            out[i] = w[:, :, :, branch * q:(branch + 1) * q].copy()
            branch += 1
    return out
