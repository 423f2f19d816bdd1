"""Registered differentiable kernels: dense matrix ops, elementwise
activations, slicing/concatenation, and squared-norm reductions.

Every backward and tangent rule is written in terms of these same kernels,
which is what makes nested differentiation (gradients of input-gradients,
JVPs of gradients) work without extra machinery.
"""
from __future__ import annotations

import numpy as np

from .engine import (
    Box,
    NonDifferentiableError,
    defjvp,
    defvjp,
    notrace_primitive,
    primitive,
    raw_shape,
)

__all__ = [
    "add", "sub", "neg", "mul", "div", "matmul", "transpose", "reshape",
    "concatenate", "take", "untake", "einsum", "asum", "tanh", "sigmoid",
    "relu", "step", "sin", "cos", "exp", "log", "sqrt", "sumsq", "mean",
    "dot_rows", "norm_rows",
]


def _sum_tangents(parts):
    total = None
    for p in parts:
        if p is None:
            continue
        total = p if total is None else add(total, p)
    return total


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

add = primitive(np.add, "add")
sub = primitive(np.subtract, "sub")
neg = primitive(np.negative, "neg")
mul = primitive(np.multiply, "mul")
div = primitive(np.divide, "div")


def _unbroadcast(g, target_shape):
    """Reduce a broadcasted cotangent back to ``target_shape``."""
    g_shape = raw_shape(g)
    if g_shape == tuple(target_shape):
        return g
    extra = len(g_shape) - len(target_shape)
    if extra > 0:
        g = asum(g, axis=tuple(range(extra)))
        g_shape = g_shape[extra:]
    keep = tuple(i for i, (gs, ts) in enumerate(zip(g_shape, target_shape)) if ts == 1 and gs != 1)
    if keep:
        g = asum(g, axis=keep, keepdims=True)
    return g


defvjp(add,
       a0=lambda g, ans, a, b: _unbroadcast(g, raw_shape(a)),
       a1=lambda g, ans, a, b: _unbroadcast(g, raw_shape(b)))
defjvp(add, lambda t, ans, a, b: _sum_tangents(t))

defvjp(sub,
       a0=lambda g, ans, a, b: _unbroadcast(g, raw_shape(a)),
       a1=lambda g, ans, a, b: _unbroadcast(neg(g), raw_shape(b)))
defjvp(sub, lambda t, ans, a, b: _sum_tangents([t[0], None if t[1] is None else neg(t[1])]))

defvjp(neg, a0=lambda g, ans, a: neg(g))
defjvp(neg, lambda t, ans, a: neg(t[0]))

defvjp(mul,
       a0=lambda g, ans, a, b: _unbroadcast(mul(g, b), raw_shape(a)),
       a1=lambda g, ans, a, b: _unbroadcast(mul(g, a), raw_shape(b)))
defjvp(mul, lambda t, ans, a, b: _sum_tangents([
    None if t[0] is None else mul(t[0], b),
    None if t[1] is None else mul(a, t[1])]))

defvjp(div,
       a0=lambda g, ans, a, b: _unbroadcast(div(g, b), raw_shape(a)),
       a1=lambda g, ans, a, b: _unbroadcast(neg(div(mul(g, a), mul(b, b))), raw_shape(b)))
defjvp(div, lambda t, ans, a, b: _sum_tangents([
    None if t[0] is None else div(t[0], b),
    None if t[1] is None else neg(div(mul(t[1], ans), b))]))


# ---------------------------------------------------------------------------
# linear algebra / structure
# ---------------------------------------------------------------------------

def _matmul_raw(a, b):
    return np.matmul(a, b)


matmul = primitive(_matmul_raw, "matmul")
defvjp(matmul,
       a0=lambda g, ans, a, b: matmul(g, transpose(b)),
       a1=lambda g, ans, a, b: matmul(transpose(a), g))
defjvp(matmul, lambda t, ans, a, b: _sum_tangents([
    None if t[0] is None else matmul(t[0], b),
    None if t[1] is None else matmul(a, t[1])]))


def _transpose_raw(a, axes=None):
    return np.transpose(a, axes)


transpose = primitive(_transpose_raw, "transpose")


def _transpose_vjp(g, ans, a, axes=None):
    if axes is None:
        return transpose(g)
    inverse = np.argsort(axes)
    return transpose(g, tuple(int(i) for i in inverse))


defvjp(transpose, a0=_transpose_vjp)
defjvp(transpose, lambda t, ans, a, axes=None: transpose(t[0], axes))


def _reshape_raw(a, shape):
    return np.reshape(a, shape)


reshape = primitive(_reshape_raw, "reshape")
defvjp(reshape, a0=lambda g, ans, a, shape: reshape(g, raw_shape(a)))
defjvp(reshape, lambda t, ans, a, shape: reshape(t[0], shape))


def _concatenate_raw(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis)


concatenate = primitive(_concatenate_raw, "concatenate")


def _concat_vjp_rule(argnum):
    def rule(g, ans, *arrays, axis=0):
        start = sum(raw_shape(a)[axis] for a in arrays[:argnum])
        stop = start + raw_shape(arrays[argnum])[axis]
        idx = [slice(None)] * len(raw_shape(ans))
        idx[axis] = slice(start, stop)
        return take(g, tuple(idx))
    return rule


def _register_concat(max_args=64):
    defvjp(concatenate, **{f"a{i}": _concat_vjp_rule(i) for i in range(max_args)})


_register_concat()


def _concat_jvp(tangents, ans, *arrays, axis=0):
    parts = [np.zeros(raw_shape(a)) if t is None else t
             for t, a in zip(tangents, arrays)]
    return concatenate(*parts, axis=axis)


defjvp(concatenate, _concat_jvp)


def _take_raw(a, idx):
    return a[idx]


take = primitive(_take_raw, "take")


def _untake_raw(g, idx, shape):
    out = np.zeros(shape)
    np.add.at(out, idx, g)
    return out


untake = primitive(_untake_raw, "untake")

defvjp(take, a0=lambda g, ans, a, idx: untake(g, idx, raw_shape(a)))
defjvp(take, lambda t, ans, a, idx: take(t[0], idx))
defvjp(untake, a0=lambda g, ans, a, idx, shape: take(g, idx))
defjvp(untake, lambda t, ans, a, idx, shape: untake(t[0], idx, shape))


def _einsum_raw(subs, a, b):
    return np.einsum(subs, a, b)


einsum = primitive(_einsum_raw, "einsum")


def _einsum_parts(subs):
    ins, out = subs.split("->")
    sa, sb = ins.split(",")
    for s in (sa, sb):
        if len(set(s)) != len(s):
            raise NonDifferentiableError(
                f"non-differentiable operation: repeated index in einsum '{subs}'")
    if not (set(sa) <= set(out) | set(sb) and set(sb) <= set(out) | set(sa)):
        raise NonDifferentiableError(
            f"non-differentiable operation: dangling index in einsum '{subs}'")
    return sa, sb, out


def _einsum_vjp_a(g, ans, subs, a, b):
    sa, sb, out = _einsum_parts(subs)
    return einsum(f"{out},{sb}->{sa}", g, b)


def _einsum_vjp_b(g, ans, subs, a, b):
    sa, sb, out = _einsum_parts(subs)
    return einsum(f"{out},{sa}->{sb}", g, a)


defvjp(einsum, a1=_einsum_vjp_a, a2=_einsum_vjp_b)
defjvp(einsum, lambda t, ans, subs, a, b: _sum_tangents([
    None if t[1] is None else einsum(subs, t[1], b),
    None if t[2] is None else einsum(subs, a, t[2])]))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _asum_raw(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


asum = primitive(_asum_raw, "asum")


def _asum_vjp(g, ans, a, axis=None, keepdims=False):
    a_shape = raw_shape(a)
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(a_shape) for ax in axes)
        kd_shape = tuple(1 if i in axes else s for i, s in enumerate(a_shape))
        g = reshape(g, kd_shape)
    return mul(g, np.ones(a_shape))


defvjp(asum, a0=_asum_vjp)
defjvp(asum, lambda t, ans, a, axis=None, keepdims=False: asum(t[0], axis=axis, keepdims=keepdims))


def sumsq(x, axis=None):
    """Squared-norm reduction sum(x*x) over ``axis`` (all axes by default)."""
    return asum(mul(x, x), axis=axis)


def mean(x, axis=None):
    n = np.prod(raw_shape(x)) if axis is None else raw_shape(x)[axis]
    return div(asum(x, axis=axis), np.float64(n))


def dot_rows(a, b):
    """Row-wise dot product of two (B, n) arrays -> (B,)."""
    return asum(mul(a, b), axis=-1)


def norm_rows(x):
    """Row-wise euclidean norm of a (B, n) array -> (B,)."""
    return sqrt(asum(mul(x, x), axis=-1))


# ---------------------------------------------------------------------------
# elementwise activations
# ---------------------------------------------------------------------------

tanh = primitive(np.tanh, "tanh")
defvjp(tanh, a0=lambda g, ans, a: mul(g, sub(np.float64(1.0), mul(ans, ans))))
defjvp(tanh, lambda t, ans, a: mul(t[0], sub(np.float64(1.0), mul(ans, ans))))


def _sigmoid_raw(a):
    return 1.0 / (1.0 + np.exp(-a))


sigmoid = primitive(_sigmoid_raw, "sigmoid")
defvjp(sigmoid, a0=lambda g, ans, a: mul(g, mul(ans, sub(np.float64(1.0), ans))))
defjvp(sigmoid, lambda t, ans, a: mul(t[0], mul(ans, sub(np.float64(1.0), ans))))


def _step_raw(a):
    return (a > 0).astype(np.float64)


step = primitive(_step_raw, "step")
notrace_primitive(step)


def _relu_raw(a):
    return np.maximum(a, 0.0)


relu = primitive(_relu_raw, "relu")
defvjp(relu, a0=lambda g, ans, a: mul(g, step(a)))
defjvp(relu, lambda t, ans, a: mul(t[0], step(a)))

sin = primitive(np.sin, "sin")
cos = primitive(np.cos, "cos")
defvjp(sin, a0=lambda g, ans, a: mul(g, cos(a)))
defjvp(sin, lambda t, ans, a: mul(t[0], cos(a)))
defvjp(cos, a0=lambda g, ans, a: neg(mul(g, sin(a))))
defjvp(cos, lambda t, ans, a: neg(mul(t[0], sin(a))))

exp = primitive(np.exp, "exp")
defvjp(exp, a0=lambda g, ans, a: mul(g, ans))
defjvp(exp, lambda t, ans, a: mul(t[0], ans))

log = primitive(np.log, "log")
defvjp(log, a0=lambda g, ans, a: div(g, a))
defjvp(log, lambda t, ans, a: div(t[0], a))

sqrt = primitive(np.sqrt, "sqrt")
defvjp(sqrt, a0=lambda g, ans, a: div(g, mul(np.float64(2.0), ans)))
defjvp(sqrt, lambda t, ans, a: div(t[0], mul(np.float64(2.0), ans)))


# ---------------------------------------------------------------------------
# operator sugar on boxed values
# ---------------------------------------------------------------------------

Box.__add__ = lambda self, other: add(self, other)
Box.__radd__ = lambda self, other: add(other, self)
Box.__sub__ = lambda self, other: sub(self, other)
Box.__rsub__ = lambda self, other: sub(other, self)
Box.__mul__ = lambda self, other: mul(self, other)
Box.__rmul__ = lambda self, other: mul(other, self)
Box.__truediv__ = lambda self, other: div(self, other)
Box.__rtruediv__ = lambda self, other: div(other, self)
Box.__neg__ = lambda self: neg(self)
Box.__matmul__ = lambda self, other: matmul(self, other)
Box.__rmatmul__ = lambda self, other: matmul(other, self)
Box.__getitem__ = lambda self, idx: take(self, idx)
