"""Dense-array automatic differentiation: reverse-mode parameter gradients,
forward-mode Jacobian-vector products, and their nested compositions."""
from __future__ import annotations

import numpy as np

from .engine import (
    Box,
    JvpBox,
    JvpTrace,
    NonDifferentiableError,
    NumericalOverflowError,
    Tape,
    TapeBox,
    check_finite,
    grad,
    grad_named,
    input_grad,
    jvp,
    make_vjp,
    raw,
    raw_shape,
    value_and_grad,
    value_and_grad_named,
)
from .kernels import (
    add, asum, concatenate, cos, div, dot_rows, einsum, exp, log, matmul,
    mean, mul, neg, norm_rows, relu, reshape, sigmoid, sin, sqrt, step, sub,
    sumsq, take, tanh, transpose, untake,
)

__all__ = [
    "Box", "TapeBox", "JvpBox", "Tape", "JvpTrace",
    "NonDifferentiableError", "NumericalOverflowError",
    "grad", "value_and_grad", "grad_named", "value_and_grad_named",
    "jvp", "input_grad", "make_vjp", "fd_check", "fd_gradient",
    "raw", "raw_shape", "check_finite",
    "add", "sub", "neg", "mul", "div", "matmul", "transpose", "reshape",
    "concatenate", "take", "untake", "einsum", "asum", "tanh", "sigmoid",
    "relu", "step", "sin", "cos", "exp", "log", "sqrt", "sumsq", "mean",
    "dot_rows", "norm_rows",
]


def fd_gradient(scalar_fn, point, h=1e-5):
    """Central-difference gradient of a scalar function, entry by entry."""
    point = np.asarray(point, dtype=np.float64)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    g = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        plus = float(raw(scalar_fn((flat + bump).reshape(point.shape))))
        minus = float(raw(scalar_fn((flat - bump).reshape(point.shape))))
        gflat[i] = (plus - minus) / (2.0 * h)
    return g


def fd_check(scalar_fn, point, h=1e-5):
    """Max relative error between the reverse-mode gradient and central
    finite differences, measured against the largest finite-difference
    gradient entry (floored at 1e-12 so identically-zero gradients report 0)."""
    point = np.asarray(point, dtype=np.float64)
    g = grad(scalar_fn, point)
    g_fd = fd_gradient(scalar_fn, point, h=h)
    scale = max(1e-12, float(np.max(np.abs(g_fd))))
    return float(np.max(np.abs(np.asarray(raw(g)) - g_fd)) / scale)
