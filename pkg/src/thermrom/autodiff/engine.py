"""Trace-based automatic differentiation on dense float64 numpy arrays.

Two trace kinds share one primitive set: a reverse-mode tape (Wengert list,
swept in reverse creation order) and a forward tangent trace for
Jacobian-vector products.  Traces are activated by boxed *data*, not global
state, and carry strictly increasing levels, so reverse-over-reverse and
forward-over-reverse compositions work: the backward rules are themselves
written in terms of registered primitives and get recorded on any enclosing
trace.
"""
from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Box",
    "TapeBox",
    "JvpBox",
    "Tape",
    "JvpTrace",
    "NonDifferentiableError",
    "NumericalOverflowError",
    "primitive",
    "defvjp",
    "defjvp",
    "notrace_primitive",
    "make_vjp",
    "grad",
    "value_and_grad",
    "grad_named",
    "value_and_grad_named",
    "jvp",
    "input_grad",
    "raw",
    "raw_shape",
    "check_finite",
]

_LEVEL_COUNTER = itertools.count()


class NonDifferentiableError(TypeError):
    """A traced value reached an operation outside the registered kernel set."""


class NumericalOverflowError(FloatingPointError):
    """Non-finite value produced while recording or sweeping a tape."""


class _Trace:
    __slots__ = ("level",)

    def __init__(self):
        self.level = next(_LEVEL_COUNTER)


class Tape(_Trace):
    """Reverse-mode context: consumed exactly once by its vjp extraction."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        super().__init__()
        self.nodes = []
        self.consumed = False


class JvpTrace(_Trace):
    """Forward-mode context: tangents ride along with primal values."""

    __slots__ = ()


class Node:
    __slots__ = ("prim", "args", "kwargs", "ans", "parents")

    def __init__(self, prim, args, kwargs, ans, parents):
        self.prim = prim
        self.args = args
        self.kwargs = kwargs
        self.ans = ans
        self.parents = parents  # list of (argnum, Node)


def _leaf_node():
    return Node(None, (), {}, None, ())


class Box:
    """Wrapper carrying a value through an active trace.

    The wrapped value is unboxed *at this trace's level* only; it may itself
    be a box belonging to an enclosing (lower-level) trace.
    """

    __slots__ = ("value", "trace")

    def __init__(self, value, trace):
        self.value = value
        self.trace = trace

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return raw_shape(self)

    @property
    def ndim(self):
        return len(raw_shape(self))

    def __len__(self):
        return raw_shape(self)[0]

    # -- guard against silent escape into raw numpy -----------------------
    def __array__(self, *a, **k):
        raise NonDifferentiableError(
            "non-differentiable operation: traced value passed to raw numpy")

    __array_ufunc__ = None

    def __repr__(self):
        return f"<{type(self).__name__} level={self.trace.level} value={self.value!r}>"


class TapeBox(Box):
    __slots__ = ("node",)

    def __init__(self, value, trace, node):
        super().__init__(value, trace)
        self.node = node


class JvpBox(Box):
    __slots__ = ("tangent",)

    def __init__(self, value, tangent, trace):
        super().__init__(value, trace)
        self.tangent = tangent


def raw(x):
    """Fully unbox a value (all trace levels)."""
    while isinstance(x, Box):
        x = x.value
    return x


def raw_shape(x):
    return np.shape(raw(x))


def _top_trace(args):
    trace = None
    for a in args:
        if isinstance(a, Box):
            t = a.trace
            if trace is None or t.level > trace.level:
                trace = t
    return trace


# ---------------------------------------------------------------------------
# primitive registration
# ---------------------------------------------------------------------------

_VJP_RULES = {}
_JVP_RULES = {}
_NOTRACE = set()


def primitive(raw_fn, name=None):
    """Wrap a raw numpy function so boxed arguments dispatch to trace rules."""
    prim_name = name or raw_fn.__name__

    def wrapped(*args, **kwargs):
        trace = _top_trace(args)
        if trace is None:
            return raw_fn(*args, **kwargs)
        if prim_name in _NOTRACE:
            vals = tuple(a.value if isinstance(a, Box) and a.trace is trace else a
                         for a in args)
            return wrapped(*vals, **kwargs)
        if isinstance(trace, JvpTrace):
            vals = []
            tangents = []
            for a in args:
                if isinstance(a, Box) and a.trace is trace:
                    vals.append(a.value)
                    tangents.append(a.tangent)
                else:
                    vals.append(a)
                    tangents.append(None)
            ans = wrapped(*vals, **kwargs)
            rule = _JVP_RULES.get(prim_name)
            if rule is None:
                raise NonDifferentiableError(
                    f"non-differentiable operation: no tangent rule for {prim_name}")
            tan = rule(tangents, ans, *vals, **kwargs)
            if tan is None:
                return ans
            return JvpBox(ans, tan, trace)
        # reverse tape
        vals = []
        parents = []
        for i, a in enumerate(args):
            if isinstance(a, Box) and a.trace is trace:
                vals.append(a.value)
                parents.append((i, a.node))
            else:
                vals.append(a)
        ans = wrapped(*vals, **kwargs)
        if prim_name not in _VJP_RULES:
            raise NonDifferentiableError(
                f"non-differentiable operation: no gradient rule for {prim_name}")
        node = Node(prim_name, tuple(vals), kwargs, ans, tuple(parents))
        trace.nodes.append(node)
        return TapeBox(ans, trace, node)

    wrapped.__name__ = prim_name
    wrapped.prim_name = prim_name
    return wrapped


def defvjp(prim, **argnum_rules):
    """Register reverse rules: rule(g, ans, *args, **kwargs) per argument."""
    name = getattr(prim, "prim_name", prim)
    _VJP_RULES[name] = {int(k.lstrip("a")): v for k, v in argnum_rules.items()}


def defjvp(prim, rule):
    """Register the forward rule: rule(tangents, ans, *args, **kwargs)."""
    name = getattr(prim, "prim_name", prim)
    _JVP_RULES[name] = rule


def notrace_primitive(prim):
    """Mark a primitive as constant with respect to differentiation."""
    name = getattr(prim, "prim_name", prim)
    _NOTRACE.add(name)


# ---------------------------------------------------------------------------
# reverse mode
# ---------------------------------------------------------------------------

def _zeros_for(x):
    shape = raw_shape(x)
    return np.float64(0.0) if shape == () else np.zeros(shape)


def make_vjp(fn, *leaves):
    """Trace ``fn(*leaves)`` and return ``(value, vjp)``.

    ``vjp(seed)`` returns one cotangent per leaf, in leaf order.  The tape is
    consumed by the first extraction; re-tracing from identical inputs
    reproduces bit-identical results because the node list and the reverse
    sweep are both in deterministic creation order.
    """
    tape = Tape()
    boxes = []
    for x in leaves:
        node = _leaf_node()
        tape.nodes.append(node)
        boxes.append(TapeBox(x, tape, node))
    out = fn(*boxes)
    out_is_traced = isinstance(out, TapeBox) and out.trace is tape
    value = out.value if out_is_traced else out

    def vjp(seed):
        if tape.consumed:
            raise RuntimeError("tape already consumed; re-trace to differentiate again")
        tape.consumed = True
        if not out_is_traced:
            return [_zeros_for(x) for x in leaves]
        from . import kernels  # deferred: kernels imports this module

        adjoints = {id(out.node): seed}
        for node in reversed(tape.nodes):
            if node.prim is None:  # leaf: adjoint stays for collection
                continue
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            rules = _VJP_RULES[node.prim]
            for argnum, parent in node.parents:
                rule = rules.get(argnum)
                if rule is None:
                    continue
                contrib = rule(g, node.ans, *node.args, **node.kwargs)
                prev = adjoints.get(id(parent))
                adjoints[id(parent)] = contrib if prev is None else kernels.add(prev, contrib)
        results = []
        for b, x in zip(boxes, leaves):
            g = adjoints.get(id(b.node))
            results.append(g if g is not None else _zeros_for(x))
        return results

    return value, vjp


def check_finite(x, context="tape"):
    v = raw(x)
    if not np.all(np.isfinite(v)):
        raise NumericalOverflowError(f"numerical overflow in {context}")
    return x


def grad(scalar_fn, x):
    """Gradient of a scalar-valued function at ``x`` (array of any shape)."""
    return value_and_grad(scalar_fn, x)[1]


def value_and_grad(scalar_fn, x):
    value, vjp = make_vjp(scalar_fn, x)
    if raw_shape(value) != ():
        raise ValueError("grad requires a scalar-valued function")
    check_finite(value)
    (g,) = vjp(np.float64(1.0))
    check_finite(g)
    return value, g


def grad_named(scalar_fn, params):
    """Gradient w.r.t. a dict of named arrays; returns a congruent dict."""
    return value_and_grad_named(scalar_fn, params)[1]


def value_and_grad_named(scalar_fn, params):
    names = list(params)
    value, vjp = make_vjp(lambda *leaves: scalar_fn(dict(zip(names, leaves))),
                          *[params[k] for k in names])
    if raw_shape(value) != ():
        raise ValueError("grad requires a scalar-valued function")
    check_finite(value)
    grads = vjp(np.float64(1.0))
    for g in grads:
        check_finite(g)
    return value, dict(zip(names, grads))


# ---------------------------------------------------------------------------
# forward mode
# ---------------------------------------------------------------------------

def jvp(fn, x, v):
    """Evaluate ``(fn(x), J_fn(x) @ v)`` by forward tangent propagation."""
    if raw_shape(x) != raw_shape(v):
        raise ValueError(f"jvp tangent shape {raw_shape(v)} != input shape {raw_shape(x)}")
    trace = JvpTrace()
    out = fn(JvpBox(x, v, trace))
    if isinstance(out, JvpBox) and out.trace is trace:
        return out.value, out.tangent
    return out, _zeros_for(out)


def input_grad(scalar_fn, z):
    """Gradient of a scalar function w.r.t. its *input* vector.

    The result stays differentiable with respect to any enclosing trace
    (the reverse sweep executes registered primitives only), so parameter
    gradients may flow through it.
    """
    value, vjp = make_vjp(scalar_fn, z)
    if raw_shape(value) != ():
        raise ValueError("input_grad requires a scalar-valued function")
    (g,) = vjp(np.float64(1.0))
    return g
