"""Flat parameter-vector layout shared by the optimizer, checkpoints, and
gradient checks.  A layout is the ordered (name, shape) listing of a
parameter dict; it is stable for the lifetime of a run, so flattened
gradients align index by index with flattened parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParamLayout:
    entries: tuple  # ((name, shape), ...) in dict order

    @classmethod
    def of(cls, params):
        return cls(tuple((name, np.shape(v)) for name, v in params.items()))

    @property
    def size(self):
        return sum(int(np.prod(shape)) for _, shape in self.entries)

    def segments(self):
        offset = 0
        for name, shape in self.entries:
            size = int(np.prod(shape))
            yield name, shape, offset, offset + size
            offset += size


def flatten_params(params, layout=None):
    layout = layout or ParamLayout.of(params)
    if not params:
        return np.zeros(0), layout
    flat = np.concatenate([np.asarray(params[name], dtype=np.float64).ravel()
                           for name, _ in layout.entries])
    return flat, layout


def unflatten_params(flat, layout):
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != layout.size:
        raise ValueError(f"flat vector of size {flat.size} does not match "
                         f"layout size {layout.size}")
    params = {}
    for name, shape, start, stop in layout.segments():
        params[name] = flat[start:stop].reshape(shape)
    return params
