"""Greedy training-parameter selection driven by a physics-informed
residual indicator: predict at a candidate parameter with the current model
(no full-order solve), evaluate the discrete residual of the governing
equation on the prediction, and add the worst-scoring parameter."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import rom_predict
from .fom import burgers_residual, heat_residual
from .integrators import IntegratorSpec
from .model import RomModel
from .training import LossWeights, TrainSpec, TrajectoryData, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterGrid:
    """Cartesian grid of candidate parameters (two or more per axis)."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        for a in axes:
            if len(a) < 2:
                raise ValueError("each grid axis needs at least 2 points")
            if np.any(np.diff(a) <= 0):
                raise ValueError("grid axis values must be strictly increasing")

    @classmethod
    def from_ranges(cls, ranges):
        """ranges: sequence of (lo, hi, count)."""
        return cls(tuple(np.linspace(lo, hi, int(count)) for lo, hi, count in ranges))

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def corners(self):
        mesh = np.meshgrid(*[(a[0], a[-1]) for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def boundary_mask(self):
        pts = self.points
        mask = np.zeros(len(pts), dtype=bool)
        for d, axis in enumerate(self.axes):
            mask |= np.isclose(pts[:, d], axis[0]) | np.isclose(pts[:, d], axis[-1])
        return mask


def residual_indicator(model: RomModel, mu, problem, integrator=None):
    """Mean squared discrete PDE residual of the ROM prediction at ``mu``.

    The prediction runs on the problem's training-resolution grid from the
    analytic initial condition; row zero of the residual is the
    initial-condition mismatch, so a degenerate prediction cannot score
    zero by accident.
    """
    params = problem.coarse_params(mu)
    x0 = params.initial_condition()
    times = params.dt * np.arange(params.nt + 1)
    pred, _ = rom_predict(model, x0, times, integrator,
                          mu=np.asarray(mu) if model.is_parametric else None)
    if problem.kind == "burgers":
        return burgers_residual(pred, params.dx, params.dt, initial_condition=x0)
    if problem.kind == "heat":
        return heat_residual(pred, params.dx, params.dt, initial_condition=x0)
    raise ValueError(f"no residual defined for problem kind '{problem.kind}'")


@dataclass(frozen=True)
class GreedySchedule:
    target_count: int
    period_iterations: int
    weights: LossWeights
    train_spec: TrainSpec
    final_iterations: int = None  # defaults to period_iterations

    def __post_init__(self):
        if self.target_count < 1:
            raise ValueError("target count must be positive")


@dataclass
class GreedyResult:
    training_mu: np.ndarray
    selection_order: list
    histories: list
    scores: list = field(default_factory=list)


def greedy_sample(model: RomModel, grid: ParameterGrid, schedule: GreedySchedule,
                  problem, data_builder, indicator=residual_indicator,
                  integrator=None, threads=1):
    """Alternate training periods with worst-residual parameter acquisition.

    ``data_builder(mu_array)`` must return the TrajectoryData for the given
    training parameters (solving the full-order model on demand).  Starts
    from the grid corners; never re-selects a parameter already in the
    training set; fully deterministic given the training seed.
    """
    training = [tuple(p) for p in grid.corners()]
    if schedule.target_count < len(training):
        raise ValueError(f"target count {schedule.target_count} below the "
                         f"{len(training)} corner points")
    result = GreedyResult(training_mu=np.array(training), selection_order=[],
                          histories=[])
    if schedule.target_count == len(training):
        return result

    round_idx = 0
    while len(training) < schedule.target_count:
        data = data_builder(np.array(training))
        spec = replace(schedule.train_spec,
                       iterations=schedule.period_iterations,
                       seed=schedule.train_spec.seed + round_idx)
        result.histories.append(train(model, data, schedule.weights, spec))
        candidates = [tuple(p) for p in grid.points if tuple(p) not in set(training)]
        scores = _score_candidates(model, candidates, problem, indicator,
                                   integrator, threads)
        best = int(np.argmax(scores))
        chosen = candidates[best]
        log.info("greedy round %d: selected mu=%s (score %.3e)",
                 round_idx, chosen, scores[best])
        training.append(chosen)
        result.selection_order.append(chosen)
        result.scores.append(dict(zip(candidates, scores)))
        round_idx += 1

    final_iters = schedule.final_iterations or schedule.period_iterations
    data = data_builder(np.array(training))
    spec = replace(schedule.train_spec, iterations=final_iters,
                   seed=schedule.train_spec.seed + round_idx)
    result.histories.append(train(model, data, schedule.weights, spec))
    result.training_mu = np.array(training)
    return result


def _score_candidates(model, candidates, problem, indicator, integrator, threads):
    if threads <= 1:
        return [indicator(model, mu, problem, integrator) for mu in candidates]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(indicator, model, mu, problem, integrator)
                   for mu in candidates]
        return [f.result() for f in futures]
