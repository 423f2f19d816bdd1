"""Full-order data generation: the two-gas-containers ODE, inviscid Burgers
and heat equations on a periodic 1-D grid, finite-difference derivative
estimation, and subsampling.

The PDE solvers march implicit Euler in time; Burgers uses a first-order
upwind convective flux with a per-step Newton iteration, the heat equation a
central second-difference Laplacian with one prefactored sparse solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .integrators import IntegrationError, IntegratorSpec, integrate

log = logging.getLogger(__name__)


@dataclass
class SnapshotSet:
    """One trajectory: times (T+1,), states (T+1, N), optional derivatives
    and problem parameter, plus grid metadata when PDE-sourced."""

    times: np.ndarray
    states: np.ndarray
    mu: np.ndarray = None
    derivs: np.ndarray = None
    grid: dict = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be 1-D and states 2-D (time-major)")
        if len(self.times) != len(self.states):
            raise ValueError("times and states disagree on snapshot count")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.mu is not None:
            self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        if self.derivs is not None:
            self.derivs = np.asarray(self.derivs, dtype=np.float64)
            if self.derivs.shape != self.states.shape:
                raise ValueError("derivatives must be congruent with states")

    @property
    def n_snapshots(self):
        return self.states.shape[0]

    @property
    def full_dim(self):
        return self.states.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


# ---------------------------------------------------------------------------
# two gas containers exchanging heat and volume
# ---------------------------------------------------------------------------

GAS_INIT_BOX = ((0.2, 1.8), (-1.0, 1.0), (1.0, 3.0), (1.0, 3.0))


def gas_energies(q, s1, s2):
    """Internal energies of the two containers; the wall at q splits a
    domain of total length 2."""
    e1 = np.exp(2.0 * s1 / 3.0) / q ** (2.0 / 3.0)
    e2 = np.exp(2.0 * s2 / 3.0) / (2.0 - q) ** (2.0 / 3.0)
    return e1, e2


def gas_temperatures(q, s1, s2):
    e1, e2 = gas_energies(q, s1, s2)
    return (2.0 / 3.0) * e1, (2.0 / 3.0) * e2


def gas_rhs(state):
    """Time derivative (dq, dp, dS1, dS2) of the wall/entropy state.

    Both entropy rates carry the 10/T1 prefactor: the second is the exact
    negative of the first, so S1 + S2 is an invariant of this vector field.
    The energy and inverse-temperature differences are evaluated through
    expm1 of log ratios, which avoids the cancellation the naive difference
    suffers when the two containers are near equilibrium.
    """
    state = np.asarray(state, dtype=np.float64)
    q, p, s1, s2 = state
    if not 0.0 < q < 2.0:
        raise ValueError(f"wall position q={q:g} outside the physical range (0, 2)")
    log_ratio = np.log((2.0 - q) / q)
    d_entropy = (2.0 / 3.0) * (s1 - s2)
    log_e2 = (2.0 / 3.0) * s2 - (2.0 / 3.0) * np.log(2.0 - q)
    # E1/q - E2/(2-q) = exp(log_e2 - log(2-q)) * expm1(arg_p)
    arg_p = d_entropy + (5.0 / 3.0) * log_ratio
    dp = (2.0 / 3.0) * np.exp(log_e2 - np.log(2.0 - q)) * np.expm1(arg_p)
    # 1/T1 - 1/T2 = -(1/T1) * expm1(log E1 - log E2)
    t1 = (2.0 / 3.0) * np.exp((2.0 / 3.0) * s1 - (2.0 / 3.0) * np.log(q))
    arg_s = d_entropy + (2.0 / 3.0) * log_ratio
    ds1 = -(10.0 / (t1 * t1)) * np.expm1(arg_s)
    return np.array([p, dp, ds1, -ds1])


def gas_generate(count, t_final=7.84, dt=0.02, init_box=GAS_INIT_BOX,
                 seed=0, scheme="rkf45_adaptive", rtol=1e-10, atol=1e-12,
                 max_resample=100):
    """Sample ``count`` initial conditions uniformly from ``init_box`` and
    integrate each on [0, t_final] at the output spacing ``dt``.

    Returns the combined snapshot set whose full state concatenates the
    blocks [q_1..q_c, p_1..p_c, S1_1..S1_c, S2_1..S2_c] (N = 4*count).
    Initial conditions whose integration fails are resampled and logged.
    """
    rng = np.random.default_rng(seed)
    times = np.arange(np.round(t_final / dt) + 1) * dt
    spec = IntegratorSpec(scheme, rtol=rtol, atol=atol)
    f = lambda z, t: gas_rhs(z)
    trajectories = []
    attempts = 0
    while len(trajectories) < count:
        if attempts > count + max_resample:
            raise IntegrationError("too many failed gas-container initial conditions")
        attempts += 1
        z0 = np.array([rng.uniform(lo, hi) for lo, hi in init_box])
        try:
            traj = integrate(f, z0, times, spec)
        except (IntegrationError, ValueError) as exc:
            log.warning("resampling gas initial condition %s: %s", z0, exc)
            continue
        trajectories.append(traj)
    stacked = np.stack(trajectories, axis=0)  # (count, T+1, 4)
    states = np.concatenate([stacked[:, :, j].T for j in range(4)], axis=1)
    return SnapshotSet(times=times, states=states)


# ---------------------------------------------------------------------------
# 1-D periodic PDEs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BurgersParams:
    """Gaussian-bump initial condition alpha*exp(-x^2 / (2 omega^2)) advected
    by the inviscid Burgers equation on (-3, 3) x (0, t_end], periodic."""

    amplitude: float = 0.75
    width: float = 1.0
    nx: int = 1000            # spatial intervals; nx+1 stored grid points
    nt: int = 1000            # implicit Euler steps
    x_left: float = -3.0
    x_right: float = 3.0
    t_end: float = 2.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.nx < 2 or self.nt < 2:
            raise ValueError("nx and nt must be at least 2")

    @property
    def dx(self):
        return (self.x_right - self.x_left) / self.nx

    @property
    def dt(self):
        return self.t_end / self.nt

    @property
    def x_grid(self):
        return self.x_left + self.dx * np.arange(self.nx + 1)

    def initial_condition(self):
        x = self.x_grid
        return self.amplitude * np.exp(-x ** 2 / (2.0 * self.width ** 2))

    @property
    def mu(self):
        return np.array([self.amplitude, self.width])


@dataclass(frozen=True)
class HeatParams(BurgersParams):
    """Same grid, boundary, and initial condition, diffused by u_t = u_xx."""


def _upwind_derivative(u, dx):
    """First-order upwind convective derivative on the periodic interior."""
    backward = (u - np.roll(u, 1)) / dx
    forward = (np.roll(u, -1) - u) / dx
    return np.where(u >= 0.0, backward, forward)


def _burgers_newton_matrix(u, dx, dt):
    n = len(u)
    ratio = dt / dx
    diag = np.empty(n)
    lower = np.zeros(n)   # coefficient of u_{j-1}
    upper = np.zeros(n)   # coefficient of u_{j+1}
    pos = u >= 0.0
    um1 = np.roll(u, 1)
    up1 = np.roll(u, -1)
    diag[pos] = 1.0 + ratio * (2.0 * u[pos] - um1[pos])
    lower[pos] = -ratio * u[pos]
    diag[~pos] = 1.0 + ratio * (up1[~pos] - 2.0 * u[~pos])
    upper[~pos] = ratio * u[~pos]
    rows = np.concatenate([np.arange(n)] * 3)
    cols = np.concatenate([np.arange(n), (np.arange(n) - 1) % n, (np.arange(n) + 1) % n])
    vals = np.concatenate([diag, lower, upper])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _burgers_step(u_prev, dx, dt, tol, max_iter):
    """One implicit-Euler step of u_t + u u_x = 0 via Newton iteration."""
    u = u_prev.copy()
    for _ in range(max_iter):
        residual = u - u_prev + dt * u * _upwind_derivative(u, dx)
        if np.max(np.abs(residual)) <= tol:
            return u
        J = _burgers_newton_matrix(u, dx, dt)
        u = u - spla.spsolve(J, residual)
    residual = u - u_prev + dt * u * _upwind_derivative(u, dx)
    if np.max(np.abs(residual)) <= tol:
        return u
    return None


def burgers_solve(params: BurgersParams):
    """Implicit-Euler / upwind solution; states carry the duplicated
    periodic endpoint so the stored dimension is nx + 1."""
    nx, nt = params.nx, params.nt
    dx, dt = params.dx, params.dt
    u = params.initial_condition()[:nx]
    states = np.empty((nt + 1, nx + 1))
    states[0, :nx] = u
    states[0, nx] = u[0]
    for m in range(nt):
        u_next = _burgers_step(u, dx, dt, params.newton_tol, params.newton_max_iter)
        if u_next is None:
            u_next = _burgers_substepped(u, dx, dt, params, depth=0)
        u = u_next
        states[m + 1, :nx] = u
        states[m + 1, nx] = u[0]
    times = dt * np.arange(nt + 1)
    grid = {"dx": dx, "dt": dt, "x0": params.x_left, "x1": params.x_right}
    return SnapshotSet(times=times, states=states, mu=params.mu, grid=grid)


def _burgers_substepped(u, dx, dt, params, depth):
    if depth >= 8:
        raise RuntimeError("Burgers Newton iteration failed to converge "
                           "even after step halving")
    half = dt / 2.0
    for _ in range(2):
        nxt = _burgers_step(u, dx, half, params.newton_tol, params.newton_max_iter)
        if nxt is None:
            nxt = _burgers_substepped(u, dx, half, params, depth + 1)
        u = nxt
    return u


def _periodic_laplacian(n, dx):
    main = np.full(n, -2.0)
    off = np.ones(n)
    lap = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    lap[0, n - 1] = 1.0
    lap[n - 1, 0] = 1.0
    return (lap / dx ** 2).tocsc()


def heat_solve(params: HeatParams):
    """Implicit-Euler heat equation with the periodic central Laplacian.

    The Laplacian has exact zero row sums, so the discrete mass sum_j u_j is
    conserved by every step up to linear-solver roundoff.
    """
    nx, nt = params.nx, params.nt
    dx, dt = params.dx, params.dt
    u = params.initial_condition()[:nx]
    system = sp.identity(nx, format="csc") - dt * _periodic_laplacian(nx, dx)
    solver = spla.splu(system)
    states = np.empty((nt + 1, nx + 1))
    states[0, :nx] = u
    states[0, nx] = u[0]
    for m in range(nt):
        u = solver.solve(u)
        states[m + 1, :nx] = u
        states[m + 1, nx] = u[0]
    times = dt * np.arange(nt + 1)
    grid = {"dx": dx, "dt": dt, "x0": params.x_left, "x1": params.x_right}
    return SnapshotSet(times=times, states=states, mu=params.mu, grid=grid)


# ---------------------------------------------------------------------------
# discrete PDE residuals (shared with the greedy error indicator)
# ---------------------------------------------------------------------------

def burgers_residual(states, dx, dt, initial_condition=None):
    """Mean squared implicit-Euler/upwind residual of a trajectory on its own
    grid; row 0 is the initial-condition mismatch when one is supplied."""
    u = np.asarray(states, dtype=np.float64)[:, :-1]  # drop duplicated endpoint
    rows = [(u[m + 1] - u[m]) / dt + u[m + 1] * _upwind_derivative(u[m + 1], dx)
            for m in range(len(u) - 1)]
    if initial_condition is not None:
        rows.insert(0, u[0] - np.asarray(initial_condition)[:-1])
    r = np.concatenate(rows)
    return float(np.mean(r ** 2))


def heat_residual(states, dx, dt, initial_condition=None):
    u = np.asarray(states, dtype=np.float64)[:, :-1]
    lap = _periodic_laplacian(u.shape[1], dx)
    rows = [(u[m + 1] - u[m]) / dt - lap @ u[m + 1] for m in range(len(u) - 1)]
    if initial_condition is not None:
        rows.insert(0, u[0] - np.asarray(initial_condition)[:-1])
    r = np.concatenate(rows)
    return float(np.mean(r ** 2))


# ---------------------------------------------------------------------------
# derivative estimation and subsampling
# ---------------------------------------------------------------------------

def fd_derivatives(snapshots: SnapshotSet):
    """Estimate xdot by central differences in the interior and one-sided
    differences at the endpoints; requires a uniform grid of >= 3 snapshots."""
    if snapshots.n_snapshots < 3:
        raise ValueError("derivative estimation needs at least 3 snapshots")
    dts = np.diff(snapshots.times)
    if not np.allclose(dts, dts[0], rtol=1e-10, atol=1e-14):
        raise ValueError("derivative estimation requires a uniform time grid")
    dt = float(dts[0])
    x = snapshots.states
    derivs = np.empty_like(x)
    derivs[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    derivs[0] = (x[1] - x[0]) / dt
    derivs[-1] = (x[-1] - x[-2]) / dt
    return replace_derivs(snapshots, derivs)


def replace_derivs(snapshots, derivs):
    return SnapshotSet(times=snapshots.times.copy(), states=snapshots.states.copy(),
                       mu=None if snapshots.mu is None else snapshots.mu.copy(),
                       derivs=derivs,
                       grid=None if snapshots.grid is None else dict(snapshots.grid))


def subsample(snapshots: SnapshotSet, space_stride=1, time_stride=1):
    """Strided selection in space and time; strides must divide the interval
    counts so both grid endpoints survive."""
    n_t, n_x = snapshots.states.shape
    if space_stride < 1 or time_stride < 1:
        raise ValueError("strides must be positive")
    if (n_x - 1) % space_stride != 0:
        raise ValueError(f"space stride {space_stride} does not divide {n_x - 1} intervals")
    if (n_t - 1) % time_stride != 0:
        raise ValueError(f"time stride {time_stride} does not divide {n_t - 1} intervals")
    sl_t = slice(None, None, time_stride)
    sl_x = slice(None, None, space_stride)
    grid = None
    if snapshots.grid is not None:
        grid = dict(snapshots.grid)
        grid["dx"] = grid["dx"] * space_stride
        grid["dt"] = grid["dt"] * time_stride
    return SnapshotSet(
        times=snapshots.times[sl_t].copy(),
        states=snapshots.states[sl_t, sl_x].copy(),
        mu=None if snapshots.mu is None else snapshots.mu.copy(),
        derivs=None if snapshots.derivs is None else snapshots.derivs[sl_t, sl_x].copy(),
        grid=grid,
    )
