"""Explicit Runge-Kutta time integration for latent dynamics.

The fixed-step classic RK4 path is built from differentiable operations, so
training losses can backpropagate through one-step integrals.  The adaptive
pairs (Fehlberg 4(5) and Bogacki-Shampine 2(3)) are raw-numpy prediction
integrators with embedded error control.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SCHEMES = ("rk4_fixed", "rkf45_adaptive", "rk23_adaptive")


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorSpec:
    scheme: str = "rk4_fixed"
    dt: float = None          # fixed-step size; defaults to the output spacing
    substeps: int = 1         # fixed-step stages per output interval
    rtol: float = 1e-6
    atol: float = 1e-9
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{self.scheme}'; choose from {SCHEMES}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")


def rk4_step(f, z, t, dt):
    """One classic fourth-order step; differentiable end to end."""
    k1 = f(z, t)
    k2 = f(z + (0.5 * dt) * k1, t + 0.5 * dt)
    k3 = f(z + (0.5 * dt) * k2, t + 0.5 * dt)
    k4 = f(z + dt * k3, t + dt)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Fehlberg 4(5): propagates the fourth-order solution, fifth-order estimate.
_RKF45_C = (0.0, 0.25, 3 / 8, 12 / 13, 1.0, 0.5)
_RKF45_A = (
    (),
    (0.25,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF45_B = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -0.2, 0.0)
_RKF45_E = (1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55)

# Bogacki-Shampine 2(3): propagates the third-order solution.
_RK23_C = (0.0, 0.5, 0.75, 1.0)
_RK23_A = (
    (),
    (0.5,),
    (0.0, 0.75),
    (2 / 9, 1 / 3, 4 / 9),
)
_RK23_B = (2 / 9, 1 / 3, 4 / 9, 0.0)
_RK23_E = (2 / 9 - 7 / 24, 1 / 3 - 0.25, 4 / 9 - 1 / 3, -0.125)

_TABLEAUS = {
    "rkf45_adaptive": (_RKF45_C, _RKF45_A, _RKF45_B, _RKF45_E, 5),
    "rk23_adaptive": (_RK23_C, _RK23_A, _RK23_B, _RK23_E, 3),
}


def _embedded_step(f, z, t, dt, tableau):
    c, a, b, e, _ = tableau
    ks = []
    for i in range(len(c)):
        zi = z
        for j, aij in enumerate(a[i]):
            if aij != 0.0:
                zi = zi + (dt * aij) * ks[j]
        ks.append(f(zi, t + c[i] * dt))
    z_new = z
    for bi, ki in zip(b, ks):
        if bi != 0.0:
            z_new = z_new + (dt * bi) * ki
    err = None
    for ei, ki in zip(e, ks):
        if ei != 0.0:
            term = (dt * ei) * ki
            err = term if err is None else err + term
    return z_new, err


def step(f, z, t, dt, scheme="rk4_fixed"):
    """One explicit step of the declared order (no step-size control)."""
    if scheme == "rk4_fixed":
        z_new = rk4_step(f, z, t, dt)
    elif scheme in _TABLEAUS:
        z_new, _ = _embedded_step(f, z, t, dt, _TABLEAUS[scheme])
    else:
        raise ValueError(f"unknown scheme '{scheme}'")
    _check_stage(z_new, t)
    return z_new


def _check_stage(z, t):
    v = ad.raw(z)
    if not np.all(np.isfinite(v)):
        raise IntegrationError(f"integration blow-up at t={float(t):g}")


def integrate(f, z0, times, spec=IntegratorSpec(), collect_stats=False):
    """Integrate dz/dt = f(z, t) through the given strictly increasing times.

    Returns states stacked along axis 0, starting with z0 itself.  The
    fixed-step scheme subdivides each output interval into ``substeps`` RK4
    steps (or steps of size ``dt`` when given) and is differentiable; the
    adaptive schemes control the local error per accepted step against
    max(rtol*|z|, atol) and land exactly on every output time.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) < 1:
        raise ValueError("times must be a non-empty 1-D array")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if spec.scheme == "rk4_fixed":
        out = _integrate_fixed(f, z0, times, spec)
        return (out, []) if collect_stats else out
    return _integrate_adaptive(f, z0, times, spec, collect_stats)


def _integrate_fixed(f, z0, times, spec):
    states = [z0]
    z = z0
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        if spec.dt is not None:
            n_sub = max(1, int(np.ceil((t1 - t0) / spec.dt - 1e-12)))
        else:
            n_sub = spec.substeps
        h = (t1 - t0) / n_sub
        t = t0
        for _ in range(n_sub):
            z = rk4_step(f, z, t, h)
            t += h
        _check_stage(z, t1)
        states.append(z)
    return _stack(states)


def _integrate_adaptive(f, z0, times, spec, collect_stats):
    tableau = _TABLEAUS[spec.scheme]
    order = tableau[4]
    z = np.asarray(ad.raw(z0), dtype=np.float64)
    t = float(times[0])
    h = spec.dt if spec.dt is not None else max((times[-1] - times[0]) / 100.0, 1e-8)
    states = [z]
    stats = []
    n_steps = 0
    for target in times[1:]:
        while t < target - 1e-13 * max(1.0, abs(target)):
            n_steps += 1
            if n_steps > spec.max_steps:
                raise IntegrationError(f"step limit {spec.max_steps} exceeded at t={t:g}")
            h_try = min(h, target - t)
            z_new, err_vec = _embedded_step(f, z, t, h_try, tableau)
            _check_stage(z_new, t + h_try)
            err = float(np.linalg.norm(err_vec))
            tol = max(spec.atol, spec.rtol * float(np.linalg.norm(z)))
            if err <= tol:
                t += h_try
                z = z_new
                if collect_stats:
                    stats.append((t, err, tol))
                factor = 5.0 if err == 0.0 else min(5.0, 0.9 * (tol / err) ** (1.0 / order))
                h = h_try * max(0.2, factor)
            else:
                h = h_try * max(0.2, 0.9 * (tol / err) ** (1.0 / order))
        t = float(target)
        states.append(z)
    out = np.stack(states, axis=0)
    return (out, stats) if collect_stats else out


def _stack(states):
    if any(isinstance(s, ad.Box) for s in states):
        expanded = [ad.reshape(s, (1,) + ad.raw_shape(s)) for s in states]
        return ad.concatenate(*expanded, axis=0)
    return np.stack([np.asarray(s, dtype=np.float64) for s in states], axis=0)
