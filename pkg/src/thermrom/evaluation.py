"""ROM prediction, error metrics, abstract error-estimate diagnostics, the
linear spectral sanity case, and entropy reporting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dynamics import thermo_trace
from .integrators import IntegratorSpec, integrate
from .model import RomModel


def rom_predict(model: RomModel, x0, times, integrator=None, mu=None):
    """Encode x0, roll the latent dynamics through ``times``, decode each
    sample.  Returns the predicted full states (len(times), N)."""
    integrator = integrator or IntegratorSpec("rkf45_adaptive")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (model.full_dim,):
        raise ValueError(f"x0 shape {x0.shape} != ({model.full_dim},)")
    z0 = ad.raw(model.encode(x0, mu))
    Z = integrate(model.latent_field(), z0, times, integrator)
    return ad.raw(model.decode(Z, mu)), Z


def latent_rollout(model: RomModel, x0, times, integrator=None, mu=None):
    return rom_predict(model, x0, times, integrator, mu)[1]


def _snapshot_norms(truth):
    norms = np.linalg.norm(truth, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("relative error undefined: truth snapshot with zero norm")
    return norms


def extrap_error(truth, prediction):
    """Averaged relative l2 error over time."""
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.shape != prediction.shape:
        raise ValueError("truth and prediction must be congruent")
    norms = _snapshot_norms(truth)
    return float(np.mean(np.linalg.norm(truth - prediction, axis=1) / norms))


def max_rel_error(truth, prediction):
    """Maximum percentage relative l2 error over time."""
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.shape != prediction.shape:
        raise ValueError("truth and prediction must be congruent")
    norms = _snapshot_norms(truth)
    return float(100.0 * np.max(np.linalg.norm(truth - prediction, axis=1) / norms))


# ---------------------------------------------------------------------------
# abstract error-estimate diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Cumulative error components over [t0, t], the measured ROM error
    series, and the two summary metrics."""

    times: np.ndarray
    eps_int: np.ndarray
    eps_rec: np.ndarray
    eps_jac: np.ndarray      # None when derivatives are unavailable
    eps_mod: np.ndarray      # None when derivatives are unavailable
    measured: np.ndarray
    e_l2: float
    e_max_pct: float

    def component_sum(self):
        total = self.eps_int + self.eps_rec
        if self.eps_jac is not None:
            total = total + self.eps_jac
        if self.eps_mod is not None:
            total = total + self.eps_mod
        return total


def _cumtrapz(values, times):
    values = np.asarray(values, dtype=np.float64)
    dt = np.diff(times)
    out = np.zeros(len(values))
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


def theorem2_components(model: RomModel, times, states, latent, derivs=None,
                        mu=None):
    """Evaluate the four abstract error components on the snapshot grid.

    All integrals use the trapezoidal rule; the Jacobian actions are
    tangent propagations.  When derivatives are missing the two
    derivative-based components are reported absent (None).
    """
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    latent = np.asarray(ad.raw(latent), dtype=np.float64)
    Zx = ad.raw(model.encode(states, mu))
    recon = ad.raw(model.reconstruct(states, mu))
    rec_err = np.linalg.norm(states - recon, axis=1)

    eps_int = _cumtrapz(np.linalg.norm(Zx - latent, axis=1), times)
    eps_rec = rec_err[0] + rec_err

    eps_jac = eps_mod = None
    if derivs is not None:
        derivs = np.asarray(derivs, dtype=np.float64)
        _, tz = model.encode_jvp(states, derivs, mu)
        _, txh = model.decode_jvp(Zx, tz, mu)
        eps_jac = _cumtrapz(np.linalg.norm(derivs - ad.raw(txh), axis=1), times)
        F = ad.raw(model.rhs(latent))
        latent_term = np.linalg.norm(ad.raw(tz) - F, axis=1)
        _, JdF = model.decode_jvp(latent, F, mu)
        full_term = np.linalg.norm(derivs - ad.raw(JdF), axis=1)
        eps_mod = _cumtrapz(latent_term + full_term, times)

    prediction = ad.raw(model.decode(latent, mu))
    measured = np.linalg.norm(states - prediction, axis=1)
    return ErrorReport(
        times=times,
        eps_int=eps_int,
        eps_rec=eps_rec,
        eps_jac=eps_jac,
        eps_mod=eps_mod,
        measured=measured,
        e_l2=extrap_error(states, prediction),
        e_max_pct=max_rel_error(states, prediction),
    )


# ---------------------------------------------------------------------------
# linear spectral case
# ---------------------------------------------------------------------------

@dataclass
class LinearCaseReport:
    times: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    identity_residuals: dict
    envelope_constant: float


def linear_rom_case(M, n, x0=None, times=None, rng=None):
    """Exact linear ROM built from the spectral decomposition of a symmetric
    M: encoder Q^T, decoder Q, latent field z -> Sigma z on the leading-n
    (largest magnitude) eigenpairs.

    Verifies the four projection identities numerically and evaluates the
    measured error against the truncated-spectrum bound
    ||Qt Qt^T x(t0)|| + int ||Qt SigmaT Qt^T x|| ds (trapezoid quadrature).
    """
    M = np.asarray(M, dtype=np.float64)
    N = M.shape[0]
    if M.shape != (N, N) or not np.allclose(M, M.T, atol=1e-12):
        raise ValueError("linear case requires a symmetric matrix")
    if not 0 < n <= N:
        raise ValueError(f"latent dim n={n} must lie in (0, {N}]")
    rng = rng or np.random.default_rng(0)
    if times is None:
        times = np.linspace(0.0, 1.0, 101)
    times = np.asarray(times, dtype=np.float64)
    if x0 is None:
        x0 = rng.normal(size=N)

    eigvals, eigvecs = np.linalg.eigh(M)
    order = np.argsort(-np.abs(eigvals))
    lam = eigvals[order]
    V = eigvecs[:, order]
    Q, Qt = V[:, :n], V[:, n:]
    sigma, sigma_t = lam[:n], lam[n:]

    dt0 = times - times[0]
    # truth trajectories: x(t) = V exp(lam (t - t0)) V^T x0
    coeffs = V.T @ x0
    x_traj = (V[None] * np.exp(np.outer(dt0, lam))[:, None, :]) @ coeffs
    z_traj = np.exp(np.outer(dt0, sigma)) * (Q.T @ x0)

    residuals = {"encode": 0.0, "jacobian": 0.0, "full_model": 0.0, "latent_model": 0.0}
    for j in range(len(times)):
        x = x_traj[j]
        z = z_traj[j]
        qx_minus_z = Q.T @ x - z
        # encoded truth and the latent solution coincide (matched IC)
        residuals["encode"] = max(residuals["encode"], np.linalg.norm(qx_minus_z))
        xdot = M @ x
        lhs2 = xdot - Q @ (Q.T @ xdot)
        rhs2 = Qt @ (sigma_t * (Qt.T @ x))
        residuals["jacobian"] = max(residuals["jacobian"], np.linalg.norm(lhs2 - rhs2))
        lhs3 = M @ x - Q @ (sigma * z)
        rhs3 = Q @ (sigma * qx_minus_z) + Qt @ (sigma_t * (Qt.T @ x))
        residuals["full_model"] = max(residuals["full_model"], np.linalg.norm(lhs3 - rhs3))
        lhs4 = Q.T @ (M @ x) - sigma * z
        rhs4 = sigma * qx_minus_z
        residuals["latent_model"] = max(residuals["latent_model"], np.linalg.norm(lhs4 - rhs4))

    prediction = z_traj @ Q.T
    measured = np.linalg.norm(x_traj - prediction, axis=1)
    integrand = np.linalg.norm((Qt * sigma_t) @ (Qt.T @ x_traj.T), axis=0) if n < N else np.zeros(len(times))
    bound = np.linalg.norm(Qt @ (Qt.T @ x0)) + _cumtrapz(integrand, times)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, measured / np.where(bound > 0, bound, 1.0), 0.0)
    return LinearCaseReport(
        times=times,
        measured=measured,
        bound=bound,
        identity_residuals=residuals,
        envelope_constant=float(np.max(ratio)),
    )


# ---------------------------------------------------------------------------
# entropy reporting
# ---------------------------------------------------------------------------

def entropy_report(model: RomModel, initial_states, times, integrator=None,
                   mus=None):
    """Predicted-latent entropy series and rates for each initial state.

    Returns a dict with per-trajectory arrays (n_mu, T): S, dSdt, E, dEdt,
    plus their mean/std aggregates over the trajectory set.
    """
    if not model.is_thermodynamic:
        raise TypeError("entropy report requires an energy/entropy latent model")
    initial_states = np.atleast_2d(np.asarray(initial_states, dtype=np.float64))
    n_traj = initial_states.shape[0]
    series = {"S": [], "dSdt": [], "E": [], "dEdt": []}
    for i in range(n_traj):
        mu = None if mus is None else np.asarray(mus)[i]
        Z = latent_rollout(model, initial_states[i], times, integrator, mu)
        trace = thermo_trace(model.dyn, model.dyn_params(), Z)
        for key in series:
            series[key].append(np.asarray(ad.raw(trace[key]), dtype=np.float64))
    out = {key: np.stack(vals) for key, vals in series.items()}
    out["S_mean"] = out["S"].mean(axis=0)
    out["S_std"] = out["S"].std(axis=0)
    out["dSdt_mean"] = out["dSdt"].mean(axis=0)
    out["dSdt_std"] = out["dSdt"].std(axis=0)
    out["times"] = np.asarray(times, dtype=np.float64)
    return out


def entropy_csv(path, report, mus=None):
    """Columns (mu, t, S, dSdt), one row per trajectory and time."""
    n_traj, n_t = report["S"].shape
    with open(path, "w") as fh:
        fh.write("mu,t,S,dSdt\n")
        for i in range(n_traj):
            label = "" if mus is None else _mu_label(np.asarray(mus)[i])
            for j in range(n_t):
                fh.write(f"{label},{report['times'][j]:.12g},"
                         f"{report['S'][i, j]:.12e},{report['dSdt'][i, j]:.12e}\n")


def _mu_label(mu):
    mu = np.atleast_1d(mu)
    return ";".join(f"{v:.12g}" for v in mu)


def heatmap_csv(path, mu_points, errors, training_mask):
    """Columns (mu1, mu2, e_max_pct, is_training_point)."""
    mu_points = np.atleast_2d(np.asarray(mu_points, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write("mu1,mu2,e_max_pct,is_training_point\n")
        for (m1, m2), err, is_train in zip(mu_points, errors, training_mask):
            fh.write(f"{m1:.12g},{m2:.12g},{err:.12e},{int(is_train)}\n")
