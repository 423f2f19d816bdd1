"""Loss assembly and the simultaneous training loop.

The total loss is a weighted sum of four components: a one-step latent
integration residual, the autoencoder reconstruction error, a Jacobian term
penalizing (I - J_d J_e) xdot, and a latent/full model-consistency term.
All Jacobian actions go through tangent propagation; no Jacobian matrix is
ever materialized.  A degeneracy penalty is added for the penalty-based
GENERIC model, and optional l2 weight decay applies to the dynamics
parameters only.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dynamics import GfinnDynamics, SpnnDynamics
from .integrators import IntegratorSpec, rk4_step
from .model import RomModel, scoped


class NonFiniteLossError(FloatingPointError):
    """Raised after training aborts and restores the last good checkpoint."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class LossWeights:
    integral: float = 1.0
    reconstruction: float = 1e-1
    jacobian: float = 1e-2
    model: float = 0.0
    degeneracy: float = 0.0
    regularization: float = 0.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight '{name}' must be nonnegative, got {v}")


@dataclass(frozen=True)
class TrainSpec:
    iterations: int = 1000
    lr: float = 1e-3
    lr_decay: float = 0.01       # lr multiplied by (1 - decay) each period
    lr_period: int = 1000
    lr_floor: float = 1e-5
    batches: int = 1             # minibatches per epoch over snapshot indices
    seed: int = 0
    checkpoint_every: int = 1000
    jacobian_variant: str = "derivative"   # derivative | frobenius
    frobenius_exact_max_dim: int = 512
    frobenius_probes: int = 32
    integrator: IntegratorSpec = field(
        default_factory=lambda: IntegratorSpec("rk4_fixed", substeps=1))

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ValueError("lr decay rate must lie in [0, 1)")
        if self.jacobian_variant not in ("derivative", "frobenius"):
            raise ValueError("jacobian_variant must be 'derivative' or 'frobenius'")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")


@dataclass
class TrajectoryData:
    """Training corpus: states (M, T+1, N) on a shared uniform time grid."""

    states: np.ndarray
    times: np.ndarray
    derivs: np.ndarray = None
    mu: np.ndarray = None        # (M, p) for the parametric case

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[None]
        if self.derivs is not None:
            self.derivs = np.asarray(self.derivs, dtype=np.float64)
            if self.derivs.ndim == 2:
                self.derivs = self.derivs[None]
            if self.derivs.shape != self.states.shape:
                raise ValueError("derivative array shape must match states")
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=np.float64)
            if self.mu.ndim == 1:
                self.mu = self.mu[None]
            if self.mu.shape[0] != self.states.shape[0]:
                raise ValueError("one mu row per trajectory required")
        if self.states.shape[1] != len(self.times):
            raise ValueError("states and times disagree on snapshot count")
        dts = np.diff(self.times)
        if len(dts) and not np.allclose(dts, dts[0], rtol=1e-10, atol=1e-14):
            raise ValueError("training requires a uniform time grid")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_snapshots(self):
        return self.states.shape[1]

    def subset(self, snapshot_idx):
        """Batch view over snapshot indices (pairs use k, k+1 internally)."""
        idx = np.asarray(snapshot_idx, dtype=int)
        pair_idx = idx[idx < self.n_snapshots - 1]
        return _Batch(
            x=self.states[:, idx],
            xdot=None if self.derivs is None else self.derivs[:, idx],
            x0=self.states[:, pair_idx],
            x1=self.states[:, pair_idx + 1],
            dt=self.dt,
            mu=self.mu,
        )

    def full_batch(self):
        return self.subset(np.arange(self.n_snapshots))


@dataclass
class _Batch:
    x: np.ndarray
    xdot: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    dt: float
    mu: np.ndarray


def _flatten_latent(z):
    shape = ad.raw_shape(z)
    return ad.reshape(z, (int(np.prod(shape[:-1])), shape[-1])), shape


def loss_int(model: RomModel, params, batch, integrator: IntegratorSpec):
    """One-step latent integration residual; independent of the decoder."""
    z0 = model.encode(batch.x0, batch.mu, params)
    z1 = model.encode(batch.x1, batch.mu, params)
    zf, shape = _flatten_latent(z0)
    dyn_params = model.dyn_params(params)
    f = lambda z, t: model.dyn.rhs(dyn_params, z)
    n_sub = integrator.substeps
    h = batch.dt / n_sub
    z = zf
    for s in range(n_sub):
        z = rk4_step(f, z, s * h, h)
    return ad.sumsq(ad.sub(ad.reshape(z, shape), z1))


def loss_rec(model: RomModel, params, batch):
    return ad.sumsq(ad.sub(batch.x, model.reconstruct(batch.x, batch.mu, params)))


def loss_jac(model: RomModel, params, batch, variant="derivative", probes=None):
    """Jacobian loss: sum ||(I - J_d J_e) xdot||^2, or its Frobenius-norm
    variant sum ||I - J_d J_e||_F^2 when derivatives are unavailable."""
    if variant == "derivative":
        if batch.xdot is None:
            raise ValueError("derivative-variant Jacobian loss requires xdot data")
        z, tz = model.encode_jvp(batch.x, batch.xdot, batch.mu, params)
        _, txh = model.decode_jvp(z, tz, batch.mu, params)
        return ad.sumsq(ad.sub(batch.xdot, txh))
    if variant != "frobenius":
        raise ValueError(f"unknown Jacobian-loss variant '{variant}'")
    N = model.full_dim
    if probes is None:  # exact column-by-column assembly
        total = None
        for i in range(N):
            e = np.zeros_like(ad.raw(batch.x))
            e[..., i] = 1.0
            z, tz = model.encode_jvp(batch.x, e, batch.mu, params)
            _, txh = model.decode_jvp(z, tz, batch.mu, params)
            term = ad.sumsq(ad.sub(e, txh))
            total = term if total is None else ad.add(total, term)
        return total
    total = None
    for v in probes:  # Hutchinson estimate with fixed seeded probes
        vb = np.broadcast_to(v, ad.raw_shape(batch.x)).copy()
        z, tz = model.encode_jvp(batch.x, vb, batch.mu, params)
        _, txh = model.decode_jvp(z, tz, batch.mu, params)
        term = ad.sumsq(ad.sub(vb, txh))
        total = term if total is None else ad.add(total, term)
    return ad.div(total, np.float64(len(probes)))


def loss_mod(model: RomModel, params, batch):
    """Latent and full-order model-consistency residuals."""
    if batch.xdot is None:
        raise ValueError("model-consistency loss requires xdot data")
    z, tz = model.encode_jvp(batch.x, batch.xdot, batch.mu, params)
    zf, shape = _flatten_latent(z)
    F = ad.reshape(model.rhs(zf, params), shape)
    latent_term = ad.sumsq(ad.sub(tz, F))
    _, JdF = model.decode_jvp(z, F, batch.mu, params)
    full_term = ad.sumsq(ad.sub(batch.xdot, JdF))
    return ad.add(latent_term, full_term)


def loss_deg(model: RomModel, params, batch):
    """Degeneracy penalty at the encoded batch states (penalty-based model)."""
    if isinstance(model.dyn, GfinnDynamics):
        raise ValueError("degeneracy penalty on the structurally degenerate "
                         "model signals a misconfiguration")
    if not isinstance(model.dyn, SpnnDynamics):
        raise ValueError("degeneracy penalty requires an energy/entropy model")
    z = model.encode(batch.x, batch.mu, params)
    zf, _ = _flatten_latent(z)
    return model.dyn.degeneracy_penalty(model.dyn_params(params), zf)


def regularization_term(model: RomModel, params):
    total = None
    for key, value in params.items():
        if key.startswith("dyn."):
            term = ad.sumsq(value)
            total = term if total is None else ad.add(total, term)
    return np.float64(0.0) if total is None else total


def total_loss(model: RomModel, params, batch, weights: LossWeights,
               spec: TrainSpec, probes=None):
    """Weighted loss and per-component breakdown (raw floats)."""
    parts = {"int": 0.0, "rec": 0.0, "jac": 0.0, "mod": 0.0, "deg": 0.0, "reg": 0.0}
    total = np.float64(0.0)
    if weights.integral > 0:
        v = loss_int(model, params, batch, spec.integrator)
        parts["int"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.integral), v))
    if weights.reconstruction > 0:
        v = loss_rec(model, params, batch)
        parts["rec"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.reconstruction), v))
    if weights.jacobian > 0:
        v = loss_jac(model, params, batch, spec.jacobian_variant, probes)
        parts["jac"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.jacobian), v))
    if weights.model > 0:
        v = loss_mod(model, params, batch)
        parts["mod"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.model), v))
    if weights.degeneracy > 0:
        v = loss_deg(model, params, batch)
        parts["deg"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.degeneracy), v))
    if weights.regularization > 0:
        v = regularization_term(model, params)
        parts["reg"] = float(ad.raw(v))
        total = ad.add(total, ad.mul(np.float64(weights.regularization), v))
    return total, parts


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


def adam_step(state: AdamState, params, grads, lr):
    """Standard Adam update; returns the new parameter dict."""
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_params = {}
    for key, p in params.items():
        g = np.asarray(ad.raw(grads[key]), dtype=np.float64)
        m = state.m[key] = ADAM_BETA1 * state.m[key] + (1.0 - ADAM_BETA1) * g
        v = state.v[key] = ADAM_BETA2 * state.v[key] + (1.0 - ADAM_BETA2) * g * g
        new_params[key] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return new_params


def lr_schedule(iteration, spec: TrainSpec):
    """Learning rate after the given number of completed iterations."""
    periods = iteration // spec.lr_period
    return max(spec.lr_floor, spec.lr * (1.0 - spec.lr_decay) ** periods)


# ---------------------------------------------------------------------------
# history and the loop
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("iteration", "wall_seconds", "loss_total", "loss_int",
                   "loss_rec", "loss_jac", "loss_mod", "loss_deg", "lr")


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def append(self, iteration, wall_seconds, total, parts, lr):
        if self.rows and iteration <= self.rows[-1][0]:
            return
        self.rows.append((int(iteration), float(wall_seconds), float(total),
                          parts["int"], parts["rec"], parts["jac"],
                          parts["mod"], parts["deg"], float(lr)))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(HISTORY_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(f"{row[0]},{row[1]:.3f}," +
                         ",".join(f"{v:.12e}" for v in row[2:]) + "\n")

    @property
    def totals(self):
        return np.array([r[2] for r in self.rows])


def make_probes(model, spec: TrainSpec, rng):
    """Fixed Rademacher probes for the randomized Frobenius estimate."""
    if spec.jacobian_variant != "frobenius":
        return None
    if model.full_dim <= spec.frobenius_exact_max_dim:
        return None
    return [rng.integers(0, 2, size=model.full_dim) * 2.0 - 1.0
            for _ in range(spec.frobenius_probes)]


def train(model: RomModel, data: TrajectoryData, weights: LossWeights,
          spec: TrainSpec, callback=None):
    """Run the declared iterations of (mini-)batch Adam over all trainable
    parameters jointly; deterministic given the seed.

    Returns the TrainHistory.  On a non-finite loss the parameters are
    restored to the last recorded checkpoint and NonFiniteLossError is
    raised with the partial history attached.
    """
    if data.mu is None and model.is_parametric:
        raise ValueError("parametric model requires mu values in the data")
    needs_derivs = (weights.model > 0 or
                    (weights.jacobian > 0 and spec.jacobian_variant == "derivative"))
    if needs_derivs and data.derivs is None:
        raise ValueError("active derivative-based losses require xdot data; "
                         "use the frobenius variant and drop the model loss")

    rng = np.random.default_rng(spec.seed)
    probes = make_probes(model, spec, rng)
    history = TrainHistory()
    adam = AdamState.zeros_like(model.params)
    start = time.perf_counter()
    last_good = {k: v.copy() for k, v in model.params.items()}

    n_snap = data.n_snapshots
    batch_plan = []

    def next_batch():
        nonlocal batch_plan
        if spec.batches == 1:
            return data.full_batch()
        if not batch_plan:
            perm = rng.permutation(n_snap)
            batch_plan = [np.sort(part) for part in np.array_split(perm, spec.batches)]
        return data.subset(batch_plan.pop(0))

    def loss_fn(params, batch):
        return lambda p: total_loss(model, p, batch, weights, spec, probes)[0]

    parts = {"int": 0.0, "rec": 0.0, "jac": 0.0, "mod": 0.0, "deg": 0.0, "reg": 0.0}
    for it in range(spec.iterations):
        batch = next_batch()
        lr = lr_schedule(it, spec)

        def objective(p):
            total, parts_now = total_loss(model, p, batch, weights, spec, probes)
            parts.update(parts_now)
            return total

        try:
            value, grads = ad.value_and_grad_named(objective, model.params)
        except ad.NumericalOverflowError as exc:
            model.params = last_good
            raise NonFiniteLossError(
                f"non-finite loss at iteration {it}; restored last checkpoint",
                history) from exc
        total_val = float(ad.raw(value))
        if not np.isfinite(total_val):
            model.params = last_good
            raise NonFiniteLossError(
                f"non-finite loss at iteration {it}; restored last checkpoint",
                history)
        model.params = adam_step(adam, model.params, grads, lr)
        if (it + 1) % spec.checkpoint_every == 0 or (it + 1) == spec.iterations:
            history.append(it + 1, time.perf_counter() - start, total_val, parts, lr)
            last_good = {k: v.copy() for k, v in model.params.items()}
            if callback is not None:
                callback(it + 1, model, history)
    if spec.iterations == 0:
        batch = data.full_batch()
        total, parts0 = total_loss(model, model.params, batch, weights, spec, probes)
        history.append(0, time.perf_counter() - start, float(ad.raw(total)),
                       parts0, lr_schedule(0, spec))
    return history
