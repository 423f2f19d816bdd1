"""Latent right-hand-side models.

``GfinnDynamics`` assembles the latent vector field

    dz/dt = L(z) grad E(z) + M(z) grad S(z)

with L skew-symmetric, M symmetric positive semi-definite, and the
degeneracies L grad S = M grad E = 0 holding *by construction*: both matrices
are sandwiched between Q-matrices whose rows are (A_j grad g)^T for trainable
skew bases A_j, which annihilate grad g identically.  ``SpnnDynamics`` keeps
the skew/PSD structure but enforces degeneracy only through a penalty, and
``FnnDynamics`` is the unstructured baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .networks import MlpSpec, init_mlp_params, mlp_forward, mlp_scalar_grad


def realize_skew(B):
    """Map unconstrained (K, n, n) matrices to exactly skew-symmetric ones."""
    return ad.sub(B, ad.transpose(B, (0, 2, 1)))


def q_matrix(grad_g, basis):
    """Matrix with j-th row (A_j grad_g)^T; annihilates grad_g identically.

    ``grad_g`` may be a single (n,) vector (returns (K, n)) or a batch (B, n)
    (returns (B, K, n)).  ``basis`` holds the realized skew matrices (K, n, n).
    """
    shape = ad.raw_shape(grad_g)
    if len(shape) == 1:
        if ad.raw_shape(basis)[-1] != shape[0]:
            raise ValueError("basis and gradient dimensions disagree")
        return ad.einsum("jik,k->ji", basis, grad_g)
    if ad.raw_shape(basis)[-1] != shape[-1]:
        raise ValueError("basis and gradient dimensions disagree")
    return ad.einsum("jik,bk->bji", basis, grad_g)


def _as_batch(z, n):
    shape = ad.raw_shape(z)
    if shape == (n,):
        return ad.reshape(z, (1, n)), True
    if len(shape) == 2 and shape[1] == n:
        return z, False
    raise ValueError(f"latent state shape {shape} incompatible with n={n}")


@dataclass(frozen=True)
class GfinnDynamics:
    """GENERIC latent dynamics with structurally exact degeneracy."""

    latent_dim: int
    k_modes: int
    energy_net: MlpSpec
    entropy_net: MlpSpec
    skew_net: MlpSpec   # z -> K*K, antisymmetrized into U(z)
    psd_net: MlpSpec    # z -> K*K, used as D(z) D(z)^T
    shared_basis: bool = False

    def __post_init__(self):
        n, K = self.latent_dim, self.k_modes
        for name, net, d_out in (("energy", self.energy_net, 1),
                                 ("entropy", self.entropy_net, 1),
                                 ("skew", self.skew_net, K * K),
                                 ("psd", self.psd_net, K * K)):
            if net.d_in != n:
                raise ValueError(f"{name} net input dim {net.d_in} != latent dim {n}")
            if net.d_out != d_out:
                raise ValueError(f"{name} net output dim {net.d_out} != {d_out}")

    @classmethod
    def build(cls, latent_dim, hidden=(40, 40), activation="tanh",
              k_modes=None, shared_basis=False):
        n = int(latent_dim)
        K = n if k_modes is None else int(k_modes)
        hidden = tuple(hidden)
        return cls(
            latent_dim=n,
            k_modes=K,
            energy_net=MlpSpec((n,) + hidden + (1,), activation),
            entropy_net=MlpSpec((n,) + hidden + (1,), activation),
            skew_net=MlpSpec((n,) + hidden + (K * K,), activation),
            psd_net=MlpSpec((n,) + hidden + (K * K,), activation),
            shared_basis=shared_basis,
        )

    def init_params(self, rng):
        params = init_mlp_params(self.energy_net, rng, prefix="E.")
        params.update(init_mlp_params(self.entropy_net, rng, prefix="S."))
        params.update(init_mlp_params(self.skew_net, rng, prefix="U."))
        params.update(init_mlp_params(self.psd_net, rng, prefix="D."))
        n, K = self.latent_dim, self.k_modes
        bound = 1.0 / np.sqrt(n)
        if self.shared_basis:
            params["A"] = rng.uniform(-bound, bound, size=(K, n, n))
        else:
            params["AL"] = rng.uniform(-bound, bound, size=(K, n, n))
            params["AM"] = rng.uniform(-bound, bound, size=(K, n, n))
        return params

    def bases(self, params):
        """Realized skew bases for the L branch and the M branch."""
        if self.shared_basis:
            A = realize_skew(params["A"])
            return A, A
        return realize_skew(params["AL"]), realize_skew(params["AM"])

    def energy_entropy(self, params, z):
        """(E, S, grad E, grad S) at z of shape (n,) or (B, n)."""
        Z, single = _as_batch(z, self.latent_dim)
        E, gE = mlp_scalar_grad(self.energy_net, params, Z, prefix="E.")
        S, gS = mlp_scalar_grad(self.entropy_net, params, Z, prefix="S.")
        if single:
            n = self.latent_dim
            return (ad.reshape(E, ()), ad.reshape(S, ()),
                    ad.reshape(gE, (n,)), ad.reshape(gS, (n,)))
        return E, S, gE, gS

    def _skew_u(self, params, Z):
        B = ad.raw_shape(Z)[0]
        K = self.k_modes
        U_raw = ad.reshape(mlp_forward(self.skew_net, params, Z, prefix="U."),
                           (B, K, K))
        return ad.sub(U_raw, ad.transpose(U_raw, (0, 2, 1)))

    def _psd_d(self, params, Z):
        B = ad.raw_shape(Z)[0]
        K = self.k_modes
        return ad.reshape(mlp_forward(self.psd_net, params, Z, prefix="D."),
                          (B, K, K))

    def rhs(self, params, z):
        """L(z) grad E(z) + M(z) grad S(z) without materializing L or M."""
        Z, single = _as_batch(z, self.latent_dim)
        _, _, gE, gS = self.energy_entropy(params, Z)
        A_L, A_M = self.bases(params)

        Qs = ad.einsum("jik,bk->bji", A_L, gS)
        U = self._skew_u(params, Z)
        w = ad.einsum("bjk,bk->bj", Qs, gE)
        LgE = ad.einsum("bji,bj->bi", Qs, ad.einsum("bjl,bl->bj", U, w))

        Qe = ad.einsum("jik,bk->bji", A_M, gE)
        D = self._psd_d(params, Z)
        w2 = ad.einsum("bjk,bk->bj", Qe, gS)
        DtW = ad.einsum("bjl,bj->bl", D, w2)
        MgS = ad.einsum("bji,bj->bi", Qe, ad.einsum("bjl,bl->bj", D, DtW))

        out = ad.add(LgE, MgS)
        return ad.reshape(out, (self.latent_dim,)) if single else out

    def poisson_matrix(self, params, z):
        """Materialized L(z) = Q_S^T U(z) Q_S, exactly skew-symmetric."""
        Z, single = _as_batch(z, self.latent_dim)
        _, _, _, gS = self.energy_entropy(params, Z)
        A_L, _ = self.bases(params)
        Qs = ad.einsum("jik,bk->bji", A_L, gS)
        U = self._skew_u(params, Z)
        UQ = ad.einsum("bjl,blk->bjk", U, Qs)
        L = ad.einsum("bji,bjk->bik", Qs, UQ)
        _finite_or_raise(L, "Poisson matrix")
        n = self.latent_dim
        return ad.reshape(L, (n, n)) if single else L

    def friction_matrix(self, params, z):
        """Materialized M(z) = (Q_E^T D)(Q_E^T D)^T, symmetric PSD."""
        Z, single = _as_batch(z, self.latent_dim)
        _, _, gE, _ = self.energy_entropy(params, Z)
        _, A_M = self.bases(params)
        Qe = ad.einsum("jik,bk->bji", A_M, gE)
        D = self._psd_d(params, Z)
        C = ad.einsum("bji,bjl->bil", Qe, D)
        M = ad.einsum("bil,bkl->bik", C, C)
        _finite_or_raise(M, "friction matrix")
        n = self.latent_dim
        return ad.reshape(M, (n, n)) if single else M

    def degeneracy_penalty(self, params, z):
        """sum ||L grad S||^2 + ||M grad E||^2 over the batch.

        Structurally zero here (up to roundoff); exposed so the penalty can
        be cross-checked against the penalty-based model.
        """
        Z, _ = _as_batch(z, self.latent_dim)
        _, _, gE, gS = self.energy_entropy(params, Z)
        L = self.poisson_matrix(params, Z)
        M = self.friction_matrix(params, Z)
        LgS = ad.einsum("bik,bk->bi", L, gS)
        MgE = ad.einsum("bik,bk->bi", M, gE)
        return ad.add(ad.sumsq(LgS), ad.sumsq(MgE))


@dataclass(frozen=True)
class SpnnDynamics:
    """GENERIC parameterization with exact skew/PSD structure but degeneracy
    enforced only through ``degeneracy_penalty`` during training."""

    latent_dim: int
    energy_net: MlpSpec
    entropy_net: MlpSpec
    skew_net: MlpSpec   # z -> n*n, antisymmetrized into L(z)
    psd_net: MlpSpec    # z -> n*n, used as D(z) D(z)^T = M(z)

    def __post_init__(self):
        n = self.latent_dim
        for name, net, d_out in (("energy", self.energy_net, 1),
                                 ("entropy", self.entropy_net, 1),
                                 ("skew", self.skew_net, n * n),
                                 ("psd", self.psd_net, n * n)):
            if net.d_in != n or net.d_out != d_out:
                raise ValueError(f"{name} net dims ({net.d_in}->{net.d_out}) "
                                 f"incompatible with latent dim {n}")

    @classmethod
    def build(cls, latent_dim, hidden=(40, 40), activation="tanh"):
        n = int(latent_dim)
        hidden = tuple(hidden)
        return cls(
            latent_dim=n,
            energy_net=MlpSpec((n,) + hidden + (1,), activation),
            entropy_net=MlpSpec((n,) + hidden + (1,), activation),
            skew_net=MlpSpec((n,) + hidden + (n * n,), activation),
            psd_net=MlpSpec((n,) + hidden + (n * n,), activation),
        )

    def init_params(self, rng):
        params = init_mlp_params(self.energy_net, rng, prefix="E.")
        params.update(init_mlp_params(self.entropy_net, rng, prefix="S."))
        params.update(init_mlp_params(self.skew_net, rng, prefix="L."))
        params.update(init_mlp_params(self.psd_net, rng, prefix="D."))
        return params

    def energy_entropy(self, params, z):
        Z, single = _as_batch(z, self.latent_dim)
        E, gE = mlp_scalar_grad(self.energy_net, params, Z, prefix="E.")
        S, gS = mlp_scalar_grad(self.entropy_net, params, Z, prefix="S.")
        if single:
            n = self.latent_dim
            return (ad.reshape(E, ()), ad.reshape(S, ()),
                    ad.reshape(gE, (n,)), ad.reshape(gS, (n,)))
        return E, S, gE, gS

    def poisson_matrix(self, params, z):
        Z, single = _as_batch(z, self.latent_dim)
        B, n = ad.raw_shape(Z)[0], self.latent_dim
        R = ad.reshape(mlp_forward(self.skew_net, params, Z, prefix="L."), (B, n, n))
        L = ad.sub(R, ad.transpose(R, (0, 2, 1)))
        return ad.reshape(L, (n, n)) if single else L

    def friction_matrix(self, params, z):
        Z, single = _as_batch(z, self.latent_dim)
        B, n = ad.raw_shape(Z)[0], self.latent_dim
        D = ad.reshape(mlp_forward(self.psd_net, params, Z, prefix="D."), (B, n, n))
        M = ad.einsum("bil,bkl->bik", D, D)
        return ad.reshape(M, (n, n)) if single else M

    def rhs(self, params, z):
        Z, single = _as_batch(z, self.latent_dim)
        _, _, gE, gS = self.energy_entropy(params, Z)
        L = self.poisson_matrix(params, Z)
        M = self.friction_matrix(params, Z)
        out = ad.add(ad.einsum("bik,bk->bi", L, gE),
                     ad.einsum("bik,bk->bi", M, gS))
        _finite_or_raise(out, "latent vector field")
        return ad.reshape(out, (self.latent_dim,)) if single else out

    def degeneracy_penalty(self, params, z):
        Z, _ = _as_batch(z, self.latent_dim)
        _, _, gE, gS = self.energy_entropy(params, Z)
        L = self.poisson_matrix(params, Z)
        M = self.friction_matrix(params, Z)
        LgS = ad.einsum("bik,bk->bi", L, gS)
        MgE = ad.einsum("bik,bk->bi", M, gE)
        return ad.add(ad.sumsq(LgS), ad.sumsq(MgE))


@dataclass(frozen=True)
class FnnDynamics:
    """Plain feed-forward latent vector field (no imposed structure)."""

    net: MlpSpec

    def __post_init__(self):
        if self.net.d_in != self.net.d_out:
            raise ValueError("latent vector field must map n -> n")

    @classmethod
    def build(cls, latent_dim, hidden=(40, 40), activation="tanh"):
        n = int(latent_dim)
        return cls(MlpSpec((n,) + tuple(hidden) + (n,), activation))

    @property
    def latent_dim(self):
        return self.net.d_in

    def init_params(self, rng):
        return init_mlp_params(self.net, rng, prefix="F.")

    def rhs(self, params, z):
        return mlp_forward(self.net, params, z, prefix="F.")


THERMO_KINDS = (GfinnDynamics, SpnnDynamics)


def thermo_trace(dyn, params, trajectory):
    """Per-state series E, S, dE/dt, dS/dt along a latent trajectory.

    The rates are the chain-rule values grad E . F and grad S . F under the
    model's own vector field, so for the structurally degenerate model dE/dt
    vanishes and dS/dt is non-negative up to roundoff.
    """
    if not isinstance(dyn, THERMO_KINDS):
        raise TypeError("thermodynamic series require an energy/entropy model")
    Z, _ = _as_batch(trajectory, dyn.latent_dim)
    E, S, gE, gS = dyn.energy_entropy(params, Z)
    F = dyn.rhs(params, Z)
    return {
        "E": E,
        "S": S,
        "dEdt": ad.dot_rows(gE, F),
        "dSdt": ad.dot_rows(gS, F),
    }


def _finite_or_raise(x, what):
    v = ad.raw(x)
    if isinstance(v, np.ndarray) and not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite entries in {what}")
