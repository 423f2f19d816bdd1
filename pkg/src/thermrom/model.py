"""Reduced-order model composite: one parameter dict spanning the
autoencoder ("ae." prefix) and the latent dynamics ("dyn." prefix)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import FnnDynamics, GfinnDynamics, SpnnDynamics, THERMO_KINDS
from .networks import Autoencoder, HyperAutoencoder


def scoped(params, prefix):
    """View of a parameter dict with a prefix stripped (values shared)."""
    plen = len(prefix)
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix)}


@dataclass
class RomModel:
    """Autoencoder + latent vector field trained as one parameter vector."""

    ae: Autoencoder | HyperAutoencoder
    dyn: GfinnDynamics | SpnnDynamics | FnnDynamics
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        dyn_n = self.dyn.latent_dim
        if dyn_n != self.ae.latent_dim:
            raise ValueError(f"dynamics latent dim {dyn_n} != autoencoder "
                             f"latent dim {self.ae.latent_dim}")

    @classmethod
    def initialized(cls, ae, dyn, seed=0):
        model = cls(ae, dyn)
        rng = np.random.default_rng(seed)
        params = {f"ae.{k}": v for k, v in ae.init_params(rng).items()}
        params.update({f"dyn.{k}": v for k, v in dyn.init_params(rng).items()})
        model.params = params
        return model

    @property
    def is_parametric(self):
        return isinstance(self.ae, HyperAutoencoder)

    @property
    def is_thermodynamic(self):
        return isinstance(self.dyn, THERMO_KINDS)

    @property
    def latent_dim(self):
        return self.ae.latent_dim

    @property
    def full_dim(self):
        return self.ae.full_dim

    def _p(self, params):
        return self.params if params is None else params

    def encode(self, x, mu=None, params=None):
        return self.ae.encode(scoped(self._p(params), "ae."), x, mu)

    def decode(self, z, mu=None, params=None):
        return self.ae.decode(scoped(self._p(params), "ae."), z, mu)

    def reconstruct(self, x, mu=None, params=None):
        return self.ae.reconstruct(scoped(self._p(params), "ae."), x, mu)

    def encode_jvp(self, x, v, mu=None, params=None):
        return self.ae.encode_jvp(scoped(self._p(params), "ae."), x, v, mu)

    def decode_jvp(self, z, v, mu=None, params=None):
        return self.ae.decode_jvp(scoped(self._p(params), "ae."), z, v, mu)

    def rhs(self, z, params=None):
        return self.dyn.rhs(scoped(self._p(params), "dyn."), z)

    def latent_field(self, params=None):
        """Time-independent rhs callable for the integrators."""
        dyn_params = scoped(self._p(params), "dyn.")
        return lambda z, t: self.dyn.rhs(dyn_params, z)

    def dyn_params(self, params=None):
        return scoped(self._p(params), "dyn.")
