"""Feed-forward networks, autoencoders, and hypernetwork-generated
autoencoders on top of the autodiff kernels.

The MLP recursion is affine in the first layer and applies the activation
between layers only, so a single-layer network is a plain affine map.  All
forward, input-gradient, and tangent passes are compositions of registered
kernels and therefore differentiable with respect to parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class Activation:
    name: str
    fn: callable
    deriv: callable  # deriv(a, h): derivative from preactivation a and output h


ACTIVATIONS = {
    "tanh": Activation("tanh", ad.tanh,
                       lambda a, h: ad.sub(np.float64(1.0), ad.mul(h, h))),
    "relu": Activation("relu", ad.relu, lambda a, h: ad.step(a)),
    "sine": Activation("sine", ad.sin, lambda a, h: ad.cos(a)),
    "sigmoid": Activation("sigmoid", ad.sigmoid,
                          lambda a, h: ad.mul(h, ad.sub(np.float64(1.0), h))),
    "identity": Activation("identity", lambda a: a,
                           lambda a, h: np.float64(1.0)),
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation '{name}'; "
                         f"choose from {sorted(ACTIVATIONS)}") from None


@dataclass(frozen=True)
class MlpSpec:
    """Widths [n_0, ..., n_L] and a hidden-layer activation."""

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        activation(self.activation)

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def d_out(self):
        return self.widths[-1]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def n_params(self):
        return sum(o * i + o for i, o in zip(self.widths[:-1], self.widths[1:]))

    def param_shapes(self, prefix=""):
        shapes = {}
        for l in range(1, len(self.widths)):
            shapes[f"{prefix}W{l}"] = (self.widths[l], self.widths[l - 1])
            shapes[f"{prefix}b{l}"] = (self.widths[l],)
        return shapes

    def segments(self):
        """Offsets of each (layer, weight|bias) slot in a flat vector."""
        segs = []
        offset = 0
        for name, shape in self.param_shapes().items():
            size = int(np.prod(shape))
            segs.append((name, shape, offset, offset + size))
            offset += size
        return segs


def init_mlp_params(spec, rng, prefix=""):
    """Uniform weights scaled by 1/sqrt(fan_in), zero biases."""
    params = {}
    for l in range(1, len(spec.widths)):
        fan_in = spec.widths[l - 1]
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}W{l}"] = rng.uniform(-bound, bound,
                                              size=(spec.widths[l], fan_in))
        params[f"{prefix}b{l}"] = np.zeros(spec.widths[l])
    return params


def _layer_arrays(spec, params, prefix):
    Ws = [params[f"{prefix}W{l}"] for l in range(1, len(spec.widths))]
    bs = [params[f"{prefix}b{l}"] for l in range(1, len(spec.widths))]
    return Ws, bs


def _as_2d(x, d_in):
    shape = ad.raw_shape(x)
    if shape == (d_in,):
        return ad.reshape(x, (1, d_in)), True
    if len(shape) == 2 and shape[1] == d_in:
        return x, False
    raise ValueError(f"input shape {shape} incompatible with d_in={d_in}")


def mlp_forward(spec, params, x, prefix=""):
    """Evaluate the network on x of shape (d_in,) or (B, d_in)."""
    Ws, bs = _layer_arrays(spec, params, prefix)
    return _mlp_apply(spec, Ws, bs, x)


def _mlp_apply(spec, Ws, bs, x):
    act = activation(spec.activation)
    h, was_1d = _as_2d(x, spec.d_in)
    for l, (W, b) in enumerate(zip(Ws, bs)):
        a = ad.add(ad.matmul(h, ad.transpose(W)), b)
        h = act.fn(a) if l < spec.n_layers - 1 else a
    return ad.reshape(h, (spec.d_out,)) if was_1d else h


def _mlp_trace(spec, Ws, bs, x):
    """Forward pass keeping per-layer (preactivation, output) pairs."""
    act = activation(spec.activation)
    h = x
    cache = []
    for l, (W, b) in enumerate(zip(Ws, bs)):
        a = ad.add(ad.matmul(h, ad.transpose(W)), b)
        h = act.fn(a) if l < spec.n_layers - 1 else a
        cache.append((a, h))
    return h, cache


def mlp_jvp(spec, params, x, v, prefix=""):
    """(value, tangent) of the network at x with input tangent v."""
    Ws, bs = _layer_arrays(spec, params, prefix)
    act = activation(spec.activation)
    h, was_1d = _as_2d(x, spec.d_in)
    t = _as_2d(v, spec.d_in)[0]
    for l, (W, b) in enumerate(zip(Ws, bs)):
        a = ad.add(ad.matmul(h, ad.transpose(W)), b)
        ta = ad.matmul(t, ad.transpose(W))
        if l < spec.n_layers - 1:
            h_next = act.fn(a)
            t = ad.mul(act.deriv(a, h_next), ta)
            h = h_next
        else:
            h, t = a, ta
    if was_1d:
        return ad.reshape(h, (spec.d_out,)), ad.reshape(t, (spec.d_out,))
    return h, t


def mlp_scalar_grad(spec, params, x, prefix=""):
    """Value and input gradient of a scalar-output network.

    Works on batched inputs: x (B, d_in) -> value (B,), grad (B, d_in).
    The gradient is assembled from kernels (a closed-form backward pass), so
    it remains differentiable with respect to the parameters.
    """
    if spec.d_out != 1:
        raise ValueError("mlp_scalar_grad requires a single scalar output")
    Ws, bs = _layer_arrays(spec, params, prefix)
    act = activation(spec.activation)
    h2, was_1d = _as_2d(x, spec.d_in)
    y, cache = _mlp_trace(spec, Ws, bs, h2)
    B = ad.raw_shape(h2)[0]
    v = np.ones((B, 1))
    for l in range(spec.n_layers - 1, 0, -1):
        a_prev, h_prev = cache[l - 1]
        v = ad.mul(ad.matmul(v, Ws[l]), act.deriv(a_prev, h_prev))
    g = ad.matmul(v, Ws[0])
    value = ad.reshape(y, (B,))
    if was_1d:
        return ad.reshape(value, ()), ad.reshape(g, (spec.d_in,))
    return value, g


# ---------------------------------------------------------------------------
# flat parameter vectors (hypernetwork targets)
# ---------------------------------------------------------------------------

def flat_to_layers(spec, theta):
    """Slice a flat parameter vector into (weights, biases) lists."""
    Ws, bs = [], []
    for name, shape, start, stop in spec.segments():
        seg = ad.reshape(ad.take(theta, slice(start, stop)), shape)
        (Ws if name.startswith("W") else bs).append(seg)
    return Ws, bs


def mlp_forward_flat(spec, theta, x):
    Ws, bs = flat_to_layers(spec, theta)
    return _mlp_apply(spec, Ws, bs, x)


def _flat_to_layers_batched(spec, theta_b):
    """theta_b (M, P) -> per-layer weights (M, out, in) and biases (M, 1, out)."""
    M = ad.raw_shape(theta_b)[0]
    Ws, bs = [], []
    for name, shape, start, stop in spec.segments():
        seg = ad.take(theta_b, (slice(None), slice(start, stop)))
        if name.startswith("W"):
            Ws.append(ad.reshape(seg, (M,) + shape))
        else:
            bs.append(ad.reshape(seg, (M, 1) + shape))
    return Ws, bs


def mlp_forward_hyper(spec, theta_b, x):
    """Per-sample-parameter forward: theta_b (M, P), x (M, T, d_in)."""
    act = activation(spec.activation)
    Ws, bs = _flat_to_layers_batched(spec, theta_b)
    h = x
    for l, (W, b) in enumerate(zip(Ws, bs)):
        a = ad.add(ad.einsum("mij,mtj->mti", W, h), b)
        h = act.fn(a) if l < spec.n_layers - 1 else a
    return h


def mlp_jvp_hyper(spec, theta_b, x, v):
    """Value and input tangent of the per-parameter forward pass."""
    act = activation(spec.activation)
    Ws, bs = _flat_to_layers_batched(spec, theta_b)
    h, t = x, v
    for l, (W, b) in enumerate(zip(Ws, bs)):
        a = ad.add(ad.einsum("mij,mtj->mti", W, h), b)
        ta = ad.einsum("mij,mtj->mti", W, t)
        if l < spec.n_layers - 1:
            h = act.fn(a)
            t = ad.mul(act.deriv(a, h), ta)
        else:
            h, t = a, ta
    return h, t


# ---------------------------------------------------------------------------
# autoencoders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Autoencoder:
    """Encoder N -> n and decoder n -> N sharing one parameter dict."""

    encoder: MlpSpec
    decoder: MlpSpec
    allow_equal_dims: bool = False

    def __post_init__(self):
        N, n = self.encoder.d_in, self.encoder.d_out
        if self.decoder.d_in != n or self.decoder.d_out != N:
            raise ValueError(
                f"decoder dims ({self.decoder.d_in}->{self.decoder.d_out}) "
                f"must mirror encoder dims ({N}->{n})")
        if n > N or (n == N and not self.allow_equal_dims):
            raise ValueError(f"latent dim {n} must be < full dim {N} "
                             "(pass allow_equal_dims=True for test setups)")

    @property
    def full_dim(self):
        return self.encoder.d_in

    @property
    def latent_dim(self):
        return self.encoder.d_out

    def init_params(self, rng):
        params = init_mlp_params(self.encoder, rng, prefix="enc.")
        params.update(init_mlp_params(self.decoder, rng, prefix="dec."))
        return params

    def encode(self, params, x, mu=None):
        return _fold(mlp_forward, self.encoder, params, x, "enc.")

    def decode(self, params, z, mu=None):
        return _fold(mlp_forward, self.decoder, params, z, "dec.")

    def reconstruct(self, params, x, mu=None):
        return self.decode(params, self.encode(params, x))

    def encode_jvp(self, params, x, v, mu=None):
        return _fold_jvp(self.encoder, params, x, v, "enc.")

    def decode_jvp(self, params, z, v, mu=None):
        return _fold_jvp(self.decoder, params, z, v, "dec.")


def _fold(fwd, spec, params, x, prefix):
    """Apply a (B, d)-shaped forward to inputs of rank 1, 2, or 3."""
    shape = ad.raw_shape(x)
    if len(shape) <= 2:
        return fwd(spec, params, x, prefix=prefix)
    lead = shape[:-1]
    flat = ad.reshape(x, (int(np.prod(lead)), shape[-1]))
    out = fwd(spec, params, flat, prefix=prefix)
    return ad.reshape(out, lead + (spec.d_out,))


def _fold_jvp(spec, params, x, v, prefix):
    shape = ad.raw_shape(x)
    if len(shape) <= 2:
        return mlp_jvp(spec, params, x, v, prefix=prefix)
    lead = shape[:-1]
    n_flat = int(np.prod(lead))
    xf = ad.reshape(x, (n_flat, shape[-1]))
    vf = ad.reshape(v, (n_flat, shape[-1]))
    y, t = mlp_jvp(spec, params, xf, vf, prefix=prefix)
    return (ad.reshape(y, lead + (spec.d_out,)),
            ad.reshape(t, lead + (spec.d_out,)))


@dataclass(frozen=True)
class HyperAutoencoder:
    """Autoencoder whose weights are emitted by two hypernetworks of mu.

    Each hypernetwork maps the problem parameter mu (dim p) to the full flat
    parameter vector of the template encoder or decoder in one output layer.
    """

    template: Autoencoder
    hyper_encoder: MlpSpec
    hyper_decoder: MlpSpec

    def __post_init__(self):
        if self.hyper_encoder.d_out != self.template.encoder.n_params:
            raise ValueError("hyper-encoder output size must equal the "
                             "template encoder parameter count")
        if self.hyper_decoder.d_out != self.template.decoder.n_params:
            raise ValueError("hyper-decoder output size must equal the "
                             "template decoder parameter count")
        if self.hyper_encoder.d_in != self.hyper_decoder.d_in:
            raise ValueError("hypernetworks must share the parameter dimension")

    @property
    def full_dim(self):
        return self.template.full_dim

    @property
    def latent_dim(self):
        return self.template.latent_dim

    @property
    def mu_dim(self):
        return self.hyper_encoder.d_in

    def init_params(self, rng):
        params = init_mlp_params(self.hyper_encoder, rng, prefix="hyp_e.")
        params.update(init_mlp_params(self.hyper_decoder, rng, prefix="hyp_d."))
        return params

    def hyper_params(self, params, mu):
        """Flat (theta_e(mu), theta_d(mu)) for a single mu of shape (p,)."""
        if ad.raw_shape(mu) != (self.mu_dim,):
            raise ValueError(f"mu must have shape ({self.mu_dim},)")
        theta_e = mlp_forward(self.hyper_encoder, params, mu, prefix="hyp_e.")
        theta_d = mlp_forward(self.hyper_decoder, params, mu, prefix="hyp_d.")
        return theta_e, theta_d

    def _thetas(self, params, mu_batch):
        te = mlp_forward(self.hyper_encoder, params, mu_batch, prefix="hyp_e.")
        td = mlp_forward(self.hyper_decoder, params, mu_batch, prefix="hyp_d.")
        return te, td

    def encode(self, params, x, mu=None):
        x, mu, squeeze = _hyper_args(self, x, mu)
        te, _ = self._thetas(params, mu)
        out = mlp_forward_hyper(self.template.encoder, te, x)
        return _hyper_squeeze(out, squeeze)

    def decode(self, params, z, mu=None):
        z, mu, squeeze = _hyper_args(self, z, mu)
        _, td = self._thetas(params, mu)
        out = mlp_forward_hyper(self.template.decoder, td, z)
        return _hyper_squeeze(out, squeeze)

    def reconstruct(self, params, x, mu=None):
        return self.decode(params, self.encode(params, x, mu), mu)

    def encode_jvp(self, params, x, v, mu=None):
        x, mu, squeeze = _hyper_args(self, x, mu)
        v = _hyper_args(self, v, mu)[0]
        te, _ = self._thetas(params, mu)
        y, t = mlp_jvp_hyper(self.template.encoder, te, x, v)
        return _hyper_squeeze(y, squeeze), _hyper_squeeze(t, squeeze)

    def decode_jvp(self, params, z, v, mu=None):
        z, mu, squeeze = _hyper_args(self, z, mu)
        v = _hyper_args(self, v, mu)[0]
        _, td = self._thetas(params, mu)
        y, t = mlp_jvp_hyper(self.template.decoder, td, z, v)
        return _hyper_squeeze(y, squeeze), _hyper_squeeze(t, squeeze)


def _hyper_args(hae, x, mu):
    """Normalize inputs to x (M, T, d) and mu (M, p)."""
    if mu is None:
        raise ValueError("a hyper-autoencoder requires mu")
    x_shape = ad.raw_shape(x)
    mu_shape = ad.raw_shape(mu)
    if mu_shape == (hae.mu_dim,):
        mu = ad.reshape(mu, (1, hae.mu_dim))
        if len(x_shape) == 1:
            return ad.reshape(x, (1, 1) + x_shape), mu, "vector"
        if len(x_shape) == 2:
            return ad.reshape(x, (1,) + x_shape), mu, "matrix"
        raise ValueError(f"input rank {len(x_shape)} incompatible with single mu")
    if len(x_shape) == 3 and x_shape[0] == mu_shape[0]:
        return x, mu, None
    raise ValueError(f"input shape {x_shape} incompatible with mu shape {mu_shape}")


def _hyper_squeeze(out, squeeze):
    shape = ad.raw_shape(out)
    if squeeze == "vector":
        return ad.reshape(out, (shape[-1],))
    if squeeze == "matrix":
        return ad.reshape(out, shape[1:])
    return out
