"""Denoising models ``D(x_t, t) -> x1_hat``.

:class:`MLPDenoiser` is a small tanh multilayer perceptron with hand-written
reverse-mode gradients. :class:`GaussianDenoiser` is the exact posterior mean
for an isotropic Gaussian target and serves as ground truth.
"""

import json

import numpy as np

from ._validation import InvalidInputError, broadcast_time, check_cloud
from .geometry import make_space
from .schedule import ALPHA_FLOOR, make_schedule

CHECKPOINT_FORMAT = "quotient-diffusion-mlp"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h: 1.0 - h**2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda h: (h > 0).astype(h.dtype)),
}


def time_features(t, n_frequencies=8, batch=None):
    """``[t, sin(pi j t), cos(pi j t)]`` for ``j = 1..n_frequencies``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(1 if batch is None else batch, float(t))
    elif batch is not None and t.shape[0] != batch:
        raise InvalidInputError(f"got {t.shape[0]} times for a batch of {batch}")
    omega = np.pi * np.arange(1, n_frequencies + 1)
    phase = t[:, None] * omega
    return np.concatenate([t[:, None], np.sin(phase), np.cos(phase)], axis=1)


class MLPDenoiser:
    """Multilayer perceptron denoiser on a :class:`~quotient_diffusion.geometry.SymmetrySpace`.

    The input is the flattened cloud concatenated with :func:`time_features`
    (and, with ``norm_features``, the rotation-invariant point norms ``|x_n|``);
    the output is reshaped to a cloud and re-centred so the model maps ``M``
    into ``M``.

    With ``data_scale`` set, the network output ``F`` is preconditioned as
    ``D = c_skip(t) x + c_out(t) F`` where ``c_skip`` is the posterior-mean
    gain of a Gaussian target with standard deviation ``data_scale`` and
    ``c_out = ahat data_scale / sqrt(beta^2 data_scale^2 + ahat^2)``. Since
    ``c_out`` vanishes with ``ahat``, errors in ``F`` are not amplified by the
    ``1 / ahat`` of the velocity conversion near the data end.

    Parameters
    ----------
    space : SymmetrySpace
    hidden : tuple of int
        Hidden layer widths.
    n_frequencies : int
        Sinusoidal time frequencies.
    activation : {"tanh", "relu"}
    seed : int
        Seed for Glorot-uniform initialisation.
    data_scale : float or None
        Enables output preconditioning (see above).
    norm_features : bool
        Append ``|x_n|`` for every point to the input.
    schedule : Schedule, optional
        Interpolant used by the preconditioning; linear one-sided by default.
    """

    def __init__(
        self, space, hidden=(128, 128, 128), n_frequencies=8, activation="tanh", seed=0, data_scale=None, schedule=None,
        norm_features=False,
    ):
        if activation not in _ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {activation!r}")
        if data_scale is not None and not data_scale > 0:
            raise InvalidInputError("data_scale must be positive")
        self.data_scale = None if data_scale is None else float(data_scale)
        self.schedule = make_schedule("linear-one-sided") if schedule is None else schedule
        self.norm_features = bool(norm_features)
        self.space = space
        self.hidden = tuple(int(h) for h in hidden)
        self.n_frequencies = int(n_frequencies)
        self.activation = activation
        self.seed = seed
        n_out = space.n_points * space.dim
        n_in = n_out + 1 + 2 * self.n_frequencies + (space.n_points if self.norm_features else 0)
        sizes = [n_in, *self.hidden, n_out]
        rng = np.random.default_rng(seed)
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append([rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)])

    @property
    def layer_sizes(self):
        return [self.params[0][0].shape[0]] + [W.shape[1] for W, _ in self.params]

    @property
    def input_width(self):
        return self.layer_sizes[0]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in self.params)

    def _inputs(self, x, t):
        x = check_cloud(x, dim=self.space.dim, n_points=self.space.n_points)
        single = x.ndim == 2
        xb = x[None] if single else x.reshape((-1,) + self.space.shape)
        t_arr = np.asarray(t, dtype=np.float64)
        t_arr = t_arr.reshape(-1) if t_arr.ndim else t_arr
        feats = time_features(t_arr, self.n_frequencies, batch=xb.shape[0])
        parts = [xb.reshape(xb.shape[0], -1), feats]
        if self.norm_features:
            parts.append(np.linalg.norm(xb, axis=-1))
        return np.concatenate(parts, axis=1), x.shape

    def _precondition(self, t):
        a, b, _, _ = self.schedule.coeffs(t)
        s2 = self.data_scale**2
        denom = b**2 * s2 + a**2
        return b * s2 / denom, a * self.data_scale / np.sqrt(denom)

    def forward_with_cache(self, x, t):
        z, shape = self._inputs(x, t)
        act, _ = _ACTIVATIONS[self.activation]
        cache = [z]
        for i, (W, b) in enumerate(self.params):
            z = z @ W + b
            if i < len(self.params) - 1:
                z = act(z)
            cache.append(z)
        out = self.space.center(z.reshape(shape))
        if self.data_scale is not None:
            x = np.asarray(x, dtype=np.float64)
            c_skip, c_out = self._precondition(t)
            out = broadcast_time(c_skip, out) * x + broadcast_time(c_out, out) * out
        return out, cache

    def forward(self, x, t):
        return self.forward_with_cache(x, t)[0]

    __call__ = forward

    def backward(self, x, t, upstream, cache=None):
        """Gradient of ``<forward(x, t), upstream>`` w.r.t. every parameter.

        Returns a list of ``[dW, db]`` pairs matching :attr:`params`.
        """
        if cache is None:
            _, cache = self.forward_with_cache(x, t)
        upstream = np.asarray(upstream, dtype=np.float64)
        if self.data_scale is not None:
            upstream = broadcast_time(self._precondition(t)[1], upstream) * upstream
        n_out = self.params[-1][0].shape[1]
        # centring is a symmetric projection, so it passes straight through
        g = self.space.center(upstream).reshape(-1, n_out)
        if g.shape[0] != cache[0].shape[0]:
            raise InvalidInputError("upstream shape does not match the forward batch")
        _, dact = _ACTIVATIONS[self.activation]
        grads = [None] * len(self.params)
        for i in range(len(self.params) - 1, -1, -1):
            W, _ = self.params[i]
            if i < len(self.params) - 1:
                g = g * dact(cache[i + 1])
            grads[i] = [cache[i].T @ g, g.sum(axis=0)]
            if i > 0:
                g = g @ W.T
        return grads

    # -- flat parameter views, used by optimisers and gradient checks --------
    def get_flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise InvalidInputError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for layer in self.params:
            for j, arr in enumerate(layer):
                layer[j] = flat[pos:pos + arr.size].reshape(arr.shape).copy()
                pos += arr.size

    @staticmethod
    def flatten_grads(grads):
        return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])

    def copy(self):
        other = object.__new__(MLPDenoiser)
        other.__dict__.update(self.__dict__)
        other.params = [[W.copy(), b.copy()] for W, b in self.params]
        return other

    # -- checkpoints ---------------------------------------------------------
    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layout": {
                "space": self.space.to_dict(),
                "hidden": list(self.hidden),
                "n_frequencies": self.n_frequencies,
                "activation": self.activation,
                "data_scale": self.data_scale,
                "norm_features": self.norm_features,
                "schedule": self.schedule.to_dict(),
                "layer_sizes": self.layer_sizes,
                "input": "flattened coords | [t, sin(pi j t), cos(pi j t)] | point norms (optional)",
            },
            "params": [[W.tolist(), b.tolist()] for W, b in self.params],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError("not a quotient-diffusion MLP checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {data.get('version')}")
        lay = data["layout"]
        sp = lay["space"]
        space = make_space(sp["name"], sp["n_points"], eps=sp.get("eps", 0.0))
        sched = dict(lay.get("schedule", {"name": "linear-one-sided"}))
        schedule = make_schedule(sched.pop("name"), **sched)
        model = cls(
            space, lay["hidden"], lay["n_frequencies"], lay["activation"], seed=0,
            data_scale=lay.get("data_scale"), schedule=schedule, norm_features=lay.get("norm_features", False),
        )
        params = [[np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)] for W, b in data["params"]]
        if [p[0].shape for p in params] != [p[0].shape for p in model.params]:
            raise InvalidInputError("checkpoint parameter shapes do not match its layout header")
        model.params = params
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class GaussianDenoiser:
    """Exact ``E[x1 | x_t]`` for a ``N(0, sigma^2 I)`` target on ``M``.

    For the one-sided interpolant this is
    ``beta sigma^2 / (beta^2 sigma^2 + ahat^2) * x_t``.
    """

    def __init__(self, sigma=1.0, schedule=None):
        if not sigma > 0:
            raise InvalidInputError("sigma must be positive")
        self.sigma = float(sigma)
        self.schedule = make_schedule("linear-one-sided") if schedule is None else schedule

    def gain(self, t):
        a, b, _, _ = self.schedule.coeffs(t)
        s2 = self.sigma**2
        return b * s2 / (b**2 * s2 + a**2)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        return broadcast_time(self.gain(t), x) * x

    forward = __call__


def analytic_gaussian_denoiser(sigma, s, x_t, t):
    return GaussianDenoiser(sigma, s)(x_t, t)


class VerticalSpin:
    """Adds an SO(3)-equivariant purely vertical field to another denoiser.

    The extra output is ``strength * (w(x) x x_n)_n / |x|^2`` with the
    pseudovector ``w(x) = sum_n x_n x x_{n+1}`` (indices cyclic). It rotates the cloud
    rigidly, so it changes conventional trajectories but is invisible after
    horizontal projection.
    """

    def __init__(self, base, strength=1.0):
        self.base = base
        self.strength = float(strength)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        w = np.cross(x, np.roll(x, -1, axis=-2)).sum(axis=-2)
        w = w / np.sum(x**2, axis=(-1, -2))[..., None]
        return self.base(x, t) + self.strength * np.cross(w[..., None, :], x)

    forward = __call__


class DenoiserVelocity:
    """View a denoiser as a velocity model through the one-sided conversion.

    ``backward`` maps a velocity-space upstream to denoiser parameter
    gradients, which lets the general-prior objective train a denoiser.
    """

    def __init__(self, denoiser, schedule):
        self.denoiser = denoiser
        self.schedule = schedule

    def _factors(self, x, t):
        a, b, da, db = self.schedule.coeffs(t)
        floor = np.maximum(a, ALPHA_FLOOR)
        return broadcast_time(da / floor, x), broadcast_time((da * b - a * db) / floor, x)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        c_x, c_d = self._factors(x, t)
        return c_x * x - c_d * self.denoiser(x, t)

    forward = __call__

    def backward(self, x, t, upstream):
        _, c_d = self._factors(np.asarray(x), t)
        return self.denoiser.backward(x, t, -c_d * upstream)
