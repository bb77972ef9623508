"""Stochastic-interpolant schedules and the denoiser/velocity/score conversions.

The one-sided interpolant is ``x_t = ahat_t * eps + beta_t * x1`` with
``eps ~ N(0, I)`` on the total space. A general bridge
``x_t = alpha_t x0 + beta_t x1 + gamma_t eps`` is available for training with
an arbitrary prior; its one-sided view uses ``ahat = sqrt(alpha^2 + gamma^2)``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidInputError, broadcast_time, check_time

ALPHA_FLOOR = 1e-4


class Schedule:
    """Base class: subclasses provide the one-sided coefficients."""

    name = "abstract"

    def coeffs(self, t):
        """Return ``(ahat, beta, ahat', beta')`` at ``t``."""
        raise NotImplementedError

    def denominator(self, t):
        """``ahat' beta - ahat beta'``, the factor linking velocity and denoiser."""
        a, b, da, db = self.coeffs(t)
        return da * b - a * db

    def to_dict(self):
        return {"name": self.name}


@dataclass(frozen=True)
class LinearOneSided(Schedule):
    """``ahat_t = 1 - t``, ``beta_t = t``; the rectified-flow interpolant."""

    name = "linear-one-sided"

    def coeffs(self, t):
        t = check_time(t)
        one = np.ones_like(t)
        return 1.0 - t, t * one, -one, one

    def to_dict(self):
        return {"name": self.name}


@dataclass(frozen=True)
class GeneralBridge(Schedule):
    """``alpha = 1 - t``, ``beta = t``, ``gamma = a t (1 - t)``."""

    a: float = 1.0
    name = "general-bridge"

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a < 0:
            raise InvalidInputError("bridge amplitude must be finite and non-negative")

    def general_coeffs(self, t):
        """Return ``(alpha, beta, gamma, alpha', beta', gamma')``."""
        t = check_time(t)
        one = np.ones_like(t)
        return (
            1.0 - t,
            t * one,
            self.a * t * (1.0 - t),
            -one,
            one,
            self.a * (1.0 - 2.0 * t),
        )

    def coeffs(self, t):
        al, be, ga, dal, dbe, dga = self.general_coeffs(t)
        ahat = np.sqrt(al**2 + ga**2)
        dahat = (al * dal + ga * dga) / np.maximum(ahat, ALPHA_FLOOR)
        return ahat, be, dahat, dbe

    def to_dict(self):
        return {"name": self.name, "a": self.a}


def make_schedule(name, **kwargs):
    if name == "linear-one-sided":
        return LinearOneSided()
    if name == "general-bridge":
        return GeneralBridge(**kwargs)
    raise InvalidInputError(f"unknown schedule {name!r}")


def coeffs(s, t):
    return s.coeffs(t)


def _floored(ahat):
    return np.maximum(ahat, ALPHA_FLOOR)


def clamp_active(s, t):
    """True where ``ahat_t`` is below the floor used by the conversions."""
    return np.asarray(s.coeffs(t)[0]) < ALPHA_FLOOR


def interpolate(s, noise, x1, t):
    """``x_t = ahat_t noise + beta_t x1``; ``t`` may be per-sample."""
    noise = np.asarray(noise, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if noise.shape != x1.shape:
        raise InvalidInputError(f"noise and x1 shapes differ: {noise.shape} vs {x1.shape}")
    a, b, _, _ = s.coeffs(t)
    return broadcast_time(a, x1) * noise + broadcast_time(b, x1) * x1


def velocity_from_denoiser(s, d_val, x_t, t):
    """``v = (ahat' x_t - (ahat' beta - ahat beta') D) / ahat``."""
    a, b, da, db = s.coeffs(t)
    a, b, da, db = (broadcast_time(c, x_t) for c in (a, b, da, db))
    return (da * x_t - (da * b - a * db) * d_val) / _floored(a)


def score_from_denoiser(s, d_val, x_t, t):
    """``s = -(x_t - beta D) / ahat^2``."""
    a, b, _, _ = s.coeffs(t)
    a, b = broadcast_time(a, x_t), broadcast_time(b, x_t)
    return -(x_t - b * d_val) / _floored(a) ** 2


def score_from_velocity(s, v, x_t, t):
    """``s = (beta' x_t - beta v) / (ahat (ahat' beta - ahat beta'))``."""
    a, b, da, db = s.coeffs(t)
    a, b, da, db = (broadcast_time(c, x_t) for c in (a, b, da, db))
    return (db * x_t - b * v) / (_floored(a) * (da * b - a * db))


def loss_weight(s, t, w=None):
    """Per-sample weight ``w(t) (ahat' beta - ahat beta')^2 / ahat^2``."""
    a, b, da, db = s.coeffs(t)
    base = (da * b - a * db) ** 2 / _floored(a) ** 2
    return base if w is None else w(t) * base
