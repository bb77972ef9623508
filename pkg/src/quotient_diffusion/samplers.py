"""Euler / Euler-Maruyama samplers, conventional and quotient (horizontally lifted).

Quotient SDE step::

    x + [P(v + g s) - g h(x)] dt + sqrt(2 g dt) P(xi),   g = gamma * eta(t)

with ``h`` the lifted mean curvature. Drift ``-g h`` is ``-sigma^2/2 h`` for
``sigma^2 = 2 g``. Stochastic and curvature terms are switched off once
``t >= 1 - cutoff``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ._validation import InvalidInputError
from .objectives import kabsch_rotation, rotation_angle
from .schedule import score_from_denoiser, velocity_from_denoiser

MODES = ("ode", "sde")
VARIANTS = ("conventional", "quotient")


def constant_eta(value=1.0):
    return lambda t: value


@dataclass
class SamplerConfig:
    mode: str = "ode"
    variant: str = "quotient"
    steps: int = 200
    gamma: float = 0.35
    eta: Union[float, Callable] = 1.0
    seed: int = 0
    cutoff: float = 1e-3
    curvature: bool = True
    grid: Optional[np.ndarray] = None
    keep_states: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.steps < 1:
            raise InvalidInputError("steps must be at least 1")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be non-negative")
        if not 0 < self.cutoff <= 0.1:
            raise InvalidInputError("cutoff must lie in (0, 0.1]")
        if self.grid is None:
            self.grid = np.linspace(0.0, 1.0, self.steps + 1)
        else:
            grid = np.asarray(self.grid, dtype=np.float64)
            if grid.shape != (self.steps + 1,) or grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
                raise InvalidInputError("grid must increase strictly from 0 to 1 with steps + 1 points")
            self.grid = grid

    def eta_at(self, t):
        return float(self.eta(t)) if callable(self.eta) else float(self.eta)


def _drift_terms(denoiser, schedule, x, t, need_score):
    d_val = denoiser(x, t)
    v = velocity_from_denoiser(schedule, d_val, x, t)
    s = score_from_denoiser(schedule, d_val, x, t) if need_score else None
    return v, s


def ode_step(variant, space, denoiser, schedule, x, t, dt):
    """One Euler step of ``dx = v dt`` (conventional) or ``dx = P_x v dt`` (quotient)."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    v, _ = _drift_terms(denoiser, schedule, x, t, False)
    if variant == "quotient":
        v = space.project(x, v)
    else:
        v = space.center(v)
    return x + v * dt


def sde_step(variant, space, denoiser, schedule, cfg, x, t, dt, rng):
    """One Euler-Maruyama step; ``gamma = 0`` reproduces :func:`ode_step` exactly."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    g = cfg.gamma * cfg.eta_at(t)
    if g == 0.0 or t >= 1.0 - cfg.cutoff:
        return ode_step(variant, space, denoiser, schedule, x, t, dt)
    v, s = _drift_terms(denoiser, schedule, x, t, True)
    xi = space.noise(rng, x.shape[:-2] or None)
    if variant == "quotient":
        drift = space.project(x, v + g * s)
        if cfg.curvature:
            drift = drift - g * space.mean_curvature(x, check=False)
        kick = space.project(x, xi, check=False)
    else:
        drift = space.center(v + g * s)
        kick = xi
    return x + drift * dt + np.sqrt(2.0 * g * dt) * kick


@dataclass
class Trajectory:
    """States on the time grid plus per-step diagnostics.

    ``states`` has shape ``(K + 1, B, N, d)`` (or only the final state when
    states are not kept). Diagnostic arrays have shape ``(K, B)`` and describe
    the displacement from step ``i`` to ``i + 1``.
    """

    times: np.ndarray
    states: np.ndarray
    step_norm: np.ndarray
    vertical_norm: np.ndarray
    ang_mom_norm: np.ndarray
    frame_rot_angle: np.ndarray
    config: Optional[SamplerConfig] = field(default=None, repr=False)

    @property
    def final(self):
        return self.states[-1]

    @property
    def initial(self):
        return self.states[0]

    def tangential_fraction(self):
        """Per-sample ``sum |vertical part| / sum |step|`` over the trajectory."""
        total = self.step_norm.sum(axis=0)
        return np.where(total > 0, self.vertical_norm.sum(axis=0) / np.where(total > 0, total, 1.0), 0.0)


def _frame_angles(space, a, b):
    if space.dim == 2:
        cross = a[..., 0, 0] * b[..., 0, 1] - a[..., 0, 1] * b[..., 0, 0]
        dot = np.sum(a * b, axis=(-1, -2))
        return np.abs(np.arctan2(cross, dot))
    R, _ = kabsch_rotation(a, b)
    return rotation_angle(R)


def step_diagnostics(space, x, x_next):
    """Norms of the displacement, its vertical part, angular momentum, frame rotation."""
    dx = x_next - x
    step = np.linalg.norm(dx.reshape(dx.shape[:-2] + (-1,)), axis=-1)
    safe = ~space.degenerate_mask(x)
    vert = np.zeros_like(step)
    if np.any(safe):
        vpart = space.vertical_part(x[safe], dx[safe], check=False)
        vert[safe] = np.linalg.norm(vpart.reshape(vpart.shape[:-2] + (-1,)), axis=-1)
    mom = np.abs(space.momentum(x, dx))
    mom = mom if mom.ndim == step.ndim else np.linalg.norm(mom, axis=-1)
    return step, vert, mom, _frame_angles(space, x, x_next)


def prior_sample(space, n, rng, moment_match=False):
    """``n`` standard normal draws on ``M``.

    With ``moment_match`` the draws are affinely corrected so their sample
    mean is zero and their sample covariance equals the prior covariance
    exactly. This removes the ``O(1/sqrt(n))`` finite-sample covariance error
    of the starting points without changing the transport.
    """
    x = space.noise(rng, n)
    if not moment_match:
        return x
    flat = x.reshape(n, -1)
    # orthonormal basis of M inside the flattened coordinates
    basis = np.linalg.svd(space.center(np.eye(flat.shape[1]).reshape((-1,) + space.shape)).reshape(flat.shape[1], -1))[0]
    basis = basis[:, : space.ambient_dim]
    if n <= space.ambient_dim:
        raise InvalidInputError("moment matching needs more draws than the dimension of M")
    z = flat @ basis
    z = z - z.mean(axis=0)
    L = np.linalg.cholesky(np.cov(z, rowvar=False))
    z = np.linalg.solve(L, z.T).T
    return (z @ basis.T).reshape(x.shape)


def sample(config, space, denoiser, schedule, x0=None, n=None):
    """Run the Euler / Euler-Maruyama sampler over ``config.grid``.

    ``x0`` defaults to ``n`` draws from the prior on ``M`` using ``config.seed``.
    The noise stream uses the same generator after the prior draw.
    """
    rng = np.random.default_rng(config.seed)
    if x0 is None:
        if n is None:
            raise InvalidInputError("provide x0 or n")
        x0 = prior_sample(space, n, rng)
    x = space.validate(np.asarray(x0, dtype=np.float64))
    if x.ndim == 2:
        x = x[None]
    grid = config.grid
    K = len(grid) - 1
    shape = (K, x.shape[0])
    diag = {k: np.zeros(shape) for k in ("step", "vert", "mom", "rot")}
    states = [x] if config.keep_states else None
    for i in range(K):
        t, dt = float(grid[i]), float(grid[i + 1] - grid[i])
        if config.variant == "quotient":
            space.check_nondegenerate(x)
        if config.mode == "ode":
            x_next = ode_step(config.variant, space, denoiser, schedule, x, t, dt)
        else:
            x_next = sde_step(config.variant, space, denoiser, schedule, config, x, t, dt, rng)
        (diag["step"][i], diag["vert"][i], diag["mom"][i], diag["rot"][i]) = step_diagnostics(space, x, x_next)
        x = x_next
        if states is not None:
            states.append(x)
    all_states = np.stack(states) if states is not None else x[None]
    return Trajectory(np.asarray(grid), all_states, diag["step"], diag["vert"], diag["mom"], diag["rot"], config)


def trajectory_length(traj):
    """Per-sample path length ``sum_i |x_{i+1} - x_i|`` (array of shape ``(B,)``)."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj)
    if states.shape[0] < 2:
        raise InvalidInputError("need at least two states")
    d = np.diff(states, axis=0)
    return np.linalg.norm(d.reshape(d.shape[:-2] + (-1,)), axis=-1).sum(axis=0)
