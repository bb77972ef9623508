"""Training objectives for denoisers under rotational symmetry, and the training loop.

Four strategies are implemented:

==================  =========================================================
``conventional``    ``E w(t) (d/ahat)^2 |D(x_t,t) - x1|^2``
``geodiff_align``   target ``x1`` aligned onto ``x_t``
``af3_align``       target ``x1`` aligned onto the (frozen) model output
``quotient``        residual projected onto the horizontal space at ``x_t``
==================  =========================================================

plus ``quotient_general``, the velocity-matching horizontal objective for an
interpolant ``alpha x0 + beta x1 + gamma eps``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from ._validation import InvalidInputError, broadcast_time, check_cloud
from .denoiser import DenoiserVelocity, MLPDenoiser
from .schedule import ALPHA_FLOOR, interpolate

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("conventional", "geodiff_align", "af3_align", "quotient", "quotient_general")
WEIGHTINGS = ("velocity", "denoiser")


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


def kabsch_rotation(x, y, eps=1e-8):
    """Proper rotation ``R`` minimising ``|x R^T - y|`` for each pair of clouds.

    Uses the SVD of ``H = sum_n y_n x_n^T`` with a determinant correction so
    ``R`` stays in SO(d).

    Returns
    -------
    R : ndarray, shape (..., d, d)
    ambiguous : ndarray of bool
        True where the optimum is not unique (``H`` of rank <= d - 2 relative
        to ``eps``); ``R`` is then one deterministic minimiser.
    """
    x = check_cloud(x)
    y = check_cloud(y, name="y")
    if x.shape[-2:] != y.shape[-2:]:
        raise InvalidInputError(f"clouds differ in shape: {x.shape} vs {y.shape}")
    H = np.einsum("...ni,...nj->...ij", y, x)
    U, S, Vt = np.linalg.svd(H)
    sign = np.sign(np.linalg.det(U @ Vt))
    sign = np.where(sign == 0, 1.0, sign)
    d = x.shape[-1]
    D = np.broadcast_to(np.eye(d), sign.shape + (d, d)).copy()
    D[..., -1, -1] = sign
    R = U @ D @ Vt
    scale = np.maximum(S[..., 0], np.finfo(float).tiny)
    ambiguous = (S[..., 0] <= np.finfo(float).tiny) | (S[..., d - 2] <= eps * scale) if d > 2 else S[..., 0] <= eps
    return R, ambiguous


def kabsch_rotation_polar(x, y):
    """Closed form ``R = H (H^T H)^(-1/2)``; valid only for non-singular ``H``
    whose optimal orthogonal factor is proper."""
    H = np.einsum("...ni,...nj->...ij", np.asarray(y, float), np.asarray(x, float))
    w, V = np.linalg.eigh(np.swapaxes(H, -1, -2) @ H)
    inv_sqrt = (V / np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return H @ inv_sqrt


def kabsch_align(x, y, eps=1e-8):
    """Rotate ``x`` onto ``y`` (both centred): the alignment operator ``A_y(x)``."""
    R, _ = kabsch_rotation(x, y, eps)
    return np.einsum("...ij,...nj->...ni", R, np.asarray(x, float))


def rotation_angle(R):
    """Angle in radians of each rotation matrix (2x2 or 3x3)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-1] == 2:
        return np.abs(np.arctan2(R[..., 1, 0], R[..., 0, 0]))
    # robust near the identity, unlike arccos of the trace
    skew = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    tr = np.trace(R, axis1=-2, axis2=-1)
    return np.arctan2(0.5 * np.linalg.norm(skew, axis=-1), 0.5 * (tr - 1.0))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """One minibatch: clean samples, noise draws and times (plus ``x0`` for bridges)."""

    x1: np.ndarray
    noise: np.ndarray
    t: np.ndarray
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.noise = np.asarray(self.noise, dtype=np.float64)
        self.t = np.atleast_1d(np.asarray(self.t, dtype=np.float64))
        if self.x1.ndim != 3 or self.noise.shape != self.x1.shape:
            raise InvalidInputError("batch x1 and noise must both have shape (B, N, d)")
        if self.t.shape != (self.x1.shape[0],):
            raise InvalidInputError("batch needs one time per sample")
        if self.x1.shape[0] == 0:
            raise InvalidInputError("empty batch")


def make_batch(space, x1, rng, t=None, with_x0=False):
    x1 = np.asarray(x1, dtype=np.float64)
    n = x1.shape[0]
    noise = space.noise(rng, n)
    if t is None:
        t = rng.uniform(0.0, 1.0, size=n)
    x0 = space.noise(rng, n) if with_x0 else None
    return Batch(x1, noise, np.broadcast_to(t, (n,)).copy(), x0)


class LossResult(NamedTuple):
    loss: float
    grads: Optional[list]
    skipped: int = 0


def sample_weights(schedule, t, weighting="velocity", w=None):
    """Per-sample loss weights.

    ``"velocity"`` is ``w(t) (ahat' beta - ahat beta')^2 / ahat^2``, i.e. the
    denoiser loss expressed in velocity units. ``"denoiser"`` is plain ``w(t)``.
    """
    base = np.ones_like(t) if w is None else w(t)
    if weighting == "denoiser":
        return base
    if weighting != "velocity":
        raise InvalidInputError(f"unknown weighting {weighting!r}")
    a, b, da, db = schedule.coeffs(t)
    return base * (da * b - a * db) ** 2 / np.maximum(a, ALPHA_FLOOR) ** 2


def _run_model(model, x, t, with_grad):
    if with_grad and hasattr(model, "forward_with_cache"):
        return model.forward_with_cache(x, t)
    return model(x, t), None


def _model_grads(model, x, t, upstream, cache):
    if cache is not None:
        return model.backward(x, t, upstream, cache=cache)
    return model.backward(x, t, upstream)


def _denoiser_loss(model, batch, schedule, space, target_fn, project, weighting, w, with_grad):
    x_t = interpolate(schedule, batch.noise, batch.x1, batch.t)
    keep = ~space.degenerate_mask(x_t) if project else np.ones(len(batch.t), bool)
    n_keep = int(keep.sum())
    skipped = len(keep) - n_keep
    with_grad = with_grad and hasattr(model, "backward")
    out, cache = _run_model(model, x_t, batch.t, with_grad)
    target = target_fn(out, x_t, batch.x1)
    r = out - target
    if project:
        r = np.zeros_like(r)
        if n_keep:
            r[keep] = space.project(x_t[keep], (out - target)[keep], check=False)
    c = sample_weights(schedule, batch.t, weighting, w) * keep
    if n_keep == 0:
        return LossResult(0.0, None, skipped)
    per = c * np.sum(r**2, axis=(-1, -2))
    loss = float(per.sum() / n_keep)
    grads = None
    if with_grad:
        if project:
            # d/dD |P r|^2 = 2 P^T P r, and P is symmetric
            r = np.where(keep[:, None, None], r, 0.0)
            r[keep] = space.project(x_t[keep], r[keep], check=False)
        upstream = 2.0 * broadcast_time(c, r) * r / n_keep
        grads = _model_grads(model, x_t, batch.t, upstream, cache)
    return LossResult(loss, grads, skipped)


def loss_conventional(model, batch, schedule, space, weighting="velocity", w=None, with_grad=True):
    """``E c(t) |D(x_t, t) - x1|^2``."""
    return _denoiser_loss(model, batch, schedule, space, lambda out, xt, x1: x1, False, weighting, w, with_grad)


def loss_geodiff(model, batch, schedule, space, weighting="velocity", w=None, with_grad=True):
    """``E c(t) |D(x_t, t) - A_{x_t}(x1)|^2``: the target is aligned onto ``x_t``."""
    return _denoiser_loss(
        model, batch, schedule, space, lambda out, xt, x1: kabsch_align(x1, xt), False, weighting, w, with_grad
    )


def loss_af3(model, batch, schedule, space, weighting="velocity", w=None, with_grad=True):
    """``E c(t) |D - A_{stopgrad(D)}(x1)|^2``: the target is aligned onto the model output.

    The alignment reference is treated as a constant, so no gradient flows
    through the rotation.
    """
    return _denoiser_loss(
        model, batch, schedule, space, lambda out, xt, x1: kabsch_align(x1, out), False, weighting, w, with_grad
    )


def loss_quotient(model, batch, schedule, space, weighting="velocity", w=None, with_grad=True):
    """``E c(t) |P_{x_t}(D(x_t, t) - x1)|^2``; singular ``x_t`` are skipped."""
    return _denoiser_loss(model, batch, schedule, space, lambda out, xt, x1: x1, True, weighting, w, with_grad)


def _bridge_terms(schedule, batch):
    """``x_t`` and the interpolant velocity for a (possibly general) schedule."""
    if batch.x0 is None:
        raise InvalidInputError("general objective needs x0 in the batch")
    t = batch.t
    shape = batch.x1
    if hasattr(schedule, "general_coeffs"):
        al, be, ga, dal, dbe, dga = (broadcast_time(c, shape) for c in schedule.general_coeffs(t))
        x_t = al * batch.x0 + be * batch.x1 + ga * batch.noise
        u = dal * batch.x0 + dbe * batch.x1 + dga * batch.noise
    else:
        a, b, da, db = (broadcast_time(c, shape) for c in schedule.coeffs(t))
        x_t = a * batch.x0 + b * batch.x1
        u = da * batch.x0 + db * batch.x1
    return x_t, u


def loss_quotient_general(v_model, batch, schedule, space, w=None, with_grad=True):
    """``E w(t) |P_{x_t}(v(x_t, t) - (alpha' x0 + beta' x1 + gamma' eps))|^2``."""
    x_t, u = _bridge_terms(schedule, batch)
    keep = ~space.degenerate_mask(x_t)
    n_keep = int(keep.sum())
    skipped = len(keep) - n_keep
    if n_keep == 0:
        return LossResult(0.0, None, skipped)
    v = v_model(x_t, batch.t)
    r = np.zeros_like(v)
    r[keep] = space.project(x_t[keep], (v - u)[keep], check=False)
    c = (np.ones_like(batch.t) if w is None else w(batch.t)) * keep
    loss = float(np.sum(c * np.sum(r**2, axis=(-1, -2))) / n_keep)
    grads = None
    if with_grad and hasattr(v_model, "backward"):
        r[keep] = space.project(x_t[keep], r[keep], check=False)
        grads = v_model.backward(x_t, batch.t, 2.0 * broadcast_time(c, r) * r / n_keep)
    return LossResult(loss, grads, skipped)


LOSSES = {
    "conventional": loss_conventional,
    "geodiff_align": loss_geodiff,
    "af3_align": loss_af3,
    "quotient": loss_quotient,
}


# ---------------------------------------------------------------------------
# optimisers and training loop
# ---------------------------------------------------------------------------


class SGDMomentum:
    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self._buf = None

    def step(self, params, grad):
        if self._buf is None:
            self._buf = np.zeros_like(params)
        self._buf = self.momentum * self._buf + grad
        return params - self.lr * self._buf


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m = self._v = None
        self._k = 0

    def step(self, params, grad):
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._k += 1
        self._m = self.beta1 * self._m + (1 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1 - self.beta2) * grad**2
        mhat = self._m / (1 - self.beta1**self._k)
        vhat = self._v / (1 - self.beta2**self._k)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name, lr, momentum=0.9):
    if name == "sgd":
        return SGDMomentum(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise InvalidInputError(f"unknown optimizer {name!r}")


@dataclass
class TrainConfig:
    """Hyper-parameters of the training loop.

    ``epochs * steps_per_epoch`` gradient steps are taken; each step draws a
    fresh minibatch from the data sampler.
    """

    loss: str = "quotient"
    epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 256
    lr: float = 1e-2
    momentum: float = 0.9
    optimizer: str = "sgd"
    seed: int = 0
    augment: bool = True
    weighting: str = "velocity"

    def __post_init__(self):
        if self.loss not in LOSS_VARIANTS:
            raise InvalidInputError(f"unknown loss {self.loss!r}; expected one of {LOSS_VARIANTS}")
        if self.weighting not in WEIGHTINGS:
            raise InvalidInputError(f"unknown weighting {self.weighting!r}")
        for name in ("epochs", "steps_per_epoch"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.batch_size <= 0 or not self.lr > 0:
            raise InvalidInputError("batch_size and lr must be positive")


@dataclass
class TrainResult:
    model: MLPDenoiser
    losses: list = field(default_factory=list)
    skipped: int = 0


def train(config, data_sampler: Callable, model, space, schedule):
    """Fit ``model`` in place by minibatch descent on ``config.loss``.

    Parameters
    ----------
    config : TrainConfig
    data_sampler : callable ``(rng, n) -> (n, N, d)`` target draws.
    model : MLPDenoiser
    space, schedule : geometry and interpolant.

    Returns
    -------
    TrainResult with the per-epoch mean loss.
    """
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, config.lr, config.momentum)
    general = config.loss == "quotient_general"
    loss_fn = None if general else LOSSES[config.loss]
    v_model = DenoiserVelocity(model, schedule) if general else None
    result = TrainResult(model)
    for epoch in range(config.epochs):
        total = 0.0
        for _ in range(config.steps_per_epoch):
            x1 = space.center(data_sampler(rng, config.batch_size))
            if config.augment:
                x1 = space.apply_group(space.random_rotation(rng, config.batch_size), x1)
            batch = make_batch(space, x1, rng, with_x0=general)
            if general:
                res = loss_quotient_general(v_model, batch, schedule, space)
            else:
                res = loss_fn(model, batch, schedule, space, weighting=config.weighting)
            if not np.isfinite(res.loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            result.skipped += res.skipped
            total += res.loss
            if res.grads is not None:
                model.set_flat(opt.step(model.get_flat(), model.flatten_grads(res.grads)))
        mean = total / max(config.steps_per_epoch, 1)
        result.losses.append(mean)
        logger.info("epoch %d mean loss %.6g", epoch, mean)
    return result
