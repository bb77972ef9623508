"""scikit-learn style wrappers.

:class:`QuotientDiffusion` fits a denoiser to a set of point clouds and
samples new ones. The transformers prepare clouds for it or for downstream
sklearn pipelines. Clouds may be passed as ``(n, N, d)`` arrays or flattened
to ``(n, N * d)``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError, check_random_state
from .denoiser import MLPDenoiser
from .geometry import make_space
from .objectives import TrainConfig, kabsch_align, train
from .oracles import shape_descriptor
from .samplers import SamplerConfig, prior_sample, sample
from .schedule import make_schedule


def as_clouds(X, dim=3):
    """Return ``X`` as a float array of shape ``(n, N, dim)`` plus a flag telling whether it was flat."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] % dim:
            raise InvalidInputError(f"flattened width {X.shape[1]} is not a multiple of dim={dim}")
        flat, X = True, X.reshape(X.shape[0], -1, dim)
    elif X.ndim == 3 and X.shape[-1] == dim:
        flat = False
    else:
        raise InvalidInputError(f"expected (n, N, {dim}) or (n, N*{dim}) input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("input contains non-finite values")
    return X, flat


class CenterOfMassRemover(TransformerMixin, BaseEstimator):
    """Subtract each cloud's centroid."""

    def __init__(self, dim=3):
        self.dim = dim

    def fit(self, X, y=None):
        as_clouds(X, self.dim)
        return self

    def transform(self, X):
        C, flat = as_clouds(X, self.dim)
        C = C - C.mean(axis=1, keepdims=True)
        return C.reshape(C.shape[0], -1) if flat else C


class KabschAligner(TransformerMixin, BaseEstimator):
    """Rotate every (centred) cloud onto a reference by optimal rotation.

    Parameters
    ----------
    reference : array (N, dim), optional
        Defaults to the first training cloud.
    dim : int
    """

    def __init__(self, reference=None, dim=3):
        self.reference = reference
        self.dim = dim

    def fit(self, X, y=None):
        C, _ = as_clouds(X, self.dim)
        ref = C[0] if self.reference is None else np.asarray(self.reference, dtype=np.float64)
        if ref.shape != C.shape[1:]:
            raise InvalidInputError("reference shape does not match the clouds")
        self.reference_ = ref - ref.mean(axis=0)
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        C, flat = as_clouds(X, self.dim)
        C = C - C.mean(axis=1, keepdims=True)
        out = kabsch_align(C, np.broadcast_to(self.reference_, C.shape))
        return out.reshape(out.shape[0], -1) if flat else out


class ShapeDescriptor(TransformerMixin, BaseEstimator):
    """Map clouds to sorted pairwise distances (rotation and translation invariant)."""

    def __init__(self, dim=3):
        self.dim = dim

    def fit(self, X, y=None):
        as_clouds(X, self.dim)
        return self

    def transform(self, X):
        C, _ = as_clouds(X, self.dim)
        return shape_descriptor(C)


class QuotientDiffusion(BaseEstimator):
    """Diffusion model on point clouds modulo rotations.

    ``fit`` trains an MLP denoiser on resampled training clouds with random
    rotation augmentation; ``sample`` integrates the chosen sampler from the
    Gaussian prior.

    Parameters
    ----------
    space : {"so3", "so2"}
    loss : str
        One of ``conventional``, ``geodiff_align``, ``af3_align``, ``quotient``,
        ``quotient_general``.
    hidden : tuple of int
    n_frequencies : int
    activation : {"tanh", "relu"}
    data_scale : float, "auto" or None
        Output preconditioning scale; ``"auto"`` uses the RMS coordinate of
        the training data.
    epochs, steps_per_epoch, batch_size, lr, momentum, optimizer, weighting, augment :
        Passed to :class:`~quotient_diffusion.objectives.TrainConfig`.
    mode : {"ode", "sde"}
    variant : {"quotient", "conventional"}
    steps : int
    gamma : float
    random_state : int, Generator or None

    Attributes
    ----------
    model_ : MLPDenoiser
    space_ : SymmetrySpace
    schedule_ : Schedule
    losses_ : list of float
        Mean loss per epoch.
    """

    def __init__(
        self,
        space="so3",
        loss="quotient",
        hidden=(128, 128, 128),
        n_frequencies=8,
        activation="tanh",
        data_scale="auto",
        epochs=20,
        steps_per_epoch=100,
        batch_size=256,
        lr=1e-2,
        momentum=0.9,
        optimizer="sgd",
        weighting="velocity",
        augment=True,
        mode="ode",
        variant="quotient",
        steps=200,
        gamma=0.35,
        random_state=0,
    ):
        self.space = space
        self.loss = loss
        self.hidden = hidden
        self.n_frequencies = n_frequencies
        self.activation = activation
        self.data_scale = data_scale
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.optimizer = optimizer
        self.weighting = weighting
        self.augment = augment
        self.mode = mode
        self.variant = variant
        self.steps = steps
        self.gamma = gamma
        self.random_state = random_state

    def _seed(self):
        rng = check_random_state(self.random_state)
        return int(rng.randint(0, 2**31 - 1))

    def fit(self, X, y=None):
        dim = 2 if self.space == "so2" else 3
        C, _ = as_clouds(X, dim)
        space = make_space(self.space, C.shape[1])
        C = space.center(C)
        if self.data_scale == "auto":
            scale = float(np.sqrt(np.mean(C**2)))
        else:
            scale = self.data_scale
        seed = self._seed()
        schedule = make_schedule("linear-one-sided")
        model = MLPDenoiser(
            space, self.hidden, self.n_frequencies, self.activation, seed=seed, data_scale=scale, schedule=schedule
        )
        cfg = TrainConfig(
            loss=self.loss,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            optimizer=self.optimizer,
            seed=seed,
            augment=self.augment,
            weighting=self.weighting,
        )

        def draw(rng, n):
            return C[rng.integers(0, len(C), size=n)]

        result = train(cfg, draw, model, space, schedule)
        self.space_, self.schedule_, self.model_ = space, schedule, model
        self.losses_ = result.losses
        self.n_points_ = C.shape[1]
        return self

    def sample(self, n_samples=1, random_state=None, return_trajectory=False):
        """Draw ``n_samples`` clouds of shape ``(N, d)``."""
        check_is_fitted(self, "model_")
        seed = self._seed() if random_state is None else int(check_random_state(random_state).randint(0, 2**31 - 1))
        cfg = SamplerConfig(mode=self.mode, variant=self.variant, steps=self.steps, gamma=self.gamma, seed=seed)
        x0 = prior_sample(self.space_, n_samples, np.random.default_rng(seed))
        traj = sample(cfg, self.space_, self.model_, self.schedule_, x0=x0)
        return traj if return_trajectory else traj.final

    def denoise(self, X, t):
        """Evaluate the fitted denoiser ``D(x_t, t)``."""
        check_is_fitted(self, "model_")
        C, flat = as_clouds(X, self.space_.dim)
        out = self.model_(self.space_.center(C), t)
        return out.reshape(out.shape[0], -1) if flat else out
