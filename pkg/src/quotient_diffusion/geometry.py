"""Quotient-space geometry of point clouds under rotations.

Two symmetry spaces are provided:

* :class:`SO3Space` -- N points in R^3 with the centre of mass removed, acted
  on by SO(3). The quotient is the shape space R^{3N}/SE(3).
* :class:`SO2Space` -- a single point in the plane (origin excluded) acted on
  by SO(2). The quotient is the half line of radii.

All functions accept a single cloud ``(N, d)`` or a batch ``(..., N, d)`` and
are pure. Rotations act on row vectors, ``g . x = x @ g.T``.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import InvalidInputError, check_cloud, check_rotation, check_same_shape

DEFAULT_EPS = 1e-8
DEGENERACY_TOL = 1e-6
ORIGIN_TOL = 1e-9


class DegenerateConfigurationError(ValueError):
    """The configuration lies in the singular set where the orbit collapses
    (collinear clouds for SO(3), the origin for SO(2))."""


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def com_center(raw):
    """Subtract the (equal-weight) centre of mass from every point."""
    raw = check_cloud(raw, name="raw")
    return raw - raw.mean(axis=-2, keepdims=True)


def inertia_matrix(x):
    """The 3x3 matrix ``K = sum |x_n|^2 I - sum x_n x_n^T`` for each cloud.

    ``K`` maps an angular velocity ``a`` to the angular momentum of the rigid
    motion ``(a x x_n)_n``.
    """
    x = check_cloud(x, dim=3)
    sq = np.einsum("...ni,...ni->...", x, x)
    outer = np.einsum("...ni,...nj->...ij", x, x)
    K = sq[..., None, None] * np.eye(3) - outer
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def regularized_inverse(K, eps=DEFAULT_EPS):
    """Return ``(K + eps I)^-1``, symmetrised."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    K = np.asarray(K, dtype=np.float64)
    inv = np.linalg.inv(K + eps * np.eye(K.shape[-1]))
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def angular_momentum(x, v):
    """Total angular momentum ``sum_n x_n x v_n`` (3-vector per cloud)."""
    x = check_cloud(x, dim=3)
    v = check_cloud(v, dim=3, name="v")
    check_same_shape(x, v)
    return np.cross(x, v).sum(axis=-2)


def apply_group(g, x):
    """Rotate every point of ``x`` by ``g`` (``g`` may be a stack matching the batch)."""
    x = check_cloud(x)
    g = check_rotation(g, dim=x.shape[-1])
    return np.einsum("...ij,...nj->...ni", g, x)


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_2d(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_rotation(rng, dim=3, size=None):
    """Uniform (Haar) random rotation(s) in ``dim`` = 2 or 3 dimensions."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape)) if shape else 1
    if dim == 3:
        mats = Rotation.random(count, random_state=rng).as_matrix()
    elif dim == 2:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        c, s = np.cos(theta), np.sin(theta)
        mats = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    else:
        raise InvalidInputError(f"rotations are supported in 2 or 3 dimensions, not {dim}")
    return mats.reshape(shape + (dim, dim))


# ---------------------------------------------------------------------------
# symmetry spaces
# ---------------------------------------------------------------------------


class SymmetrySpace:
    """Total space ``M`` with a rotation group acting on it.

    Attributes
    ----------
    dim : int
        Coordinates per point (2 or 3).
    n_points : int
        Points per configuration.
    ambient_dim : int
        Dimension of ``M`` (after removing the centre of mass where relevant).
    group_dim : int
        Dimension of the acting group.
    degeneracy_tol : float
        Threshold below which a configuration is treated as singular.
    eps : float
        Regulariser added to ``K`` before inversion. ``0`` means exact inversion,
        which is safe because singular configurations are rejected beforehand.
    """

    name = "abstract"
    dim = 0
    group_dim = 0

    def __init__(self, n_points, degeneracy_tol=DEGENERACY_TOL, eps=0.0):
        if eps < 0:
            raise InvalidInputError("eps must be non-negative")
        self.n_points = int(n_points)
        self.degeneracy_tol = float(degeneracy_tol)
        self.eps = float(eps)

    def __repr__(self):
        return f"{type(self).__name__}(n_points={self.n_points}, eps={self.eps:g})"

    @property
    def shape(self):
        return (self.n_points, self.dim)

    def to_dict(self):
        return {"name": self.name, "n_points": self.n_points, "eps": self.eps}

    # -- to be specialised ---------------------------------------------------
    def center(self, x):
        raise NotImplementedError

    def degenerate_mask(self, x):
        raise NotImplementedError

    def vertical_basis(self, x):
        raise NotImplementedError

    def project(self, x, v, check=True):
        raise NotImplementedError

    def mean_curvature(self, x, check=True):
        raise NotImplementedError

    def momentum(self, x, v):
        raise NotImplementedError

    # -- shared --------------------------------------------------------------
    def validate(self, x, name="x"):
        x = check_cloud(x, dim=self.dim, n_points=self.n_points, name=name)
        return x

    def check_nondegenerate(self, x):
        mask = self.degenerate_mask(x)
        if np.any(mask):
            raise DegenerateConfigurationError(
                f"{int(np.sum(mask))} configuration(s) lie in the singular set of {self.name}"
            )

    def noise(self, rng, size=None):
        """Standard normal sample(s) on ``M``."""
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        return self.center(rng.standard_normal(shape + self.shape))

    def random_rotation(self, rng, size=None):
        return random_rotation(rng, self.dim, size)

    def apply_group(self, g, x):
        return apply_group(g, x)

    def vertical_part(self, x, v, check=True):
        v = self.center(v)
        return v - self.project(x, v, check=check)


class SO3Space(SymmetrySpace):
    """Centre-of-mass free clouds of ``n_points`` points in R^3 under SO(3)."""

    name = "so3"
    dim = 3
    group_dim = 3

    @property
    def ambient_dim(self):
        return 3 * self.n_points - 3

    def center(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x - x.mean(axis=-2, keepdims=True)

    def validate(self, x, name="x"):
        x = super().validate(x, name)
        com = np.abs(x.mean(axis=-2))
        rms = np.sqrt(np.mean(x**2, axis=(-1, -2)))
        if np.any(com.max(axis=-1) > 1e-9 * np.maximum(1.0, rms)):
            raise InvalidInputError(f"{name} is not centre-of-mass free")
        return x

    def degenerate_mask(self, x):
        K = inertia_matrix(x)
        lam = np.linalg.eigvalsh(K)
        tr = np.trace(K, axis1=-2, axis2=-1)
        return (lam[..., 0] <= self.degeneracy_tol * tr) | (tr <= 0.0)

    def k_inverse(self, x):
        K = inertia_matrix(x)
        if self.eps > 0:
            return regularized_inverse(K, self.eps)
        inv = np.linalg.inv(K)
        return 0.5 * (inv + np.swapaxes(inv, -1, -2))

    def vertical_basis(self, x):
        x = self.validate(x)
        self.check_nondegenerate(x)
        return np.stack([np.cross(e, x) for e in np.eye(3)], axis=0)

    def project(self, x, v, check=True):
        x = self.validate(x)
        v = check_cloud(v, dim=3, name="v")
        check_same_shape(x, v)
        if check:
            self.check_nondegenerate(x)
        v = self.center(v)
        omega = np.einsum("...ij,...j->...i", self.k_inverse(x), np.cross(x, v).sum(axis=-2))
        return v - np.cross(omega[..., None, :], x)

    def mean_curvature(self, x, check=True):
        x = self.validate(x)
        if check:
            self.check_nondegenerate(x)
        Kinv = self.k_inverse(x)
        tr = np.trace(Kinv, axis1=-2, axis2=-1)
        return -(tr[..., None, None] * x - np.einsum("...ij,...nj->...ni", Kinv, x))

    def momentum(self, x, v):
        return np.cross(x, v).sum(axis=-2)


class SO2Space(SymmetrySpace):
    """A single point in R^2 minus the origin under SO(2)."""

    name = "so2"
    dim = 2
    group_dim = 1

    def __init__(self, n_points=1, degeneracy_tol=ORIGIN_TOL, eps=0.0):
        if n_points != 1:
            raise InvalidInputError("SO2Space models a single planar point")
        super().__init__(1, degeneracy_tol, eps)

    @property
    def ambient_dim(self):
        return 2

    def center(self, x):
        return np.asarray(x, dtype=np.float64)

    def degenerate_mask(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x, axis=(-1))[..., 0] <= self.degeneracy_tol

    def vertical_basis(self, x):
        x = self.validate(x)
        self.check_nondegenerate(x)
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)[None]

    def project(self, x, v, check=True):
        x = self.validate(x)
        v = check_cloud(v, dim=2, name="v")
        check_same_shape(x, v)
        if check:
            self.check_nondegenerate(x)
        sq = np.sum(x**2, axis=(-1, -2), keepdims=True)
        return np.sum(v * x, axis=(-1, -2), keepdims=True) / sq * x

    def mean_curvature(self, x, check=True):
        # -1/2 grad log det of the orbit metric, which is |x|^2.
        x = self.validate(x)
        if check:
            self.check_nondegenerate(x)
        return -x / np.sum(x**2, axis=(-1, -2), keepdims=True)

    def momentum(self, x, v):
        return (x[..., 0] * v[..., 1] - x[..., 1] * v[..., 0]).sum(axis=-1)


def make_space(name, n_points=None, **kwargs):
    """Build a space from its config name (``"so2"`` or ``"so3"``)."""
    if name == "so2":
        return SO2Space(1 if n_points is None else n_points, **kwargs)
    if name == "so3":
        if n_points is None:
            raise InvalidInputError("so3 space needs n_points")
        return SO3Space(n_points, **kwargs)
    raise InvalidInputError(f"unknown space {name!r}; expected 'so2' or 'so3'")


def vertical_basis(space, x):
    """Basis of the vertical space at ``x``; shape ``(G, ..., N, d)``."""
    return space.vertical_basis(x)


def horizontal_project(space, x, v):
    """Orthogonal projection of ``v`` onto the horizontal space at ``x``.

    For SO(3) this removes the rigid-body angular momentum:
    ``v_n - (K^-1 sum_m x_m x v_m) x x_n`` after zeroing the linear momentum.
    """
    return space.project(x, v)


def mean_curvature(space, x):
    """Horizontal lift of the mean curvature vector of the quotient.

    SO(3): ``-(tr(K^-1) I - K^-1) x_n`` per point. SO(2): ``-x / |x|^2``.
    """
    return space.mean_curvature(x)
