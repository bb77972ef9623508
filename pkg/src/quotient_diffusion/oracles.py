"""Brute-force oracles and distributional metrics.

Everything here is written against plain numpy/scipy so it can check the
geometry, objective and sampler modules without sharing code with them:
inertia tensors are rebuilt locally, alignments use
:meth:`scipy.spatial.transform.Rotation.align_vectors`, and statistics use
:mod:`scipy.stats` / :mod:`scipy.spatial.distance`.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.spatial.distance import cdist, pdist
from scipy.spatial.transform import Rotation

from ._validation import InvalidInputError, check_cloud


class InsufficientSamplesError(RuntimeError):
    """The kernel-weighted estimate has too small an effective sample size."""


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def _half_neg_logdet(x):
    if x.shape == (1, 2):
        return -0.5 * np.log(np.sum(x**2))
    xc = x - x.mean(axis=0)
    K = np.sum(xc**2) * np.eye(3) - xc.T @ xc
    sign, logdet = np.linalg.slogdet(K)
    if sign <= 0:
        raise InvalidInputError("configuration is degenerate (det K <= 0)")
    return -0.5 * logdet


def fd_logdet_grad(x, step=1e-5):
    """Central-difference gradient of ``-1/2 log det G(x)``.

    ``G`` is the orbit metric: ``K(x)`` for clouds in R^3 and ``|x|^2`` for a
    single planar point. For clouds the perturbed configuration is re-centred,
    so the result is the gradient restricted to centre-of-mass free motions.
    """
    x = check_cloud(x)
    if x.ndim != 2:
        raise InvalidInputError("fd_logdet_grad takes a single configuration")
    if not 1e-7 <= step <= 1e-3:
        raise InvalidInputError("step must lie in [1e-7, 1e-3]")
    if x.shape[1] == 2 and x.shape[0] != 1:
        raise InvalidInputError("planar case supports a single point")
    scale = np.sqrt(np.mean(x**2))
    h = step * max(scale, 1e-12)
    _half_neg_logdet(x)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (_half_neg_logdet(xp) - _half_neg_logdet(xm)) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


def _best_fit(a, b):
    """Rotation ``R`` minimising ``|a - b R^T|`` (2D closed form, 3D via scipy)."""
    if a.shape[1] == 2:
        cross = np.sum(b[:, 0] * a[:, 1] - b[:, 1] * a[:, 0])
        dot = np.sum(a * b)
        theta = np.arctan2(cross, dot)
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, -s], [s, c]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rot, _ = Rotation.align_vectors(a, b)
    return rot.as_matrix()


def _angle(R):
    if R.shape == (2, 2):
        return float(abs(np.arctan2(R[1, 0], R[0, 0])))
    return float(Rotation.from_matrix(R).magnitude())


def _frame(c):
    # planar single points are not centred
    return c if c.shape[-1] == 2 else c - c.mean(axis=0)


def brute_force_best_rotation(x, y, trials, rng):
    """Best of ``trials`` uniform random rotations (plus the identity) for ``|g x - y|``.

    Returns
    -------
    rotation : ndarray (d, d)
    residual : float
    """
    x = check_cloud(x)
    y = check_cloud(y, name="y")
    if x.shape != y.shape or x.ndim != 2:
        raise InvalidInputError("x and y must be single clouds of equal shape")
    if trials < 1:
        raise InvalidInputError("trials must be at least 1")
    d = x.shape[1]
    best_g, best_res = np.eye(d), float(np.linalg.norm(x - y))
    chunk = 20000
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        if d == 3:
            gs = Rotation.random(m, random_state=rng).as_matrix()
        else:
            th = rng.uniform(0, 2 * np.pi, m)
            gs = np.stack([np.stack([np.cos(th), -np.sin(th)], -1), np.stack([np.sin(th), np.cos(th)], -1)], -2)
        res = np.linalg.norm(np.einsum("kij,nj->kni", gs, x) - y, axis=(1, 2))
        k = int(np.argmin(res))
        if res[k] < best_res:
            best_g, best_res = gs[k], float(res[k])
        done += m
    return best_g, best_res


def degenerate_frames(states, tol=1e-6):
    """True where a configuration is (numerically) collinear, so its frame is ill defined."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] == 2:
        return np.linalg.norm(states, axis=(-1, -2)) <= 1e-9
    xc = states - states.mean(axis=-2, keepdims=True)
    sv = np.linalg.svd(xc, compute_uv=False)
    return sv[..., 1] <= tol * np.maximum(sv[..., 0], 1e-300)


def _states(traj):
    states = getattr(traj, "states", traj)
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 3:
        states = states[:, None]
    if states.ndim != 4 or states.shape[0] < 2:
        raise InvalidInputError("need a trajectory of at least two states, shape (K+1, [B,] N, d)")
    return states


def orientation_drift(traj):
    """End-to-end rotation angle (rad) between the first and last state of each trajectory.

    The angle is that of the optimal rotation aligning the first state onto
    the last. A warning is emitted when either end is degenerate.
    """
    states = _states(traj)
    first, last = states[0], states[-1]
    if np.any(degenerate_frames(first)) or np.any(degenerate_frames(last)):
        warnings.warn("degenerate frame in trajectory; rotation angle is not unique", RuntimeWarning)
    angles = np.array([_angle(_best_fit(_frame(b), _frame(a))) for a, b in zip(first, last)])
    return angles


def accumulated_rotation(traj):
    """Sum of per-step optimal rotation angles along each trajectory."""
    states = _states(traj)
    total = np.zeros(states.shape[1])
    for a_all, b_all in zip(states[:-1], states[1:]):
        for j, (a, b) in enumerate(zip(a_all, b_all)):
            total[j] += _angle(_best_fit(_frame(b), _frame(a)))
    return total


# ---------------------------------------------------------------------------
# conditional expectations
# ---------------------------------------------------------------------------


@dataclass
class ConditionalEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    ess: float


def mc_conditional_expectation(
    target_sampler, s, x_t, t, n=100_000, bandwidth=None, rng=None, align=False, n_boot=200
):
    """Kernel-weighted Monte-Carlo estimate of ``E[x1 | x_t]``.

    Draws ``n`` joint samples ``(x1_i, x_t_i)`` from ``target_sampler`` and
    the one-sided interpolant, weights them by
    ``exp(-|x_t_i - x_t|^2 / (2 bandwidth^2))`` and averages ``x1_i``. With
    ``align=True`` each ``x1_i`` is first rotated onto the query ``x_t``.

    Parameters
    ----------
    target_sampler : callable ``(rng, n) -> (n, N, d)``
    s : Schedule
    x_t : ndarray (N, d)
    t : float
    n : int, at least 1e4
    bandwidth : float, optional
        Defaults to ``0.1 * ahat_t * sqrt(ambient dim)``.
    rng : numpy Generator or seed
    align : bool
    n_boot : int
        Poisson-bootstrap replicates for the standard error.

    Returns
    -------
    ConditionalEstimate
        ``mean`` and ``stderr`` have the shape of ``x_t``; ``ess`` is the
        Kish effective sample size.
    """
    rng = np.random.default_rng(rng)
    x_t = check_cloud(x_t, name="x_t")
    if n < 10_000:
        raise InvalidInputError("n must be at least 1e4")
    N, d = x_t.shape
    ahat, beta, _, _ = s.coeffs(float(t))
    ambient = d * N - d if d == 3 else d * N
    if bandwidth is None:
        bandwidth = 0.1 * max(float(ahat), 1e-3) * np.sqrt(ambient)
    if not bandwidth > 0:
        raise InvalidInputError("bandwidth must be positive")
    x1 = np.asarray(target_sampler(rng, n), dtype=np.float64)
    eps = rng.standard_normal(x1.shape)
    if d == 3:
        eps -= eps.mean(axis=-2, keepdims=True)
    xs = ahat * eps + beta * x1
    logw = -np.sum((xs - x_t) ** 2, axis=(1, 2)) / (2 * bandwidth**2)
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / np.sum(w**2))
    if ess < 100:
        raise InsufficientSamplesError(f"effective sample size {ess:.1f} < 100; increase n or bandwidth")
    keep = w > 1e-12
    w, vals = w[keep], x1[keep]
    if align:
        ref = x_t - x_t.mean(0) if d == 3 else x_t
        vals = np.stack([v @ _best_fit(ref, v).T for v in vals])
    mean = np.tensordot(w, vals, axes=1) / w.sum()
    boots = np.empty((n_boot,) + mean.shape)
    for b in range(n_boot):
        wb = w * rng.poisson(1.0, size=w.shape)
        boots[b] = np.tensordot(wb, vals, axes=1) / wb.sum()
    return ConditionalEstimate(mean, boots.std(axis=0, ddof=1), ess)


def diatomic_sampler(bond=1.0):
    """Sampler of a two-atom molecule with fixed bond length and uniform orientation."""

    def draw(rng, n):
        u = rng.standard_normal((n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        half = 0.5 * bond * u
        return np.stack([-half, half], axis=1)

    return draw


def bond_length(x):
    x = np.asarray(x, dtype=np.float64)
    return np.linalg.norm(x[..., 1, :] - x[..., 0, :], axis=-1)


# ---------------------------------------------------------------------------
# radial mixture on the plane (the SO(2) demo target)
# ---------------------------------------------------------------------------


class RadialMixture:
    """Rotation-invariant planar density whose radius is a Gaussian mixture.

    Parameters
    ----------
    centers, widths, weights : sequences of float
        Radial mixture components; weights are normalised.
    """

    def __init__(self, centers=(1.0, 2.5), widths=(0.15, 0.15), weights=None):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.widths = np.asarray(widths, dtype=np.float64)
        if self.centers.shape != self.widths.shape or np.any(self.widths <= 0):
            raise InvalidInputError("centers and widths must match and widths be positive")
        w = np.ones_like(self.centers) if weights is None else np.asarray(weights, dtype=np.float64)
        self.weights = w / w.sum()

    def sample_radius(self, rng, n):
        comp = rng.choice(len(self.centers), size=n, p=self.weights)
        return np.abs(rng.normal(self.centers[comp], self.widths[comp]))

    def sample(self, rng, n):
        r = self.sample_radius(rng, n)
        th = rng.uniform(0.0, 2 * np.pi, n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)[:, None, :]

    __call__ = sample

    def radius_cdf(self, r):
        """CDF of the (folded) radius."""
        r = np.asarray(r, dtype=np.float64)[..., None]
        c = stats.norm.cdf(r, self.centers, self.widths) - stats.norm.cdf(-r, self.centers, self.widths)
        return np.sum(self.weights * c, axis=-1)

    def radius_pdf(self, r):
        r = np.asarray(r, dtype=np.float64)[..., None]
        p = stats.norm.pdf(r, self.centers, self.widths) + stats.norm.pdf(-r, self.centers, self.widths)
        return np.sum(self.weights * p, axis=-1) * (r[..., 0] >= 0)

    @property
    def second_moment(self):
        return float(np.sum(self.weights * (self.centers**2 + self.widths**2)))


class RadialMixtureDenoiser:
    """Exact ``E[x1 | x_t]`` for a :class:`RadialMixture` target, by radial quadrature.

    Integrating the angle out of the Gaussian likelihood leaves modified
    Bessel functions, so ``E[x1 | x_t] = m(|x_t|) x_t / |x_t|`` with
    ``m = int r p(r) L(r) I1(k r) dr / int p(r) L(r) I0(k r) dr``.
    """

    def __init__(self, mixture, schedule, n_grid=800):
        self.mixture = mixture
        self.schedule = schedule
        hi = float(np.max(mixture.centers + 8 * mixture.widths))
        self.grid = np.linspace(1e-6, hi, n_grid)
        self.log_prior = np.log(np.maximum(mixture.radius_pdf(self.grid), 1e-300))

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        a, b, _, _ = self.schedule.coeffs(float(t))
        if b == 0:
            return np.zeros_like(x)
        a = max(float(a), 1e-4)
        rho = np.linalg.norm(x[..., 0, :], axis=-1).reshape(-1)
        kap = rho[:, None] * b * self.grid[None] / a**2
        logw = self.log_prior[None] - (b * self.grid[None] - rho[:, None]) ** 2 / (2 * a**2)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        m = (w * self.grid * special.ive(1, kap)).sum(1) / (w * special.ive(0, kap)).sum(1)
        gain = (m / np.maximum(rho, 1e-300)).reshape(x.shape[:-2])
        return gain[..., None, None] * x


# ---------------------------------------------------------------------------
# distributional metrics
# ---------------------------------------------------------------------------


def _flatten(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] == 0:
        raise InvalidInputError("sample sets must be nonempty")
    return A.reshape(A.shape[0], -1)


def energy_distance(A, B):
    """V-statistic energy distance ``2 E|a-b| - E|a-a'| - E|b-b'|`` on flattened samples."""
    a, b = _flatten(A), _flatten(B)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return float(2 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean())


@dataclass
class PermutationTest:
    statistic: float
    null: np.ndarray
    threshold: float
    p_value: float

    @property
    def passed(self):
        """True when the observed statistic lies below the null quantile."""
        return self.statistic < self.threshold


def energy_permutation_test(A, B, n_perm=200, rng=None, quantile=0.95):
    """Energy distance with a permutation null built from the pooled distance matrix."""
    rng = np.random.default_rng(rng)
    a, b = _flatten(A), _flatten(B)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("sample dimensions differ")
    pooled = np.concatenate([a, b])
    n_a, n = len(a), len(a) + len(b)
    D = cdist(pooled, pooled)
    labels = np.zeros((n, n_perm + 1))
    labels[:n_a, 0] = 1.0
    for k in range(1, n_perm + 1):
        labels[rng.permutation(n)[:n_a], k] = 1.0
    DL = D @ labels
    total = D.sum()
    s_aa = np.einsum("ik,ik->k", labels, DL)
    row_a = DL.sum(axis=0)
    s_ab = row_a - s_aa
    s_bb = total - 2 * s_ab - s_aa
    n_b = n - n_a
    e = 2 * s_ab / (n_a * n_b) - s_aa / n_a**2 - s_bb / n_b**2
    null = e[1:]
    return PermutationTest(float(e[0]), null, float(np.quantile(null, quantile)), float(np.mean(null >= e[0])))


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic; ``b`` may also be a CDF callable."""
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise InvalidInputError("empty sample")
    if callable(b):
        return float(stats.kstest(a, b).statistic)
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.size == 0:
        raise InvalidInputError("empty sample")
    return float(stats.ks_2samp(a, b).statistic)


def shape_descriptor(x):
    """Sorted pairwise distances of a cloud (or of each cloud in a batch)."""
    x = check_cloud(x)
    if x.shape[-2] < 2:
        raise InvalidInputError("shape descriptor needs at least two points")
    if x.ndim == 2:
        return np.sort(pdist(x))
    flat = x.reshape((-1,) + x.shape[-2:])
    out = np.stack([np.sort(pdist(c)) for c in flat])
    return out.reshape(x.shape[:-2] + out.shape[-1:])


def covariance_error(samples, target_cov):
    """Relative Frobenius error of the sample covariance of flattened samples."""
    X = _flatten(samples)
    C = np.cov(X, rowvar=False)
    target_cov = np.asarray(target_cov, dtype=np.float64)
    return float(np.linalg.norm(C - target_cov) / np.linalg.norm(target_cov))
