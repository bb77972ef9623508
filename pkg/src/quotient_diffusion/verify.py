"""Named invariant checks run by the ``verify`` command.

Each check returns a :class:`Check` with a measured ``value`` that must not
exceed ``threshold``. ``inject="curvature-sign"`` flips the sign of the
mean-curvature field of every space used, to confirm the suite notices.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .denoiser import DenoiserVelocity, GaussianDenoiser, MLPDenoiser, VerticalSpin
from .geometry import SO2Space, SO3Space, inertia_matrix, regularized_inverse
from .objectives import (
    Batch,
    kabsch_align,
    kabsch_rotation,
    kabsch_rotation_polar,
    loss_af3,
    loss_quotient,
    loss_quotient_general,
    make_batch,
)
from .oracles import brute_force_best_rotation, fd_logdet_grad, mc_conditional_expectation
from .samplers import SamplerConfig, ode_step, sample, sde_step
from .schedule import LinearOneSided, score_from_denoiser, score_from_velocity, velocity_from_denoiser

INJECTIONS = ("", "curvature-sign")


@dataclass
class Check:
    name: str
    value: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.threshold)

    def to_dict(self):
        d = asdict(self)
        d["pass"] = self.passed
        return d


def _norm(a, axis=(-1, -2)):
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=axis))


def _rel(a, b, ref):
    return float(np.max(_norm(a - b) / np.maximum(_norm(ref), 1e-300)))


def _flip_curvature(space):
    original = space.mean_curvature

    def flipped(x, check=True):
        return -original(x, check)

    space.mean_curvature = flipped
    return space


def random_clouds(rng, count, n_min=3, n_max=16):
    """``count`` random centred clouds with sizes in ``[n_min, n_max]``, non-degenerate."""
    out = []
    while len(out) < count:
        n = int(rng.integers(n_min, n_max + 1))
        space = SO3Space(n)
        x = space.noise(rng)
        if not space.degenerate_mask(x):
            out.append((space, x))
    return out


def run_checks(n_clouds=200, seed=0, inject=""):
    """Run the full suite and return a list of :class:`Check`."""
    if inject not in INJECTIONS:
        raise ValueError(f"unknown injection {inject!r}; expected one of {INJECTIONS}")
    rng = np.random.default_rng(seed)
    clouds = random_clouds(rng, n_clouds)
    if inject == "curvature-sign":
        for space, _ in clouds:
            _flip_curvature(space)
    checks = []

    def add(name, value, threshold):
        checks.append(Check(name, float(value), float(threshold)))

    # -- projection algebra ---------------------------------------------------
    idem = selfadj = annih = linmom = angmom = lstsq = pyth = 0.0
    for space, x in clouds:
        u, v = space.noise(rng), space.noise(rng)
        Pv = space.project(x, v)
        scale = _norm(v)
        idem = max(idem, _norm(space.project(x, Pv) - Pv) / scale)
        selfadj = max(selfadj, abs(np.sum(space.project(x, u) * v) - np.sum(u * Pv)) / (_norm(u) * scale))
        basis = space.vertical_basis(x)
        annih = max(annih, max(_norm(space.project(x, b)) / _norm(b) for b in basis))
        linmom = max(linmom, np.abs(Pv.sum(axis=0)).max() / scale)
        angmom = max(angmom, _norm(np.cross(x, Pv).sum(axis=0), axis=-1) / (scale * _norm(x)))
        A = basis.reshape(3, -1).T
        coef = np.linalg.lstsq(A, v.ravel(), rcond=None)[0]
        lstsq = max(lstsq, _norm(Pv - (v.ravel() - A @ coef).reshape(v.shape)) / scale)
        pyth = max(pyth, abs(scale**2 - _norm(Pv) ** 2 - _norm(v - Pv) ** 2) / scale**2)
    add("projection_idempotent", idem, 1e-9)
    add("projection_self_adjoint", selfadj, 1e-9)
    add("projection_annihilates_vertical", annih, 1e-9)
    add("projection_zero_linear_momentum", linmom, 1e-9)
    add("projection_zero_angular_momentum", angmom, 1e-9)
    add("projection_matches_least_squares", lstsq, 1e-9)
    add("projection_pythagoras", pyth, 1e-9)

    so2 = SO2Space()
    if inject == "curvature-sign":
        _flip_curvature(so2)
    pts = rng.standard_normal((200, 1, 2))
    vs = rng.standard_normal((200, 1, 2))
    Pv = so2.project(pts, vs)
    cross = np.abs(Pv[:, 0, 0] * pts[:, 0, 1] - Pv[:, 0, 1] * pts[:, 0, 0]) / (_norm(pts) * _norm(vs))
    add("so2_projection_radial", cross.max(), 1e-12)

    # -- inertia matrix ---------------------------------------------------------
    tri = np.array([[1.0, 0, 0], [0, 1, 0], [-1, -1, 0]])
    add("inertia_matrix_triangle", np.abs(inertia_matrix(tri) - [[2, -1, 0], [-1, 2, 0], [0, 0, 4]]).max(), 1e-12)
    M = rng.standard_normal((3, 3))
    K = M @ M.T + np.eye(3)
    add("regularized_inverse_multiply_back", np.abs(regularized_inverse(K) @ (K + 1e-8 * np.eye(3)) - np.eye(3)).max(), 1e-10)

    # -- curvature --------------------------------------------------------------
    fd = hor = 0.0
    for space, x in clouds[:100]:
        h = space.mean_curvature(x)
        fd = max(fd, _norm(h - fd_logdet_grad(x, 1e-5)) / _norm(h))
        hor = max(hor, _norm(space.project(x, h) - h) / _norm(h))
    add("curvature_matches_fd_logdet", fd, 1e-5)
    add("curvature_horizontal", hor, 1e-9)
    closed = np.abs(so2.mean_curvature(pts) + pts / np.sum(pts**2, axis=(-1, -2), keepdims=True)).max()
    add("curvature_so2_closed_form", closed, 1e-10)
    fd2 = max(_norm(so2.mean_curvature(p) - fd_logdet_grad(p, 1e-5)) / _norm(so2.mean_curvature(p)) for p in pts[:20])
    add("curvature_so2_matches_fd", fd2, 1e-5)

    # -- equivariance -----------------------------------------------------------
    eq_p = eq_h = 0.0
    for space, x in clouds:
        g = space.random_rotation(rng)
        v = space.noise(rng)
        gx, gv = space.apply_group(g, x), space.apply_group(g, v)
        eq_p = max(eq_p, _norm(space.project(gx, gv) - space.apply_group(g, space.project(x, v))) / _norm(v))
        h = space.mean_curvature(x)
        eq_h = max(eq_h, _norm(space.mean_curvature(gx) - space.apply_group(g, h)) / _norm(h))
    add("projection_equivariant", eq_p, 1e-9)
    add("curvature_equivariant", eq_h, 1e-9)

    # -- schedule conversions -----------------------------------------------------
    s = LinearOneSided()
    space5 = SO3Space(5)
    if inject == "curvature-sign":
        _flip_curvature(space5)
    xt = space5.noise(rng, 50)
    t = rng.uniform(0.05, 0.95, 50)
    D = space5.noise(rng, 50)
    v = velocity_from_denoiser(s, D, xt, t)
    add("score_from_velocity_consistent", _rel(score_from_velocity(s, v, xt, t), score_from_denoiser(s, D, xt, t), score_from_denoiser(s, D, xt, t)), 1e-9)

    # -- losses ---------------------------------------------------------------------
    model = MLPDenoiser(space5, (32, 32), seed=1, data_scale=1.0)
    x1 = space5.noise(rng, 64)
    batch = make_batch(space5, x1, rng)
    x_t = batch.noise * (1 - batch.t)[:, None, None] + batch.x1 * batch.t[:, None, None]
    omega = rng.standard_normal((64, 3))

    class Shifted:
        def __init__(self, base, field):
            self.base, self.field = base, field

        def __call__(self, x, t):
            return self.base(x, t) + self.field

    vertical = np.cross(omega[:, None, :], x_t)
    lq = loss_quotient(model, batch, s, space5, with_grad=False).loss
    lq_shift = loss_quotient(Shifted(model, vertical), batch, s, space5, with_grad=False).loss
    add("quotient_loss_vertical_invariance", abs(lq - lq_shift) / lq, 1e-9)

    R = space5.random_rotation(rng)

    class Rotated:
        def __call__(self, x, t):
            return space5.apply_group(R, model(x, t))

    la = loss_af3(model, batch, s, space5, with_grad=False).loss
    la_rot = loss_af3(Rotated(), batch, s, space5, with_grad=False).loss
    add("af3_loss_rotation_invariance", abs(la - la_rot) / la, 1e-9)

    # identical only where ahat is above the conversion floor
    general = Batch(batch.x1, batch.noise, np.minimum(batch.t, 0.99), x0=batch.noise)
    lq = loss_quotient(model, Batch(batch.x1, batch.noise, general.t), s, space5, with_grad=False).loss
    lg = loss_quotient_general(DenoiserVelocity(model, s), general, s, space5, with_grad=False).loss
    add("general_prior_loss_reduces_to_quotient", abs(lg - lq) / lq, 1e-9)

    # -- Kabsch --------------------------------------------------------------------
    gap = recover = polar = 0.0
    for _ in range(40):
        a, b = space5.noise(rng), space5.noise(rng)
        _, brute = brute_force_best_rotation(a, b, 2000, rng)
        gap = max(gap, _norm(kabsch_align(a, b) - b) - brute)
        g = space5.random_rotation(rng)
        Rk, _ = kabsch_rotation(a, space5.apply_group(g, a))
        recover = max(recover, np.abs(Rk - g).max())
        if np.linalg.det(np.einsum("ni,nj->ij", b, a)) > 0:
            # the polar factor is proper only when det H > 0
            polar = max(polar, np.abs(kabsch_rotation_polar(a, b) - kabsch_rotation(a, b)[0]).max())
    add("kabsch_not_worse_than_brute_force", gap, 1e-9)
    add("kabsch_exact_recovery", recover, 1e-9)
    add("kabsch_polar_form_agrees", polar, 1e-8)

    # -- samplers -------------------------------------------------------------------
    # a Gaussian flow stalls at t = 1 / (1 + sigma^2); sigma = 0.7 keeps that off the grid
    gauss = GaussianDenoiser(0.7, s)
    spin = VerticalSpin(gauss, 0.2)
    x0 = space5.noise(rng, 20)
    cfg0 = SamplerConfig(mode="sde", variant="quotient", gamma=0.0)
    a = sde_step("quotient", space5, spin, s, cfg0, x0, 0.3, 0.01, rng)
    b = ode_step("quotient", space5, spin, s, x0, 0.3, 0.01)
    add("sde_gamma_zero_equals_ode", np.abs(a - b).max(), 0.0)

    traj = sample(SamplerConfig(mode="sde", variant="quotient", steps=50, seed=3), space5, spin, s, x0=x0)
    mom = traj.ang_mom_norm / np.maximum(traj.step_norm * _norm(traj.states[:-1]), 1e-300)
    add("quotient_sde_step_angular_momentum", mom.max(), 1e-9)
    traj = sample(SamplerConfig(mode="ode", variant="quotient", steps=50), space5, spin, s, x0=x0)
    moving = np.maximum(traj.step_norm, 1e-300)
    add("quotient_ode_step_angular_momentum", (traj.ang_mom_norm / moving).max(), 1e-9)
    add("quotient_ode_step_vertical_fraction", (traj.vertical_norm / moving).max(), 1e-9)

    xs = rng.standard_normal((50, 1, 2))
    traj = sample(SamplerConfig(mode="ode", variant="quotient", steps=50), so2, GaussianDenoiser(1.0, s), s, x0=xs)
    st = traj.states
    cross = np.abs(st[1:, :, 0, 0] * st[:-1, :, 0, 1] - st[1:, :, 0, 1] * st[:-1, :, 0, 0])
    add("so2_quotient_stays_on_ray", (cross / (_norm(st[1:]) * _norm(st[:-1]))).max(), 1e-12)

    # with a zero denoiser the planar SDE step is fully determined by the noise draw
    g, dt = 0.35, 1e-3
    cfg1 = SamplerConfig(mode="sde", variant="quotient", gamma=g, seed=0)
    zero = np.zeros_like(xs)
    step = sde_step("quotient", so2, lambda x, t: zero, s, cfg1, xs, 0.5, dt, np.random.default_rng(0))
    xi = np.random.default_rng(0).standard_normal(xs.shape)
    drift = velocity_from_denoiser(s, zero, xs, 0.5) + g * score_from_denoiser(s, zero, xs, 0.5)
    outward = xs / np.sum(xs**2, axis=(-1, -2), keepdims=True)
    expected = xs + dt * (so2.project(xs, drift) + g * outward) + np.sqrt(2 * g * dt) * so2.project(xs, xi)
    add("sde_curvature_drift_closed_form", np.abs(step - expected).max(), 1e-12)

    # -- model -----------------------------------------------------------------------
    xg = space5.noise(rng, 8)
    tg = rng.uniform(0, 1, 8)
    up = space5.noise(rng, 8)
    grads = model.flatten_grads(model.backward(xg, tg, up))
    flat = model.get_flat()
    worst = 0.0
    for i in rng.choice(flat.size, 30, replace=False):
        h = 1e-6
        fp, fm = flat.copy(), flat.copy()
        fp[i] += h
        fm[i] -= h
        model.set_flat(fp)
        lp = np.sum(model(xg, tg) * up)
        model.set_flat(fm)
        lm = np.sum(model(xg, tg) * up)
        fd_g = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd_g - grads[i]) / max(abs(fd_g), abs(grads[i]), 1e-6))
    model.set_flat(flat)
    add("mlp_gradient_matches_fd", worst, 1e-5)
    clone = MLPDenoiser.from_dict(model.to_dict())
    add("checkpoint_round_trip", np.abs(clone(xg, tg) - model(xg, tg)).max(), 0.0)

    # -- Gaussian denoiser against Monte Carlo ---------------------------------------
    space2 = SO3Space(2)
    q = np.array([[-0.1, 0.05, 0.0], [0.1, -0.05, 0.0]])
    est = mc_conditional_expectation(lambda r, n: space2.noise(r, n), s, q, 0.5, n=40000, rng=rng)
    exact = GaussianDenoiser(1.0, s)(q, 0.5)
    add("gaussian_denoiser_matches_monte_carlo", np.max(np.abs(est.mean - exact) / np.maximum(est.stderr, 1e-12)), 4.0)
    return checks


def report(checks):
    return {"checks": [c.to_dict() for c in checks], "n_checks": len(checks), "passed": all(c.passed for c in checks)}
