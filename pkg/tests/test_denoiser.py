import json

import numpy as np
import pytest

from conftest import norm
from quotient_diffusion._validation import InvalidInputError
from quotient_diffusion.denoiser import (
    DenoiserVelocity,
    GaussianDenoiser,
    MLPDenoiser,
    VerticalSpin,
    analytic_gaussian_denoiser,
    time_features,
)
from quotient_diffusion.geometry import SO2Space, SO3Space
from quotient_diffusion.schedule import LinearOneSided, velocity_from_denoiser


def test_time_features_values():
    f = time_features(0.5, 2)
    np.testing.assert_allclose(f, [[0.5, 1.0, 0.0, 0.0, -1.0]], atol=1e-15)
    assert time_features(np.array([0.1, 0.2]), 8).shape == (2, 17)
    with pytest.raises(InvalidInputError):
        time_features(np.array([0.1, 0.2]), 8, batch=3)


def test_mlp_shapes_and_centring(rng):
    sp = SO3Space(4)
    m = MLPDenoiser(sp, (16, 16), seed=0)
    x = sp.noise(rng, 5)
    out = m(x, rng.uniform(size=5))
    assert out.shape == x.shape
    np.testing.assert_allclose(out.mean(axis=-2), 0.0, atol=1e-15)
    assert m(x[0], 0.3).shape == (4, 3)
    assert m.layer_sizes == [12 + 17, 16, 16, 12]
    with pytest.raises(InvalidInputError):
        m(np.zeros((5, 3, 3)), 0.5)
    with pytest.raises(InvalidInputError):
        MLPDenoiser(sp, activation="gelu")


def test_mlp_deterministic_init():
    sp = SO3Space(3)
    a, b = MLPDenoiser(sp, (8,), seed=7), MLPDenoiser(sp, (8,), seed=7)
    np.testing.assert_array_equal(a.get_flat(), b.get_flat())
    assert not np.array_equal(a.get_flat(), MLPDenoiser(sp, (8,), seed=8).get_flat())


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("data_scale", [None, 1.3])
def test_mlp_gradient_matches_finite_differences(rng, activation, data_scale):
    sp = SO3Space(4)
    m = MLPDenoiser(sp, (12, 12), activation=activation, data_scale=data_scale, norm_features=True, seed=1)
    x = sp.noise(rng, 6)
    t = rng.uniform(0.05, 0.95, 6)
    up = sp.noise(rng, 6)
    grads = m.flatten_grads(m.backward(x, t, up))
    flat = m.get_flat()
    for i in rng.choice(flat.size, 25, replace=False):
        h = 1e-6
        fp, fm = flat.copy(), flat.copy()
        fp[i] += h
        fm[i] -= h
        m.set_flat(fp)
        lp = np.sum(m(x, t) * up)
        m.set_flat(fm)
        lm = np.sum(m(x, t) * up)
        fd = (lp - lm) / (2 * h)
        assert abs(fd - grads[i]) <= 1e-5 * max(abs(fd), 1e-3)
    m.set_flat(flat)


def test_preconditioning_endpoints(rng):
    sp = SO3Space(4)
    m = MLPDenoiser(sp, (8,), data_scale=1.0)
    x = sp.noise(rng, 3)
    # c_out vanishes at t = 1 so D is the identity there
    np.testing.assert_allclose(m(x, 1.0), x, atol=1e-15)
    with pytest.raises(InvalidInputError):
        MLPDenoiser(sp, (8,), data_scale=0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    sp = SO2Space()
    m = MLPDenoiser(sp, (8, 8), activation="relu", data_scale=1.5, norm_features=True, seed=3)
    path = tmp_path / "ckpt.json"
    m.save(path)
    m2 = MLPDenoiser.load(path)
    x = rng.standard_normal((4, 1, 2))
    np.testing.assert_array_equal(m2(x, 0.4), m(x, 0.4))
    data = json.loads(path.read_text())
    assert data["format"] == "quotient-diffusion-mlp" and data["version"] == 1
    assert data["layout"]["layer_sizes"] == m.layer_sizes
    data["version"] = 99
    with pytest.raises(InvalidInputError):
        MLPDenoiser.from_dict(data)
    data["version"] = 1
    data["params"][0][0] = [[0.0]]
    with pytest.raises(InvalidInputError):
        MLPDenoiser.from_dict(data)


def test_set_flat_rejects_wrong_size():
    m = MLPDenoiser(SO3Space(3), (4,))
    with pytest.raises(InvalidInputError):
        m.set_flat(np.zeros(3))


def test_gaussian_denoiser_gain(rng):
    s = LinearOneSided()
    d = GaussianDenoiser(1.0, s)
    assert d.gain(0.5) == pytest.approx(1.0)
    assert d.gain(0.0) == 0.0
    x = SO3Space(3).noise(rng, 2)
    np.testing.assert_allclose(analytic_gaussian_denoiser(2.0, s, x, 0.5), (0.5 * 4 / (0.25 * 4 + 0.25)) * x)
    with pytest.raises(InvalidInputError):
        GaussianDenoiser(0.0)


def test_vertical_spin_is_vertical_and_equivariant(rng):
    sp = SO3Space(5)
    s = LinearOneSided()
    base = GaussianDenoiser(1.0, s)
    spin = VerticalSpin(base, 0.5)
    x = sp.noise(rng)
    extra = spin(x, 0.3) - base(x, 0.3)
    assert norm(sp.project(x, extra)) <= 1e-12 * norm(extra)
    assert norm(extra) > 0
    g = sp.random_rotation(rng)
    np.testing.assert_allclose(spin(sp.apply_group(g, x), 0.3), sp.apply_group(g, spin(x, 0.3)), atol=1e-12)


def test_denoiser_velocity_matches_conversion_and_gradient(rng):
    sp = SO3Space(3)
    s = LinearOneSided()
    m = MLPDenoiser(sp, (8,), seed=0)
    v = DenoiserVelocity(m, s)
    x = sp.noise(rng, 4)
    t = rng.uniform(0.1, 0.9, 4)
    np.testing.assert_allclose(v(x, t), velocity_from_denoiser(s, m(x, t), x, t), atol=1e-14)
    up = sp.noise(rng, 4)
    g = m.flatten_grads(v.backward(x, t, up))
    flat = m.get_flat()
    i, h = 5, 1e-6
    fp, fm = flat.copy(), flat.copy()
    fp[i] += h
    fm[i] -= h
    m.set_flat(fp)
    lp = np.sum(v(x, t) * up)
    m.set_flat(fm)
    lm = np.sum(v(x, t) * up)
    assert g[i] == pytest.approx((lp - lm) / (2 * h), rel=1e-6)
