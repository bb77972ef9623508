import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from quotient_diffusion._validation import InvalidInputError
from quotient_diffusion.estimator import (
    CenterOfMassRemover,
    KabschAligner,
    QuotientDiffusion,
    ShapeDescriptor,
    as_clouds,
)
from quotient_diffusion.geometry import SO3Space


def test_as_clouds():
    C, flat = as_clouds(np.zeros((4, 9)))
    assert C.shape == (4, 3, 3) and flat
    with pytest.raises(InvalidInputError):
        as_clouds(np.zeros((4, 10)))
    with pytest.raises(InvalidInputError):
        as_clouds(np.full((2, 3, 3), np.nan))
    with pytest.raises(InvalidInputError):
        as_clouds(np.zeros((2, 3, 2)))


def test_transformers_in_pipeline(rng):
    sp = SO3Space(5)
    base = sp.noise(rng)
    X = np.stack([sp.apply_group(sp.random_rotation(rng), base) for _ in range(6)]) + rng.normal(size=(6, 1, 3))
    flat = X.reshape(6, -1)
    centred = CenterOfMassRemover().fit_transform(flat)
    assert centred.shape == (6, 15)
    np.testing.assert_allclose(centred.reshape(6, 5, 3).mean(axis=1), 0.0, atol=1e-14)
    aligned = KabschAligner().fit_transform(X)
    np.testing.assert_allclose(aligned, np.broadcast_to(aligned[0], aligned.shape), atol=1e-12)
    d = make_pipeline(CenterOfMassRemover(), ShapeDescriptor()).fit_transform(X)
    np.testing.assert_allclose(d, np.broadcast_to(d[0], d.shape), atol=1e-12)
    with pytest.raises(InvalidInputError):
        KabschAligner(reference=np.zeros((4, 3))).fit(X)


def test_estimator_params_and_clone():
    est = QuotientDiffusion(hidden=(8,), epochs=1)
    params = est.get_params()
    assert params["hidden"] == (8,) and params["loss"] == "quotient"
    other = clone(est).set_params(loss="conventional")
    assert other.loss == "conventional" and est.loss == "quotient"


def test_estimator_fit_sample_denoise(rng):
    sp = SO3Space(4)
    X = 0.5 * sp.noise(rng, 64)
    est = QuotientDiffusion(hidden=(16,), epochs=2, steps_per_epoch=10, batch_size=32, steps=20, random_state=0)
    est.fit(X.reshape(64, -1))
    assert len(est.losses_) == 2 and est.n_points_ == 4
    out = est.sample(5, random_state=1)
    assert out.shape == (5, 4, 3)
    np.testing.assert_array_equal(out, est.sample(5, random_state=1))
    traj = est.sample(3, random_state=1, return_trajectory=True)
    assert traj.states.shape == (21, 3, 4, 3)
    assert np.abs(traj.ang_mom_norm).max() <= 1e-10
    assert est.denoise(X[:2].reshape(2, -1), 0.5).shape == (2, 12)


def test_estimator_is_reproducible(rng):
    X = SO3Space(3).noise(rng, 32)
    kw = dict(hidden=(8,), epochs=1, steps_per_epoch=5, batch_size=16, steps=10, random_state=4)
    a = QuotientDiffusion(**kw).fit(X)
    b = QuotientDiffusion(**kw).fit(X)
    np.testing.assert_array_equal(a.model_.get_flat(), b.model_.get_flat())


def test_sample_before_fit_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        QuotientDiffusion().sample(2)
