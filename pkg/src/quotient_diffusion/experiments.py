"""Experiment drivers behind the command-line interface.

Every ``run_*`` function takes a resolved configuration (see
:mod:`quotient_diffusion.config`), returns a dict of metrics, and, when
``out_dir`` is given, writes its artifacts plus ``run_record.json`` there.
"""

import logging
import os
import time

import numpy as np

from . import io
from .config import dump_config
from .denoiser import GaussianDenoiser, MLPDenoiser, VerticalSpin
from .geometry import make_space
from .objectives import TrainConfig, train
from .oracles import (
    RadialMixture,
    covariance_error,
    energy_permutation_test,
    ks_statistic,
    orientation_drift,
    shape_descriptor,
)
from .samplers import SamplerConfig, prior_sample, sample, trajectory_length
from .schedule import make_schedule
from .verify import report, run_checks

logger = logging.getLogger(__name__)

# tolerance when comparing path lengths that coincide up to rounding
LENGTH_RTOL = 1e-12


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_space(cfg):
    sp = cfg["space"]
    return make_space(sp["name"], sp["n_points"], degeneracy_tol=sp["degeneracy_tol"], eps=sp["eps"])


def build_schedule(cfg):
    sc = cfg["schedule"]
    return make_schedule(sc["name"], a=sc["a"]) if sc["name"] == "general-bridge" else make_schedule(sc["name"])


def template_cloud(n_points, seed):
    """Fixed random template with unit RMS radius, centred."""
    x = np.random.default_rng(seed).standard_normal((n_points, 3))
    x -= x.mean(axis=0)
    return x / np.sqrt(np.mean(np.sum(x**2, axis=1)))


class TemplateTarget:
    """Template cloud plus isotropic shape noise, centred and uniformly rotated."""

    def __init__(self, space, template, noise):
        self.space, self.template, self.noise = space, template, noise

    def __call__(self, rng, n):
        x = self.template + self.noise * rng.standard_normal((n,) + self.template.shape)
        x = self.space.center(x)
        return self.space.apply_group(self.space.random_rotation(rng, n), x)


class GaussianTarget:
    def __init__(self, space, sigma):
        self.space, self.sigma = space, sigma

    def __call__(self, rng, n):
        return self.sigma * self.space.noise(rng, n)


def build_target(cfg, space):
    tg = cfg["target"]
    kind = tg["kind"]
    if kind == "radial-mixture":
        if space.name != "so2":
            raise ValueError("the radial-mixture target lives on the so2 space")
        return RadialMixture(tg["centers"], tg["widths"])
    if kind == "template":
        return TemplateTarget(space, template_cloud(space.n_points, tg["template_seed"]), tg["shape_noise"])
    if kind == "gaussian":
        return GaussianTarget(space, tg["sigma"])
    raise ValueError(f"unknown target kind {kind!r}")


def data_scale_for(cfg, target, space, rng):
    value = cfg["model"]["data_scale"]
    if value == "none":
        return None
    if value == "auto":
        x = space.center(target(rng, 4096))
        return float(np.sqrt(np.mean(x**2)))
    return float(value)


def build_model(cfg, space, schedule, data_scale, seed):
    m = cfg["model"]
    return MLPDenoiser(
        space,
        m["hidden"],
        m["n_frequencies"],
        m["activation"],
        seed=seed,
        data_scale=data_scale,
        schedule=schedule,
        norm_features=m["norm_features"],
    )


def train_config(cfg, loss=None, seed=None):
    tr = dict(cfg["train"])
    if loss is not None:
        tr["loss"] = loss
    tr["seed"] = cfg["run"]["seed"] if seed is None else seed
    return TrainConfig(**tr)


def sampler_config(cfg, variant=None, seed=None, **extra):
    sc = cfg["sampler"]
    return SamplerConfig(
        mode=extra.get("mode", sc["mode"]),
        variant=sc["variant"] if variant is None else variant,
        steps=sc["steps"],
        gamma=extra.get("gamma", sc["gamma"]),
        eta=sc["eta"],
        seed=cfg["run"]["seed"] if seed is None else seed,
        cutoff=sc["cutoff"],
        curvature=extra.get("curvature", sc["curvature"]),
    )


def _seeds(cfg, k):
    """``k`` derived integer seeds from the run seed (stable across runs)."""
    ss = np.random.SeedSequence(cfg["run"]["seed"])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(k)]


def _per_step_fraction(traj):
    step = traj.step_norm
    return float(np.mean(np.where(step > 0, traj.vertical_norm / np.where(step > 0, step, 1.0), 0.0)))


class _Artifacts:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = []
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        self.files.append(p)
        return p

    def finish(self, command, cfg, metrics, started):
        if self.out_dir:
            io.write_run_record(self.out_dir, command, dump_config(cfg), metrics, self.files, started)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def run_verify(cfg, out_dir=None):
    started = time.time()
    checks = run_checks(cfg["verify"]["n_clouds"], cfg["run"]["seed"], cfg["verify"]["inject"])
    rep = report(checks)
    art = _Artifacts(out_dir)
    if out_dir:
        io.write_json(art.path("oracle_report.json"), rep)
    art.finish("verify", cfg, {"passed": rep["passed"], "n_checks": rep["n_checks"]}, started)
    return rep


# ---------------------------------------------------------------------------
# SO(2) demo
# ---------------------------------------------------------------------------


def run_so2_demo(cfg, out_dir=None):
    """Train a conventional and a quotient model on the planar radial mixture and compare.

    The radial two-mode mixture is a stand-in target chosen for this demo.
    """
    started = time.time()
    space, schedule = build_space(cfg), build_schedule(cfg)
    target = build_target(cfg, space)
    models = [m.strip() for m in cfg["experiment"]["models"].split(",") if m.strip()]
    seeds = _seeds(cfg, 2 * len(models) + 1)
    scale = data_scale_for(cfg, target, space, np.random.default_rng(seeds[-1]))
    n = cfg["sampler"]["n_samples"]
    n_show = min(cfg["sampler"]["n_trajectories"], n)
    metrics, trajs, losses = {}, {}, {}
    for k, name in enumerate(models):
        model = build_model(cfg, space, schedule, scale, seeds[2 * k])
        t0 = time.time()
        res = train(train_config(cfg, loss=name, seed=seeds[2 * k]), target, model, space, schedule)
        t_train = time.time() - t0
        traj = sample(sampler_config(cfg, variant=name, seed=seeds[2 * k + 1]), space, model, schedule, n=n)
        radius = np.linalg.norm(traj.final[:, 0], axis=-1)
        metrics[name] = {
            "ks_radius": ks_statistic(radius, target.radius_cdf),
            "tangential_fraction_per_step": _per_step_fraction(traj),
            "tangential_fraction_path": float(np.mean(traj.tangential_fraction())),
            "final_loss": res.losses[-1] if res.losses else None,
            "train_seconds": t_train,
        }
        trajs[name], losses[name] = traj, res.losses
        logger.info("so2-demo %s: %s", name, metrics[name])
    metrics["data_scale"] = scale
    metrics["wall_clock_s"] = time.time() - started
    art = _Artifacts(out_dir)
    if out_dir:
        io.write_csv(art.path("losses.csv"), io.LOSSES_HEADER, (r for m in models for r in io.loss_rows(m, losses[m])))
        io.write_csv(art.path("samples.csv"), io.SAMPLES_HEADER, (r for m in models for r in io.sample_rows(m, trajs[m].final)))
        io.write_csv(
            art.path("trajectory.csv"),
            io.TRAJECTORY_HEADER,
            (r for m in models for r in io.trajectory_rows(m, trajs[m], range(n_show))),
        )
        io.write_json(art.path("report.json"), metrics)
        ext = float(max(cfg["target"]["centers"])) + 1.5
        panels = []
        for k, m in enumerate(models):
            p = io.SvgPanel(20 + 420 * k, 40, 400, ext, title=f"{m}: samples and trajectories")
            p.scatter(trajs[m].final[:2000, 0], color="#1f77b4")
            for i in range(n_show):
                p.polyline(trajs[m].states[:, i, 0], color=io.PALETTE[i % len(io.PALETTE)])
            panels.append(p)
        io.write_svg(art.path("so2_demo.svg"), panels, 20 + 420 * len(models), 460)
    art.finish("so2-demo", cfg, metrics, started)
    return {"metrics": metrics, "trajectories": trajs, "losses": losses}


# ---------------------------------------------------------------------------
# shape-space demo
# ---------------------------------------------------------------------------


def run_shape_demo(cfg, out_dir=None):
    """Fit a template-plus-noise target and sample with the quotient sampler."""
    started = time.time()
    space, schedule = build_space(cfg), build_schedule(cfg)
    target = build_target(cfg, space)
    seeds = _seeds(cfg, 4)
    scale = data_scale_for(cfg, target, space, np.random.default_rng(seeds[3]))
    model = build_model(cfg, space, schedule, scale, seeds[0])
    res = train(train_config(cfg, seed=seeds[0]), target, model, space, schedule)
    traj = sample(sampler_config(cfg, variant="quotient", seed=seeds[1]), space, model, schedule, n=cfg["sampler"]["n_samples"])
    ref = target(np.random.default_rng(seeds[2]), cfg["experiment"]["n_reference"])
    test = energy_permutation_test(
        shape_descriptor(traj.final), shape_descriptor(ref), cfg["experiment"]["n_permutations"], seeds[2]
    )
    drift = orientation_drift(traj)
    step = np.maximum(traj.step_norm, 1e-300)
    metrics = {
        "descriptor_energy": test.statistic,
        "descriptor_energy_null95": test.threshold,
        "descriptor_energy_p_value": test.p_value,
        "orientation_drift_max": float(drift.max()),
        "orientation_drift_median": float(np.median(drift)),
        "accumulated_step_rotation_max": float(np.max(traj.frame_rot_angle.sum(axis=0))),
        "angular_momentum_per_step_max": float(np.max(traj.ang_mom_norm / step)),
        "final_loss": res.losses[-1] if res.losses else None,
        "data_scale": scale,
    }
    art = _Artifacts(out_dir)
    if out_dir:
        n_show = min(cfg["sampler"]["n_trajectories"], len(traj.final))
        io.write_csv(art.path("losses.csv"), io.LOSSES_HEADER, io.loss_rows("quotient", res.losses))
        io.write_csv(art.path("samples.csv"), io.SAMPLES_HEADER, io.sample_rows("quotient", traj.final))
        io.write_csv(art.path("trajectory.csv"), io.TRAJECTORY_HEADER, io.trajectory_rows("quotient", traj, range(n_show)))
        io.write_json(art.path("report.json"), metrics)
        model.save(art.path("checkpoint.json"))
    art.finish("shape-demo", cfg, metrics, started)
    return {"metrics": metrics, "trajectory": traj, "model": model, "losses": res.losses}


# ---------------------------------------------------------------------------
# exact Gaussian study
# ---------------------------------------------------------------------------


def target_covariance(space, sigma=1.0):
    """Covariance of ``sigma * N(0, I)`` on ``M`` in flattened coordinates."""
    eye = np.eye(space.n_points * space.dim).reshape((-1,) + space.shape)
    return sigma**2 * space.center(eye).reshape(eye.shape[0], -1)


def run_gaussian_exact(cfg, out_dir=None):
    """Exact-denoiser comparison of conventional and quotient sampling.

    Reports covariance errors, a descriptor energy test between the two
    samplers, paired path lengths (plain Gaussian denoiser and one with an
    added purely vertical component) and the SDE curvature ablation.
    """
    started = time.time()
    space, schedule = build_space(cfg), build_schedule(cfg)
    sigma = cfg["target"]["sigma"]
    den = GaussianDenoiser(sigma, schedule)
    seeds = _seeds(cfg, 6)
    n = cfg["sampler"]["n_samples"]
    x0 = prior_sample(space, n, np.random.default_rng(seeds[0]), moment_match=cfg["sampler"]["moment_match"])
    cov = target_covariance(space, sigma)
    out, metrics = {}, {}
    for variant in ("conventional", "quotient"):
        traj = sample(sampler_config(cfg, variant, seeds[1], mode="ode"), space, den, schedule, x0=x0)
        out[f"ode_{variant}"] = traj
        metrics[f"cov_error_ode_{variant}"] = covariance_error(traj.final, cov)
    test = energy_permutation_test(
        shape_descriptor(out["ode_conventional"].final),
        shape_descriptor(out["ode_quotient"].final),
        cfg["experiment"]["n_permutations"],
        seeds[2],
    )
    metrics.update(
        descriptor_energy=test.statistic, descriptor_energy_null95=test.threshold, descriptor_energy_p_value=test.p_value
    )
    for curv in (True, False):
        traj = sample(sampler_config(cfg, "quotient", seeds[3], mode="sde", curvature=curv), space, den, schedule, x0=x0)
        key = "sde_quotient_curvature" if curv else "sde_quotient_no_curvature"
        out[key] = traj
        metrics[f"cov_error_{key}"] = covariance_error(traj.final, cov)
    traj = sample(sampler_config(cfg, "conventional", seeds[3], mode="sde"), space, den, schedule, x0=x0)
    metrics["cov_error_sde_conventional"] = covariance_error(traj.final, cov)

    # paired path lengths from shared starts
    n_pairs = cfg["experiment"]["n_pairs"]
    starts = prior_sample(space, n_pairs, np.random.default_rng(seeds[4]))
    lengths = {}
    denoisers = {"gaussian": den}
    if space.name == "so3":
        denoisers["gaussian_plus_vertical"] = VerticalSpin(den, 0.2)
    for label, d in denoisers.items():
        lc = trajectory_length(sample(sampler_config(cfg, "conventional", mode="ode"), space, d, schedule, x0=starts))
        lq = trajectory_length(sample(sampler_config(cfg, "quotient", mode="ode"), space, d, schedule, x0=starts))
        lengths[label] = (lc, lq)
        metrics[f"shorter_fraction_{label}"] = float(np.mean(lq <= lc * (1 + LENGTH_RTOL)))
        metrics[f"median_length_ratio_{label}"] = float(np.median(lc / lq))
    drift_ode = orientation_drift(out["ode_quotient"])
    drift_sde = orientation_drift(out["sde_quotient_curvature"])
    metrics.update(
        orientation_drift_ode_max=float(drift_ode.max()),
        orientation_drift_sde_max=float(drift_sde.max()),
        orientation_drift_sde_median=float(np.median(drift_sde)),
        angular_momentum_per_step_ode_max=float(
            np.max(out["ode_quotient"].ang_mom_norm / np.maximum(out["ode_quotient"].step_norm, 1e-300))
        ),
        angular_momentum_per_step_sde_max=float(
            np.max(out["sde_quotient_curvature"].ang_mom_norm / np.maximum(out["sde_quotient_curvature"].step_norm, 1e-300))
        ),
    )
    art = _Artifacts(out_dir)
    if out_dir:
        n_show = min(cfg["sampler"]["n_trajectories"], n)
        io.write_csv(
            art.path("samples.csv"),
            io.SAMPLES_HEADER,
            (r for key, tr in out.items() for r in io.sample_rows(key, tr.final)),
        )
        io.write_csv(
            art.path("trajectory.csv"),
            io.TRAJECTORY_HEADER,
            (r for key, tr in out.items() for r in io.trajectory_rows(key, tr, range(n_show))),
        )
        io.write_csv(
            art.path("lengths.csv"),
            ["denoiser", "pair_index", "conventional_length", "quotient_length"],
            ([label, i, a, b] for label, (lc, lq) in lengths.items() for i, (a, b) in enumerate(zip(lc, lq))),
        )
        io.write_json(art.path("report.json"), metrics)
    art.finish("gaussian-exact", cfg, metrics, started)
    return {"metrics": metrics, "trajectories": out, "lengths": lengths}


# ---------------------------------------------------------------------------
# generic train / sample
# ---------------------------------------------------------------------------


def run_train(cfg, out_dir=None):
    started = time.time()
    space, schedule = build_space(cfg), build_schedule(cfg)
    target = build_target(cfg, space)
    seeds = _seeds(cfg, 2)
    scale = data_scale_for(cfg, target, space, np.random.default_rng(seeds[1]))
    model = build_model(cfg, space, schedule, scale, seeds[0])
    res = train(train_config(cfg, seed=seeds[0]), target, model, space, schedule)
    metrics = {"final_loss": res.losses[-1] if res.losses else None, "skipped": res.skipped, "data_scale": scale}
    art = _Artifacts(out_dir)
    if out_dir:
        io.write_csv(art.path("losses.csv"), io.LOSSES_HEADER, io.loss_rows(cfg["train"]["loss"], res.losses))
        model.save(art.path("checkpoint.json"))
    art.finish("train", cfg, metrics, started)
    return {"metrics": metrics, "model": model, "losses": res.losses}


def run_sample(cfg, out_dir=None, checkpoint=None):
    started = time.time()
    path = checkpoint or cfg["model"]["checkpoint"]
    if not path:
        raise FileNotFoundError("no checkpoint given (use --checkpoint or model.checkpoint)")
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = MLPDenoiser.load(path)
    space, schedule = model.space, model.schedule
    sc = sampler_config(cfg)
    traj = sample(sc, space, model, schedule, n=cfg["sampler"]["n_samples"])
    metrics = {
        "mode": sc.mode,
        "variant": sc.variant,
        "tangential_fraction_per_step": _per_step_fraction(traj),
        "angular_momentum_per_step_max": float(np.max(traj.ang_mom_norm / np.maximum(traj.step_norm, 1e-300))),
    }
    art = _Artifacts(out_dir)
    if out_dir:
        n_show = min(cfg["sampler"]["n_trajectories"], len(traj.final))
        io.write_csv(art.path("samples.csv"), io.SAMPLES_HEADER, io.sample_rows(sc.variant, traj.final))
        io.write_csv(art.path("trajectory.csv"), io.TRAJECTORY_HEADER, io.trajectory_rows(sc.variant, traj, range(n_show)))
    art.finish("sample", cfg, metrics, started)
    return {"metrics": metrics, "trajectory": traj}
