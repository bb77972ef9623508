import csv
import hashlib
import json

import numpy as np
import pytest

from quotient_diffusion import io
from quotient_diffusion.cli import main
from quotient_diffusion.config import ConfigError, dump_config, load_config, read_config_text
from quotient_diffusion.denoiser import MLPDenoiser

TINY = """
[space]
name = so3
n_points = 4

[model]
hidden = 8

[train]
epochs = 2
steps_per_epoch = 5
batch_size = 16

[sampler]
steps = 20
n_samples = 6
n_trajectories = 2
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config -------------------------------------------------------------------------


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key 'learning_rate' in section \\[train\\]"):
        read_config_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="section \\[optim\\]"):
        read_config_text("[optim]\nlr = 0.1\n")
    with pytest.raises(ConfigError, match="train.epochs"):
        read_config_text("[train]\nepochs = many\n")


def test_config_precedence(tiny):
    cfg = load_config("train", tiny, {"run.seed": 9})
    assert cfg["run"]["seed"] == 9
    assert cfg["model"]["hidden"] == (8,)
    assert cfg["train"]["lr"] == 1e-2
    again = read_config_text(dump_config(cfg))
    assert again["model"]["hidden"] == (8,) and again["run"]["seed"] == 9


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sampler]\nsteps_total = 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "steps_total" in capsys.readouterr().err
    assert main(["sample", "--out", str(tmp_path / "o")]) == 2


# -- verify ------------------------------------------------------------------------------


def test_verify_passes_and_detects_injected_bug(tmp_path, capsys):
    cfg = tmp_path / "v.ini"
    cfg.write_text("[verify]\nn_clouds = 40\n")
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    assert main(["verify", "--config", str(cfg), "--inject", "curvature-sign", "--out", str(tmp_path / "bad")]) == 1
    assert "FAIL" in capsys.readouterr().out
    rep = json.loads((tmp_path / "bad" / "oracle_report.json").read_text())
    assert not rep["passed"]


# -- train / sample round trip -------------------------------------------------------------


def test_train_then_sample_round_trip(tmp_path, tiny):
    out = tmp_path / "train"
    assert main(["train", "--config", tiny, "--seed", "3", "--out", str(out)]) == 0
    ckpt = out / "checkpoint.json"
    model = MLPDenoiser.load(ckpt)
    assert model.layer_sizes[1] == 8
    losses = _rows(out / "losses.csv")
    assert losses[0] == io.LOSSES_HEADER and len(losses) == 3

    runs = []
    for name in ("s1", "s2"):
        d = tmp_path / name
        assert main(["sample", "--config", tiny, "--checkpoint", str(ckpt), "--mode", "sde", "--n", "4", "--out", str(d)]) == 0
        runs.append(d)
    for f in ("samples.csv", "trajectory.csv"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()

    samples = _rows(runs[0] / "samples.csv")
    assert samples[0] == io.SAMPLES_HEADER
    assert len(samples) == 1 + 4 * 4
    traj = _rows(runs[0] / "trajectory.csv")
    assert traj[0] == io.TRAJECTORY_HEADER
    # two trajectories, 21 states, four points each
    assert len(traj) == 1 + 2 * 21 * 4
    cols = {k: i for i, k in enumerate(traj[0])}
    # diagnostics describe the step leaving each state, so the last state has none
    last = max(int(r[cols["step"]]) for r in traj[1:])
    for r in traj[1:]:
        assert (r[cols["frame_rot_angle"]] == "") == (int(r[cols["step"]]) == last)


def test_run_record_hashes_match(tmp_path, tiny):
    out = tmp_path / "train"
    main(["train", "--config", tiny, "--out", str(out)])
    rec = json.loads((out / "run_record.json").read_text())
    assert rec["command"] == "train"
    assert set(rec["files"]) == {"losses.csv", "checkpoint.json"}
    for name, digest in rec["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert "[train]" in rec["config"]


def test_outputs_are_byte_reproducible(tmp_path, tiny):
    for d in ("a", "b"):
        main(["train", "--config", tiny, "--seed", "1", "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    main(["train", "--config", tiny, "--seed", "2", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() != (tmp_path / "c" / "checkpoint.json").read_bytes()


# -- demos (tiny settings) -----------------------------------------------------------------


def test_gaussian_exact_smoke(tmp_path):
    cfg = tmp_path / "g.ini"
    cfg.write_text("[sampler]\nsteps = 40\nn_samples = 300\n[experiment]\nn_permutations = 20\nn_reference = 300\n")
    assert main(["gaussian-exact", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g" / "report.json").read_text())
    assert rep["angular_momentum_per_step_sde_max"] <= 1e-10
    lengths = _rows(tmp_path / "g" / "lengths.csv")
    assert len(lengths) > 1


def test_so2_demo_smoke(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[train]\nepochs = 1\nsteps_per_epoch = 5\nbatch_size = 32\n[sampler]\nsteps = 20\nn_samples = 50\n")
    assert main(["so2-demo", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    rep = json.loads((tmp_path / "s" / "report.json").read_text())
    assert {"conventional", "quotient"} <= set(rep)
    assert (tmp_path / "s" / "so2_demo.svg").read_text().startswith("<svg")
    np.testing.assert_allclose(rep["quotient"]["tangential_fraction_per_step"], 0.0, atol=1e-12)
