"""INI configuration files for the command-line experiments.

Every section and key is declared in :data:`SCHEMA`; anything else is an
error that names the offending key. Values not given fall back to the
per-command defaults in :data:`COMMAND_DEFAULTS` and then to the schema
defaults.
"""

import configparser
import copy

from ._validation import InvalidInputError


class ConfigError(InvalidInputError):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _scale(text):
    if text is None:
        return None
    value = str(text).strip().lower()
    if value in ("auto", "none"):
        return value
    return float(value)


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
    },
    "space": {
        "name": (str, "so3"),
        "n_points": (int, 5),
        "degeneracy_tol": (float, 1e-6),
        "eps": (float, 0.0),
    },
    "target": {
        "kind": (str, "template"),
        "centers": (_floats, (1.0, 2.5)),
        "widths": (_floats, (0.15, 0.15)),
        "template_seed": (int, 0),
        "shape_noise": (float, 0.05),
        "sigma": (float, 1.0),
    },
    "schedule": {
        "name": (str, "linear-one-sided"),
        "a": (float, 1.0),
    },
    "model": {
        "hidden": (_ints, (128, 128, 128)),
        "n_frequencies": (int, 8),
        "activation": (str, "tanh"),
        "data_scale": (_scale, "auto"),
        "norm_features": (_bool, False),
        "checkpoint": (str, ""),
    },
    "train": {
        "loss": (str, "quotient"),
        "epochs": (int, 20),
        "steps_per_epoch": (int, 100),
        "batch_size": (int, 256),
        "lr": (float, 1e-2),
        "momentum": (float, 0.9),
        "optimizer": (str, "sgd"),
        "augment": (_bool, True),
        "weighting": (str, "velocity"),
    },
    "sampler": {
        "mode": (str, "ode"),
        "variant": (str, "quotient"),
        "steps": (int, 200),
        "gamma": (float, 0.35),
        "eta": (float, 1.0),
        "cutoff": (float, 1e-3),
        "curvature": (_bool, True),
        "n_samples": (int, 1000),
        "moment_match": (_bool, False),
        "n_trajectories": (int, 8),
    },
    "experiment": {
        "n_pairs": (int, 500),
        "n_reference": (int, 2000),
        "n_permutations": (int, 200),
        "models": (str, "conventional,quotient"),
    },
    "verify": {
        "n_clouds": (int, 200),
        "inject": (str, ""),
    },
}

COMMAND_DEFAULTS = {
    "verify": {},
    "so2-demo": {
        "space": {"name": "so2", "n_points": 1, "degeneracy_tol": 1e-9},
        "target": {"kind": "radial-mixture"},
        "model": {"hidden": (64, 64, 64), "activation": "relu", "norm_features": True},
        "train": {"epochs": 120, "steps_per_epoch": 200, "batch_size": 512},
        "sampler": {"n_samples": 5000, "mode": "ode"},
    },
    "shape-demo": {
        "space": {"name": "so3", "n_points": 5},
        "target": {"kind": "template"},
        "model": {"activation": "relu", "norm_features": True},
        "train": {"epochs": 80, "steps_per_epoch": 200, "batch_size": 256},
        "sampler": {"mode": "sde", "n_samples": 1000},
        "experiment": {"n_reference": 1000},
    },
    "gaussian-exact": {
        "space": {"name": "so3", "n_points": 5},
        "target": {"kind": "gaussian"},
        "sampler": {"n_samples": 2000, "moment_match": True},
    },
    "train": {},
    "sample": {"sampler": {"n_samples": 1000}},
}


def defaults(command=None):
    """Nested dict of defaults for ``command`` (schema defaults if ``None``)."""
    cfg = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    if command is not None:
        if command not in COMMAND_DEFAULTS:
            raise ConfigError(f"unknown command {command!r}")
        for sec, vals in COMMAND_DEFAULTS[command].items():
            cfg[sec].update(copy.deepcopy(vals))
    return cfg


def parse_value(section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key '{key}' in section [{section}]")
    parser = SCHEMA[section][key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None


def read_config_text(text):
    """Parse INI text into ``{section: {key: value}}`` with schema validation."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            out.setdefault(section, {})[key] = parse_value(section, key, raw)
    return out


def load_config(command, path=None, overrides=None):
    """Resolve the configuration for ``command``.

    Precedence: ``overrides`` > file at ``path`` > command defaults > schema defaults.
    """
    cfg = defaults(command)
    if path:
        with open(path) as fh:
            user = read_config_text(fh.read())
        for sec, vals in user.items():
            cfg[sec].update(vals)
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        parse_value(sec, key, value)
        cfg[sec][key] = value
    return cfg


def dump_config(cfg):
    """Render a resolved config back to INI text."""
    lines = []
    for sec, vals in cfg.items():
        lines.append(f"[{sec}]")
        for key, value in vals.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
