"""Run configuration: a sectioned key=value file (INI syntax), schema version 1.

Every key has a type and a default; unknown sections or keys are rejected
with their ``section.key`` path. See README for the full schema.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _words(text):
    return [v for v in text.replace(",", " ").split()]


def _blocks(text):
    out = []
    for item in _words(text):
        channels, _, kernel = item.partition(":")
        out.append([int(channels), int(kernel)])
    return out


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> key -> (parser, default). Defaults follow the desk-scale setup.
SCHEMA = {
    "meta": {"schema_version": (int, SCHEMA_VERSION), "name": (str, "run")},
    "data": {
        "source": (str, "cbf"),
        "train_path": (str, ""),
        "test_path": (str, ""),
        "delimiter": (str, "tab"),
        "n_train_per_label": (int, 10),
        "n_test_per_label": (int, 300),
        "length": (int, 128),
        "num_labels": (int, 3),
        "sep": (float, 4.0),
        "seed": (int, 0),
        "znormalize": (_bool, True),
        "test_subset": (int, 0),
    },
    "model": {"blocks": (_blocks, [[16, 7], [16, 5]]), "seed": (int, 0)},
    "train": {
        "epochs": (int, 200),
        "batch_size": (int, 16),
        "learning_rate": (float, 1e-3),
        "optimizer": (str, "adam"),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "seed": (int, 0),
    },
    "smoothing": {
        "sigma": (float, 0.4),
        "mode": (str, "single"),
        "m": (int, None),  # resolved: 1 for single, 5 for the ensemble modes
        "mask_kind": (str, "binomial"),
        "keep_ratio": (float, 0.9),
        "n": (int, 1000),
        "beta": (float, 0.001),
        "seed": (int, 0),
        "radius_grid": (_floats, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
    },
    "attack": {
        "epsilons": (_floats, [0.25, 0.5, 0.75, 1.0]),
        "steps": (int, 40),
        "step_size": (_opt_float, None),
        "eot_draws": (int, 16),
        "n_eval": (int, 200),
        "samples": (int, 100),
        "include_benign": (_bool, True),
        "benign_checkpoint": (str, ""),
        "seed": (int, 0),
    },
    "ablate": {
        "sizes": (_ints, [1, 3, 5, 10]),
        "keep_ratios": (_floats, [0.5, 0.7, 0.9, 1.0]),
        "kinds": (_words, ["binomial", "continuous"]),
        "samples": (int, 0),
    },
    "paths": {"checkpoints": (_words, [])},
    "report": {
        "manifests": (_words, []),
        "surface_sigma": (float, 1.0),
        "surface_alphas": (_floats, [1.5, 2.0, 4.0, 8.0]),
        "surface_pa_steps": (int, 51),
    },
}


def defaults() -> dict:
    return {sec: {key: default for key, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                cfg[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: {section}.{key}: {exc}") from None
    return validate(cfg, source)


def validate(cfg: dict, source: str = "<config>") -> dict:
    if cfg["meta"]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{source}: meta.schema_version must be {SCHEMA_VERSION}")
    if cfg["smoothing"]["m"] is None:
        cfg["smoothing"]["m"] = 1 if cfg["smoothing"]["mode"] == "single" else 5
    checks = [
        ("data.source", cfg["data"]["source"] in ("cbf", "overlap", "ucr")),
        ("data.delimiter", cfg["data"]["delimiter"] in ("tab", "comma")),
        ("smoothing.mode", cfg["smoothing"]["mode"] in ("single", "self_ensemble", "deep_ensemble")),
        ("smoothing.mask_kind", cfg["smoothing"]["mask_kind"] in ("binomial", "continuous")),
        ("smoothing.sigma", cfg["smoothing"]["sigma"] >= 0),
        ("smoothing.n", cfg["smoothing"]["n"] >= 1),
        ("smoothing.beta", 0 < cfg["smoothing"]["beta"] < 1),
        ("smoothing.keep_ratio", 0 <= cfg["smoothing"]["keep_ratio"] <= 1),
        ("smoothing.m", cfg["smoothing"]["m"] >= 1),
        ("train.epochs", cfg["train"]["epochs"] >= 1),
        ("train.learning_rate", cfg["train"]["learning_rate"] >= 0),
        ("train.optimizer", cfg["train"]["optimizer"] in ("sgd", "adam")),
        ("attack.epsilons", len(cfg["attack"]["epsilons"]) > 0),
        ("attack.eot_draws", cfg["attack"]["eot_draws"] >= 1),
        ("model.blocks", len(cfg["model"]["blocks"]) > 0),
    ]
    for path, ok in checks:
        if not ok:
            raise ConfigError(f"{source}: invalid value for {path}")
    if cfg["smoothing"]["mode"] == "single" and cfg["smoothing"]["m"] != 1:
        raise ConfigError(f"{source}: smoothing.m must be 1 when smoothing.mode = single")
    if cfg["smoothing"]["mode"] == "deep_ensemble" and cfg["smoothing"]["m"] < 2:
        raise ConfigError(f"{source}: smoothing.m must be >= 2 for deep_ensemble")
    if cfg["data"]["source"] == "ucr" and not (cfg["data"]["train_path"] and cfg["data"]["test_path"]):
        raise ConfigError(f"{source}: data.train_path and data.test_path are required for source = ucr")
    return cfg


def from_resolved(resolved: dict, source: str = "<manifest>") -> dict:
    """Rebuild a config from a manifest's ``resolved_config``; every section
    and key must be known."""
    cfg = defaults()
    for section, keys in resolved.items():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, value in keys.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            cfg[section][key] = value
    return validate(cfg, source)


def load_config(path) -> tuple:
    """Read an INI config or a run manifest (its resolved config is reused).

    Returns ``(config, base_dir)``; relative paths in the config resolve
    against ``base_dir``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        from .manifest import read_manifest

        manifest = read_manifest(path)
        return from_resolved(manifest["resolved_config"], str(path)), Path(manifest["base_dir"])
    return parse_config_text(text, str(path)), path.parent.resolve()


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True)
