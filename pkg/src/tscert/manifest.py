"""Run manifests: versioned JSON recording config, seeds, outputs and metrics."""

from __future__ import annotations

import json
import os
from pathlib import Path

from . import __version__
from .errors import ConfigError

MANIFEST_VERSION = 1
FIELDS = (
    "schema_version",
    "tool_version",
    "command",
    "resolved_config",
    "base_dir",
    "seeds",
    "wall_clock_seconds",
    "outputs",
    "metrics",
)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def build_manifest(command, cfg, base_dir, seconds, outputs, metrics) -> dict:
    return {
        "schema_version": MANIFEST_VERSION,
        "tool_version": __version__,
        "command": command,
        "resolved_config": cfg,
        "base_dir": str(base_dir),
        "seeds": {
            "data": cfg["data"]["seed"],
            "model": cfg["model"]["seed"],
            "train": cfg["train"]["seed"],
            "smoothing": cfg["smoothing"]["seed"],
            "attack": cfg["attack"]["seed"],
        },
        "wall_clock_seconds": seconds,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "metrics": metrics,
    }


def write_manifest(path, manifest: dict) -> Path:
    return atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable manifest: {exc}") from None
    if not isinstance(manifest, dict):
        raise ConfigError(f"{path}: manifest must be a JSON object")
    unknown = set(manifest) - set(FIELDS)
    if unknown:
        raise ConfigError(f"{path}: unknown manifest fields {sorted(unknown)}")
    missing = set(FIELDS) - set(manifest)
    if missing:
        raise ConfigError(f"{path}: manifest missing fields {sorted(missing)}")
    if manifest["schema_version"] != MANIFEST_VERSION:
        raise ConfigError(f"{path}: unsupported manifest schema_version {manifest['schema_version']}")
    return manifest
