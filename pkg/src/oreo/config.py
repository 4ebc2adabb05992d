"""Strict JSON run-configuration parsing.

Every command takes one JSON config.  Unknown keys are rejected, and any
relative path is resolved against the config file's directory before
execution so runs are reproducible from any working directory.
"""

import json
import os

from .datagen import OCCLUDER_KINDS, SynthSpec
from .errors import ConfigError
from .model import BackboneConfig
from .trainer import TrainConfig


def load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def check_keys(obj, allowed, context):
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; allowed: {sorted(allowed)}")


def require(obj, key, context):
    if key not in obj:
        raise ConfigError(f"{context}: missing required key '{key}'")
    return obj[key]


def resolve_path(path, base):
    if path is None:
        return None
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def parse_synth_spec(obj, context="synth"):
    check_keys(
        obj,
        {
            "n_identities",
            "images_per_identity",
            "occluded_fraction",
            "image_size",
            "occluder_kinds",
            "label_noise",
            "seed",
        },
        context,
    )
    kinds = obj.get("occluder_kinds")
    spec = SynthSpec(
        n_identities=int(require(obj, "n_identities", context)),
        images_per_identity=int(require(obj, "images_per_identity", context)),
        occluded_fraction=float(obj.get("occluded_fraction", 0.4)),
        image_size=int(obj.get("image_size", 64)),
        occluder_kinds=tuple(kinds) if kinds is not None else OCCLUDER_KINDS,
        label_noise=float(obj.get("label_noise", 0.0)),
        seed=int(obj.get("seed", 0)),
    )
    spec.validate()
    return spec


def parse_data_source(obj, base, context="data"):
    """Either {"manifest": path} or {"synth": {...}}; returns ("manifest", path)
    or ("synth", SynthSpec)."""
    check_keys(obj, {"manifest", "synth"}, context)
    if ("manifest" in obj) == ("synth" in obj):
        raise ConfigError(f"{context}: exactly one of 'manifest' or 'synth' is required")
    if "manifest" in obj:
        return "manifest", resolve_path(obj["manifest"], base)
    return "synth", parse_synth_spec(obj["synth"], f"{context}.synth")


def parse_model_config(obj, context="model"):
    check_keys(obj, {"channels", "embedding_dim", "image_size"}, context)
    channels = obj.get("channels", [8, 16, 32, 64])
    config = BackboneConfig(
        channels=tuple(int(c) for c in channels),
        embedding_dim=int(obj.get("embedding_dim", 32)),
        image_size=int(obj.get("image_size", 64)),
    )
    config.validate()
    return config


def parse_train_config(obj, context="train"):
    allowed = {
        "oan",
        "obs",
        "stl",
        "attr_loss",
        "epochs",
        "pairs_per_batch",
        "pairs_per_epoch",
        "learning_rate",
        "momentum",
        "margin",
        "grad_clip",
        "seed",
        "checkpoint_every",
        "deterministic",
    }
    check_keys(obj, allowed, context)
    kwargs = dict(obj)
    if "pairs_per_epoch" in kwargs and kwargs["pairs_per_epoch"] is not None:
        kwargs["pairs_per_epoch"] = int(kwargs["pairs_per_epoch"])
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg
