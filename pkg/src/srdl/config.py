"""Run configuration: profile defaults, YAML loading, validation and digest."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


FULL_DEFAULTS = {
    "profile": "full",
    "seed": 0,
    "data": {
        "train_manifest": None,
        "val_manifest": None,
        "vocabulary": None,
        "word_vectors": None,
        "val_split": "hash",       # "hash" carves ~20% of train_manifest; "none" uses val_manifest
    },
    "augment": {
        "resize_base": 512,
        "crop_scales": [512, 448, 384, 320, 256],
        "final_size": 448,
        "hflip_probability": 0.5,
        "mean": [0.485, 0.456, 0.406],
        "std": [0.229, 0.224, 0.225],
        "crop_mode": "independent",
    },
    "backbone": {"kind": "resnet101", "channels": None, "bias": True, "weights": None},
    "graph": {"layers": 2, "negative_slope": 0.2},
    "car": {"ablations": []},
    "oe": {"enabled": True, "alpha": 0.5, "topk": 3},
    "optim": {
        "lr": 1e-5,
        "betas": [0.9, 0.999],
        "weight_decay": 5e-4,
        "epochs": 20,
        "lr_step_epochs": 10,
        "lr_gamma": 0.1,
        "batch_size": 16,
    },
    "metrics": {"rule": "threshold", "threshold": 0.5, "report_top3": False},
    "log": {"step_log": True},
}

DESK_OVERRIDES = {
    "profile": "desk",
    "augment": {
        "resize_base": 72,
        "crop_scales": [72, 64, 56],
        "final_size": 64,
    },
    "backbone": {"kind": "desk", "channels": [16, 32, 48, 64]},
    "optim": {"lr": 1e-3, "epochs": 30, "lr_step_epochs": 20, "batch_size": 8},
}

# keys that do not change what is computed; excluded from the digest
_DIGEST_EXCLUDE = {("log",), ("data", "val_manifest")}


def _merge(base: dict, over: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {'.'.join(path + (k,))!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {'.'.join(path + (k,))!r} must be a mapping")
            out[k] = _merge(out[k], v, path + (k,))
        else:
            out[k] = v
    return out


def defaults(profile: str) -> dict:
    if profile == "full":
        return copy.deepcopy(FULL_DEFAULTS)
    if profile == "desk":
        return _merge(FULL_DEFAULTS, DESK_OVERRIDES)
    raise ConfigError(f"unknown profile {profile!r}; expected 'desk' or 'full'")


def build_config(overrides: dict | None = None, seed: int | None = None, env=None) -> dict:
    """Defaults for the chosen profile, then file overrides, then environment, then ``seed``."""
    env = os.environ if env is None else env
    overrides = dict(overrides or {})
    profile = env.get("SRDL_PROFILE") or overrides.get("profile") or "desk"
    overrides["profile"] = profile
    cfg = _merge(defaults(profile), overrides)
    if env.get("SRDL_SEED"):
        try:
            cfg["seed"] = int(env["SRDL_SEED"])
        except ValueError:
            raise ConfigError(f"SRDL_SEED must be an integer, got {env['SRDL_SEED']!r}")
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def load_config(path=None, seed: int | None = None, env=None) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping")
        base = Path(path).parent
        for key in ("train_manifest", "val_manifest", "vocabulary", "word_vectors"):
            val = (raw.get("data") or {}).get(key)
            if val and not Path(val).is_absolute():
                raw["data"][key] = str((base / val).resolve())
    return build_config(raw, seed=seed, env=env)


def _check(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: dict) -> None:
    o = cfg["oe"]
    _check(isinstance(o["enabled"], bool), "oe.enabled", "must be true/false")
    _check(isinstance(o["alpha"], (int, float)) and 0 < o["alpha"] < 1, "oe.alpha", "must lie in (0, 1)")
    _check(isinstance(o["topk"], int) and o["topk"] >= 1, "oe.topk", "must be a positive integer")
    p = cfg["optim"]
    _check(p["lr"] > 0, "optim.lr", "must be positive")
    _check(len(p["betas"]) == 2 and all(0 <= b < 1 for b in p["betas"]), "optim.betas", "two values in [0, 1)")
    _check(p["weight_decay"] >= 0, "optim.weight_decay", "must be non-negative")
    _check(isinstance(p["epochs"], int) and p["epochs"] >= 1, "optim.epochs", "positive integer")
    _check(isinstance(p["lr_step_epochs"], int) and p["lr_step_epochs"] >= 1, "optim.lr_step_epochs",
           "positive integer")
    _check(0 < p["lr_gamma"] <= 1, "optim.lr_gamma", "must lie in (0, 1]")
    _check(isinstance(p["batch_size"], int) and p["batch_size"] >= 1, "optim.batch_size", "positive integer")
    a = cfg["augment"]
    _check(a["final_size"] > 0, "augment.final_size", "must be positive")
    _check(all(1 <= s <= a["resize_base"] for s in a["crop_scales"]) and a["crop_scales"],
           "augment.crop_scales", "must be non-empty and <= resize_base")
    _check(0 <= a["hflip_probability"] <= 1, "augment.hflip_probability", "must lie in [0, 1]")
    _check(a["crop_mode"] in ("independent", "single"), "augment.crop_mode", "independent | single")
    g = cfg["graph"]
    _check(isinstance(g["layers"], int) and g["layers"] >= 1, "graph.layers", "positive integer")
    _check(g["negative_slope"] >= 0, "graph.negative_slope", "must be non-negative")
    from .car import ABLATIONS
    bad = set(cfg["car"]["ablations"]) - ABLATIONS
    _check(not bad, "car.ablations", f"unknown flags {sorted(bad)}")
    _check(cfg["backbone"]["kind"] in ("desk", "resnet101"), "backbone.kind", "desk | resnet101")
    _check(cfg["metrics"]["rule"] in ("threshold", "top3"), "metrics.rule", "threshold | top3")
    _check(cfg["data"]["val_split"] in ("hash", "none"), "data.val_split", "hash | none")
    _check(isinstance(cfg["seed"], int), "seed", "must be an integer")
    for key in ("train_manifest", "val_manifest", "vocabulary", "word_vectors", ):
        val = cfg["data"][key]
        _check(val is None or Path(val).exists(), f"data.{key}", f"file {val} does not exist")


def _strip(cfg: dict, path=()) -> dict:
    out = {}
    for k, v in cfg.items():
        if path + (k,) in _DIGEST_EXCLUDE:
            continue
        out[k] = _strip(v, path + (k,)) if isinstance(v, dict) else v
    return out


def config_digest(cfg: dict) -> str:
    blob = json.dumps(_strip(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
