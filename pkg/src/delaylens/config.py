"""Run configuration: a YAML key:value file deep-merged over defaults."""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

DEFAULTS = {
    "seed": 0,
    "aggregated": {
        "targets": ["p_day", "p_month"],
        "min_areas": 20,
        "feature_columns": None,
        "cv": "loo",
        "forest": {"n_trees": 500, "min_samples_leaf": 5, "max_depth": None, "feature_subsample": None},
        "boosting": {"n_trees": 300, "max_depth": 3, "learning_rate": 0.05, "min_samples_leaf": 5},
        "gp": {"grid": None, "grid_points": 8, "standardize": True, "select": "per-fold"},
        "importance_repeats": 10,
        "importance_folds": 5,
    },
    "disaggregated": {
        "targets": ["d_day", "d_month"],
        "groups": ["c", "z", "x", "v", "czxv"],
        "models": ["gp", "rf", "gbm"],
        "k": 10,
        "stratified": True,
        "confirm": True,
        "max_victim_missing": 0.5,
        "x_columns": None,
        "forest": {"n_trees": 500, "min_samples_leaf": 5, "max_depth": None, "feature_subsample": None},
        "boosting": {"n_trees": 300, "max_depth": 3, "learning_rate": 0.05, "min_samples_leaf": 5},
        "gp": {
            "hyperparams": None,
            "max_train": 2000,
            "selection_sample": 400,
            "grid_points": 3,
            "standardize": True,
        },
        "importance_repeats": 5,
        "importance_folds": 5,
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(base, override, path=""):
    for k, v in (override or {}).items():
        if k not in base:
            raise ValueError(f"unknown config key {path}{k}")
        if isinstance(v, dict) and isinstance(base[k], dict) and k not in ("grid", "hyperparams"):
            _check_keys(base[k], v, f"{path}{k}.")


def make_config(overrides=None) -> dict:
    _check_keys(DEFAULTS, overrides)
    return _merge(DEFAULTS, overrides)


def load_config(path=None) -> dict:
    if path is None:
        return make_config()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config must be a key: value mapping")
    return make_config(data)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
