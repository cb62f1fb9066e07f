"""Experiment configuration: defaults, schema validation, canonical hashing.

Configs are nested key-value documents (YAML or JSON).  ``resolve_config``
merges user values over per-task defaults and validates the result,
reporting every invalid field at once.  Hashes are content-addressed over a
canonical JSON rendering, so field order never matters.  ``data_config``
extracts the subset that determines the dataset, letting sweeps over model
variants, budgets or training seeds share one cached dataset.
"""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

from .errors import ConfigurationError

TASKS = ("antenna", "frequency", "crossband", "terminal")
VARIANTS = {
    "antenna": ("cnn", "ode_cnn", "linear"),
    "frequency": ("cnn",),
    "crossband": ("baseline", "fusion"),
    "terminal": ("cnn", "ode_cnn"),
}

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {name: {"type": "integer", "minimum": 0}
                           for name in ("scene", "data", "noise", "init")},
        },
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_scatterers": {"type": "integer", "minimum": 1},
                "num_terminals": {"type": "integer", "minimum": 1},
                "bounds": _POINT,
                "mmwave_block_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "blockage_radius": {"type": "number", "exclusiveMinimum": 0},
                "mmwave_gain_range": {"type": "array", "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2},
                "terminal_clusters": {"type": ["array", "null"], "items": _POINT},
                "cluster_spread": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "array": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rows": {"type": "integer", "minimum": 1},
                           "cols": {"type": "integer", "minimum": 1}},
        },
        "ofdm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "carrier_freq": {"type": "number", "exclusiveMinimum": 0},
                "subcarrier_spacing": {"type": "number", "exclusiveMinimum": 0},
                "num_subcarriers": {"type": "integer", "minimum": 2},
                "cp_length": {"type": "integer", "minimum": 0},
            },
        },
        "pattern": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "source": {"enum": ["uniform", "random", "learned"]},
                "r": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "snr_db": {"type": ["number", "null"]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"type": "string"},
                "channels": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "options": {"type": "object"},
    },
}

_OPTION_SCHEMAS = {
    "antenna": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"carrier_offset_hz": {"type": "number", "minimum": 0}},
    },
    "frequency": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "cp_mode": {"enum": ["encp", "incp"]},
            "sample_rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "cp_margin": {"type": "integer", "minimum": 1},
        },
    },
    "crossband": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "mm_rows": {"type": "integer", "minimum": 1},
            "mm_cols": {"type": "integer", "minimum": 1},
            "mm_carrier_freq": {"type": "number", "exclusiveMinimum": 0},
            "mm_subcarrier_spacing": {"type": "number", "exclusiveMinimum": 0},
            "mm_num_subcarriers": {"type": "integer", "minimum": 2},
            "sub6_snr_db": {"type": ["number", "null"]},
            "hidden_pilot": {"type": "integer", "minimum": 1},
        },
    },
    "terminal": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "group_radius": {"type": "number", "exclusiveMinimum": 0},
            "source_center": _POINT,
            "target_center": _POINT,
            "finetune_epochs": {"type": "integer", "minimum": 1},
        },
    },
}

_BASE_DEFAULTS = {
    "seeds": {"scene": 1, "data": 2, "noise": 3, "init": 4},
    "scene": {
        "num_scatterers": 10,
        "num_terminals": 250,
        "bounds": [40.0, 40.0, 12.0],
        "mmwave_block_prob": 0.3,
        "blockage_radius": 0.5,
        "mmwave_gain_range": [0.1, 0.5],
        "terminal_clusters": None,
        "cluster_spread": 0.5,
    },
    "array": {"rows": 8, "cols": 8},
    "ofdm": {"carrier_freq": 2.4e9, "subcarrier_spacing": 312500.0,
             "num_subcarriers": 64, "cp_length": 16},
    "pattern": {"source": "uniform", "r": 8, "seed": 0},
    "snr_db": 20.0,
    "model": {"variant": "cnn", "channels": 12, "hidden": 256},
    "train": {"epochs": 40, "learning_rate": 1e-3, "batch_size": 16},
}

_TASK_DEFAULTS = {
    "antenna": {
        "options": {"carrier_offset_hz": 1.2e8},
    },
    "frequency": {
        "array": {"rows": 2, "cols": 2},
        "ofdm": {"carrier_freq": 60e9, "subcarrier_spacing": 60e3,
                 "num_subcarriers": 256, "cp_length": 16},
        "scene": {"bounds": [220.0, 220.0, 40.0], "num_scatterers": 8,
                  "num_terminals": 200},
        "snr_db": None,
        "options": {"cp_mode": "encp", "sample_rate": 0.25, "cp_margin": 4},
    },
    "crossband": {
        "array": {"rows": 4, "cols": 4},
        "ofdm": {"carrier_freq": 3.5e9, "subcarrier_spacing": 312500.0,
                 "num_subcarriers": 32, "cp_length": 8},
        "scene": {"num_scatterers": 12, "num_terminals": 500},
        "pattern": {"source": "uniform", "r": 8, "seed": 0},
        "model": {"variant": "fusion", "channels": 12, "hidden": 256},
        "options": {"mm_rows": 8, "mm_cols": 8, "mm_carrier_freq": 60e9,
                    "mm_subcarrier_spacing": 60e3, "mm_num_subcarriers": 16,
                    "sub6_snr_db": 10.0, "hidden_pilot": 64},
    },
    "terminal": {
        "scene": {"num_terminals": 100, "num_scatterers": 10},
        "ofdm": {"carrier_freq": 2.4e9, "subcarrier_spacing": 312500.0,
                 "num_subcarriers": 16, "cp_length": 4},
        "snr_db": None,
        "model": {"variant": "cnn", "channels": 8, "hidden": 256},
        "options": {"group_radius": 1.0, "source_center": [10.0, 10.0, 1.5],
                    "target_center": [12.0, 10.0, 1.5], "finetune_epochs": 15},
    },
}

_DATA_FIELDS = ("task", "scene", "array", "ofdm")
_DATA_SEEDS = ("scene", "data")
_DATA_OPTIONS = {
    "antenna": ("carrier_offset_hz",),
    "frequency": ("cp_mode", "cp_margin"),
    "crossband": ("mm_rows", "mm_cols", "mm_carrier_freq", "mm_subcarrier_spacing",
                  "mm_num_subcarriers"),
    "terminal": (),
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def defaults_for(task: str) -> dict:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}", fields=["task"])
    merged = _deep_merge(_BASE_DEFAULTS, _TASK_DEFAULTS[task])
    merged["task"] = task
    merged.setdefault("options", {})
    return merged


def resolve_config(document: dict) -> dict:
    """Merge a user document over task defaults, then validate it fully."""
    if not isinstance(document, dict):
        raise ConfigurationError("config document must be a mapping", fields=["<root>"])
    task = document.get("task")
    if task not in TASKS:
        raise ConfigurationError(
            f"task must be one of {list(TASKS)}, got {task!r}", fields=["task"])
    config = _deep_merge(defaults_for(task), document)
    if task == "terminal":
        # terminals live in two clusters around the source/target centers
        opts = config["options"]
        config["scene"]["terminal_clusters"] = [list(opts["source_center"]),
                                                list(opts["target_center"])]
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    """Raise ConfigurationError listing every invalid field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    problems = [(".".join(str(p) for p in err.absolute_path) or "<root>", err.message)
                for err in validator.iter_errors(config)]
    task = config.get("task")
    if task in TASKS:
        opt_validator = jsonschema.Draft202012Validator(_OPTION_SCHEMAS[task])
        problems += [("options." + ".".join(str(p) for p in err.absolute_path)
                      if err.absolute_path else "options", err.message)
                     for err in opt_validator.iter_errors(config.get("options", {}))]
        variant = config.get("model", {}).get("variant")
        if variant is not None and variant not in VARIANTS[task]:
            problems.append(("model.variant",
                             f"{variant!r} is not one of {list(VARIANTS[task])}"))
    ofdm = config.get("ofdm", {})
    if isinstance(ofdm, dict) and isinstance(ofdm.get("cp_length"), int) \
            and isinstance(ofdm.get("num_subcarriers"), int) \
            and ofdm["cp_length"] >= ofdm["num_subcarriers"]:
        problems.append(("ofdm.cp_length", "must be smaller than num_subcarriers"))
    if problems:
        fields = sorted({field for field, _ in problems})
        details = "; ".join(f"{field}: {msg}" for field, msg in sorted(problems))
        raise ConfigurationError(f"invalid config ({details})", fields=fields)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def data_config(config: dict) -> dict:
    """The subset of a resolved config that determines the dataset content."""
    subset = {key: copy.deepcopy(config[key]) for key in _DATA_FIELDS}
    subset["seeds"] = {name: config["seeds"][name] for name in _DATA_SEEDS}
    opts = config.get("options", {})
    subset["options"] = {key: copy.deepcopy(opts[key])
                         for key in _DATA_OPTIONS[config["task"]] if key in opts}
    return subset


def data_hash(config: dict) -> str:
    return config_hash(data_config(config))


def apply_overrides(document: dict, overrides: dict) -> dict:
    """Set dotted-path overrides (CLI flags win over file values)."""
    updated = copy.deepcopy(document)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = updated
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return updated
