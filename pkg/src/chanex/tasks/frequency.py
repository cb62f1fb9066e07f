"""In-band frequency extrapolation: pilot subcarriers to the full band.

Targets are the receiver-side channel estimates, so the enough-CP variant
reproduces the true response while the insufficient-CP variant carries
deterministic inter-symbol distortion.  The CP length is derived from the
realized tap spread: "encp" covers the longest path in the dataset, "incp"
cuts at least cp_margin taps off every sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import channel as ch
from ..errors import ConfigurationError, UsageError
from ..nn import Conv2d, NetworkSpec, Relu, network, nmse
from ..rng import derive_seed
from ..scene import Band, generate_scene, trace_paths
from ..selection import MaskAxis, SelectionPattern, apply_mask, uniform_pattern
from .antenna import DATASET_SCHEMA, scene_params_from_config
from .common import complex_to_channels, fit_regression, history_rows, split_ids


def _base_ofdm(cfg: dict, cp_length: int) -> ch.OfdmConfig:
    o = cfg["ofdm"]
    return ch.OfdmConfig(o["carrier_freq"], o["subcarrier_spacing"],
                         o["num_subcarriers"], cp_length)


def build_dataset(cfg: dict, dest: Path) -> dict:
    """Write per-terminal full-band observed grids plus the manifest."""
    scene = generate_scene(cfg["seeds"]["scene"], scene_params_from_config(cfg))
    geom = ch.half_wavelength_array(cfg["array"]["rows"], cfg["array"]["cols"],
                                    cfg["ofdm"]["carrier_freq"])
    probe_ofdm = _base_ofdm(cfg, cp_length=0)
    bandwidth = probe_ofdm.bandwidth

    taps_by_terminal = {}
    for t in scene.terminals:
        paths = trace_paths(scene, t.position, scene.bs_position, Band.SUB6)
        paths = ch.quantize_delays(paths, bandwidth)
        taps_by_terminal[t.id] = ch.impulse_response(paths, geom, probe_ofdm)

    spreads = {tid: taps.shape[1] - 1 for tid, taps in taps_by_terminal.items()}
    max_spread = max(spreads.values())
    min_spread = min(spreads.values())
    mode = cfg["options"]["cp_mode"]
    margin = cfg["options"]["cp_margin"]
    if mode == "encp":
        cp_length = max_spread
    else:
        cp_length = min_spread - margin
        if cp_length < 0:
            raise ConfigurationError(
                f"scene delay spreads (min {min_spread} taps) are too short to cut "
                f"{margin} taps; enlarge the scene bounds", fields=["options.cp_margin"])
    if cp_length >= probe_ofdm.num_subcarriers:
        raise ConfigurationError("delay spread exceeds the OFDM symbol",
                                 fields=["ofdm.num_subcarriers"])
    ofdm = _base_ofdm(cfg, cp_length)

    grids_dir = dest / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for tid, taps in taps_by_terminal.items():
        observed = ch.observe_with_cp(taps, ofdm, data_seed=cfg["seeds"]["data"])
        name = f"grids/t{tid}_target.chgr"
        ch.write_grid(dest / name, observed)
        files[str(tid)] = {"target": name}

    ids = sorted(taps_by_terminal)
    train_ids, test_ids = split_ids(ids)
    return {
        "schema": DATASET_SCHEMA,
        "task": "frequency",
        "terminal_ids": ids,
        "train_ids": train_ids,
        "test_ids": test_ids,
        "files": files,
        "cp_length_used": int(cp_length),
        "max_tap_index": int(max_spread),
        "min_tap_index": int(min_spread),
    }


@dataclass
class FrequencyData:
    manifest: dict
    targets: dict[int, np.ndarray]

    @property
    def train_ids(self):
        return self.manifest["train_ids"]

    @property
    def test_ids(self):
        return self.manifest["test_ids"]


def load_dataset(cfg: dict, root: Path) -> FrequencyData:
    manifest = json.loads((root / "manifest.json").read_text())
    targets = {int(tid): ch.read_grid(root / entry["target"])
               for tid, entry in manifest["files"].items()}
    return FrequencyData(manifest=manifest, targets=targets)


def pilot_pattern(cfg: dict) -> SelectionPattern:
    n = cfg["ofdm"]["num_subcarriers"]
    budget = int(round(n * cfg["options"]["sample_rate"]))
    if budget > n:
        raise ConfigurationError(f"pilot budget {budget} exceeds {n} subcarriers",
                                 fields=["options.sample_rate"])
    if budget < 2:
        raise ConfigurationError("need at least two pilot subcarriers",
                                 fields=["options.sample_rate"])
    return uniform_pattern(n, budget)


def interpolate_baseline(observation: np.ndarray, pattern: SelectionPattern) -> np.ndarray:
    """Per-antenna piecewise-linear interpolation of real and imaginary parts.

    Edges extend the nearest pilot value.  ``observation`` holds the pilot
    columns only, in pattern order.
    """
    pilots = pattern.indices
    if pilots.shape[0] < 2:
        raise UsageError("interpolation needs at least two pilots")
    if observation.shape[1] != pilots.shape[0]:
        raise UsageError(f"observation has {observation.shape[1]} columns, "
                         f"pattern marks {pilots.shape[0]}")
    n = pattern.mask.shape[0]
    grid = np.arange(n)
    out = np.empty((observation.shape[0], n), dtype=np.complex128)
    for a in range(observation.shape[0]):
        out[a] = (np.interp(grid, pilots, observation[a].real)
                  + 1j * np.interp(grid, pilots, observation[a].imag))
    return out


def model_spec(channels: int) -> NetworkSpec:
    """Three 1-D conv stacks along the subcarrier axis."""
    k, p = (1, 5), (0, 2)
    return network(Conv2d(3, channels, k, p), Relu(),
                   Conv2d(channels, channels, k, p), Relu(),
                   Conv2d(channels, 2, k, p))


def _tensors(data: FrequencyData, ids, pattern: SelectionPattern, snr_db, noise_seed):
    """Input: interpolation-filled pilot observation (+ pilot indicator channel)."""
    n_sc = pattern.mask.shape[0]
    pilot_channel = np.tile(pattern.mask.astype(np.float64)[None, :, None],
                            (data.targets[ids[0]].shape[0], 1, 1))
    xs, ys = [], []
    for tid in ids:
        target = data.targets[tid]
        obs = apply_mask(target, pattern, MaskAxis.SUBCARRIER)
        obs = ch.awgn(obs, snr_db, derive_seed(noise_seed, "obs", tid))
        filled = interpolate_baseline(obs, pattern)
        scale = np.sqrt(np.mean(np.abs(filled) ** 2)) + 1e-12
        xs.append(np.concatenate([complex_to_channels(filled / scale), pilot_channel], axis=-1))
        ys.append(complex_to_channels(target / scale))
    return np.stack(xs), np.stack(ys)


def baseline_nmse(data: FrequencyData, ids, pattern: SelectionPattern,
                  snr_db, noise_seed) -> float:
    estimates, truths = [], []
    for tid in ids:
        target = data.targets[tid]
        obs = apply_mask(target, pattern, MaskAxis.SUBCARRIER)
        obs = ch.awgn(obs, snr_db, derive_seed(noise_seed, "obs", tid))
        estimates.append(interpolate_baseline(obs, pattern) / 1.0)
        truths.append(target)
    return nmse(np.stack(estimates), np.stack(truths))


def run(cfg: dict, data: FrequencyData, config_hash: str | None = None) -> dict:
    pattern = pilot_pattern(cfg)
    noise_seed = cfg["seeds"]["noise"]
    x_train, y_train = _tensors(data, data.train_ids, pattern, cfg["snr_db"], noise_seed)
    x_test, y_test = _tensors(data, data.test_ids, pattern, cfg["snr_db"], noise_seed)
    result = fit_regression(model_spec(cfg["model"]["channels"]),
                            x_train, y_train, x_test, y_test,
                            epochs=cfg["train"]["epochs"],
                            learning_rate=cfg["train"]["learning_rate"],
                            batch_size=cfg["train"]["batch_size"],
                            init_seed=cfg["seeds"]["init"],
                            config_hash=config_hash)
    base = baseline_nmse(data, data.test_ids, pattern, cfg["snr_db"], noise_seed)
    rows = history_rows(result.history, ("test_nmse", "test_nmse_db", "train_nmse"))
    rows.append((0, "baseline_test_nmse", base))
    summary = {
        "final": {"test_nmse": result.best_value,
                  "test_nmse_db": 10 * np.log10(max(result.best_value, 1e-300)),
                  "baseline_test_nmse": base},
        "best_epoch": result.best_epoch,
        "last": result.final(),
        "pattern_indices": pattern.to_index_list(),
        "cp_length_used": data.manifest["cp_length_used"],
    }
    return {"rows": rows, "summary": summary, "result": result}
