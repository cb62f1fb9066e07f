"""Antenna extrapolation: masked uplink observations to full downlink grids.

The array is the reflecting surface; each terminal's uplink and downlink
grids share the scene geometry and differ only through the carrier offset.
Observations keep r active antenna rows; for network input the missing rows
are filled from the nearest active element on the planar grid, which keeps
the convolutional receptive field informative at every row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import channel as ch
from ..errors import ConfigurationError
from ..nn import (AdamState, Conv2d, NetworkSpec, OdeBlock, Relu, adam_step,
                  backward_input, forward, init_params, network, nmse_loss)
from ..rng import derive_seed, stream
from ..scene import Band, Box, Scene, SceneParams, generate_scene, trace_paths
from ..selection import (MaskAxis, SelectionLogits, SelectionPattern, apply_mask,
                         geometric_temperature, harden, pattern_from_indices,
                         random_pattern, soft_sample, soft_sample_vjp,
                         uniform_pattern)
from .common import (complex_to_channels, fit_regression, history_rows,
                     rms_scale, split_ids)

DATASET_SCHEMA = "chanex.dataset/v1"


def scene_params_from_config(cfg: dict) -> SceneParams:
    sc = cfg["scene"]
    clusters = sc.get("terminal_clusters")
    return SceneParams(
        num_scatterers=sc["num_scatterers"],
        num_terminals=sc["num_terminals"],
        bounds=Box((0.0, 0.0, 0.0), tuple(float(v) for v in sc["bounds"])),
        mmwave_block_prob=sc["mmwave_block_prob"],
        blockage_radius=sc["blockage_radius"],
        mmwave_gain_range=tuple(sc["mmwave_gain_range"]),
        terminal_clusters=tuple(tuple(c) for c in clusters) if clusters else None,
        cluster_spread=sc["cluster_spread"],
    )


def _uplink_downlink(cfg: dict) -> tuple[ch.OfdmConfig, ch.OfdmConfig]:
    o = cfg["ofdm"]
    up = ch.OfdmConfig(o["carrier_freq"], o["subcarrier_spacing"],
                       o["num_subcarriers"], o["cp_length"])
    offset = cfg["options"].get("carrier_offset_hz", 0.0)
    down = ch.OfdmConfig(o["carrier_freq"] + offset, o["subcarrier_spacing"],
                         o["num_subcarriers"], o["cp_length"])
    return up, down


def build_dataset(cfg: dict, dest: Path) -> dict:
    """Write per-terminal uplink/downlink grids plus the manifest into dest."""
    scene = generate_scene(cfg["seeds"]["scene"], scene_params_from_config(cfg))
    geom = ch.half_wavelength_array(cfg["array"]["rows"], cfg["array"]["cols"],
                                    cfg["ofdm"]["carrier_freq"])
    up_ofdm, down_ofdm = _uplink_downlink(cfg)
    grids_dir = dest / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)

    files = {}
    for t in scene.terminals:
        paths = trace_paths(scene, t.position, scene.ris_position, Band.SUB6)
        paths = ch.quantize_delays(paths, up_ofdm.bandwidth)
        up = ch.synth_freq_response(paths, geom, up_ofdm).values
        down = ch.synth_freq_response(paths, geom, down_ofdm).values
        up_name = f"grids/t{t.id}_up.chgr"
        down_name = f"grids/t{t.id}_down.chgr"
        ch.write_grid(dest / up_name, up)
        ch.write_grid(dest / down_name, down)
        files[str(t.id)] = {"uplink": up_name, "downlink": down_name}

    ids = [t.id for t in scene.terminals]
    train_ids, test_ids = split_ids(ids)
    scale = rms_scale([ch.read_grid(dest / files[str(i)]["downlink"]) for i in train_ids])
    return {
        "schema": DATASET_SCHEMA,
        "task": cfg["task"],
        "terminal_ids": ids,
        "train_ids": train_ids,
        "test_ids": test_ids,
        "files": files,
        "norm_scale": scale,
    }


@dataclass
class AntennaData:
    manifest: dict
    uplink: dict[int, np.ndarray]
    downlink: dict[int, np.ndarray]
    scene: Scene
    geom: ch.ArrayGeometry

    @property
    def train_ids(self):
        return self.manifest["train_ids"]

    @property
    def test_ids(self):
        return self.manifest["test_ids"]

    @property
    def scale(self):
        return self.manifest["norm_scale"]


def load_dataset(cfg: dict, root: Path) -> AntennaData:
    manifest = json.loads((root / "manifest.json").read_text())
    uplink = {}
    downlink = {}
    for tid, entry in manifest["files"].items():
        uplink[int(tid)] = ch.read_grid(root / entry["uplink"])
        downlink[int(tid)] = ch.read_grid(root / entry["downlink"])
    scene = generate_scene(cfg["seeds"]["scene"], scene_params_from_config(cfg))
    geom = ch.half_wavelength_array(cfg["array"]["rows"], cfg["array"]["cols"],
                                    cfg["ofdm"]["carrier_freq"])
    return AntennaData(manifest=manifest, uplink=uplink, downlink=downlink,
                       scene=scene, geom=geom)


def nearest_fill_map(pattern: SelectionPattern, geom: ch.ArrayGeometry) -> np.ndarray:
    """For each array element, the selected element closest on the grid."""
    rows = np.arange(geom.num_elements) // geom.cols
    cols = np.arange(geom.num_elements) % geom.cols
    sel = pattern.indices
    d2 = (rows[:, None] - rows[sel][None, :]) ** 2 + (cols[:, None] - cols[sel][None, :]) ** 2
    return sel[np.argmin(d2, axis=1)]  # argmin ties -> lowest selected index


def resolve_pattern(cfg: dict, num_elements: int) -> SelectionPattern:
    pat = cfg["pattern"]
    if pat["r"] > num_elements:
        raise ConfigurationError(f"pattern budget r={pat['r']} exceeds {num_elements} antennas",
                                 fields=["pattern.r"])
    if pat["source"] == "uniform":
        return uniform_pattern(num_elements, pat["r"])
    if pat["source"] == "random":
        return random_pattern(num_elements, pat["r"], pat["seed"])
    raise ConfigurationError("learned patterns are trained, not resolved directly",
                             fields=["pattern.source"])


def observation_tensor(data: AntennaData, ids, pattern: SelectionPattern,
                       snr_db, noise_seed: int) -> np.ndarray:
    """(n, A, K, 2) network input: masked, noised, nearest-filled uplink grids."""
    fill = nearest_fill_map(pattern, data.geom)
    rank = {int(e): i for i, e in enumerate(pattern.indices)}
    fill_ranks = np.array([rank[int(e)] for e in fill])
    out = np.empty((len(ids), data.geom.num_elements,
                    data.uplink[ids[0]].shape[1], 2))
    for n, tid in enumerate(ids):
        reduced = apply_mask(data.uplink[tid], pattern, MaskAxis.ANTENNA)
        noised = ch.awgn(reduced, snr_db, derive_seed(noise_seed, "obs", tid))
        out[n] = complex_to_channels(noised[fill_ranks]) / data.scale
    return out


def target_tensor(data: AntennaData, ids) -> np.ndarray:
    out = np.empty((len(ids), data.geom.num_elements, data.downlink[ids[0]].shape[1], 2))
    for n, tid in enumerate(ids):
        out[n] = complex_to_channels(data.downlink[tid]) / data.scale
    return out


def model_spec(variant: str, channels: int) -> NetworkSpec:
    if variant == "cnn":
        return network(Conv2d(2, channels, 3, 1), Relu(),
                       Conv2d(channels, channels, 3, 1), Relu(),
                       Conv2d(channels, 2, 3, 1))
    if variant == "ode_cnn":
        inner = network(Conv2d(channels, channels, 3, 1), Relu())
        return network(Conv2d(2, channels, 3, 1), Relu(),
                       OdeBlock(inner, steps=4, step_size=0.25),
                       Conv2d(channels, 2, 3, 1))
    if variant == "linear":
        return network(Conv2d(2, 2, 1, 0))
    raise ConfigurationError(f"unknown antenna model variant {variant!r}",
                             fields=["model.variant"])


def train(cfg: dict, data: AntennaData, config_hash: str | None = None,
          pattern: SelectionPattern | None = None, ids=None):
    """Standard fixed-pattern training; returns (FitResult, pattern, rows)."""
    if pattern is None:
        pattern = resolve_pattern(cfg, data.geom.num_elements)
    train_ids, test_ids = (split_ids(ids) if ids is not None
                           else (data.train_ids, data.test_ids))
    noise_seed = cfg["seeds"]["noise"]
    x_train = observation_tensor(data, train_ids, pattern, cfg["snr_db"], noise_seed)
    y_train = target_tensor(data, train_ids)
    x_test = observation_tensor(data, test_ids, pattern, cfg["snr_db"], noise_seed)
    y_test = target_tensor(data, test_ids)
    spec = model_spec(cfg["model"]["variant"], cfg["model"]["channels"])
    result = fit_regression(spec, x_train, y_train, x_test, y_test,
                            epochs=cfg["train"]["epochs"],
                            learning_rate=cfg["train"]["learning_rate"],
                            batch_size=cfg["train"]["batch_size"],
                            init_seed=cfg["seeds"]["init"],
                            config_hash=config_hash)
    rows = history_rows(result.history, ("test_nmse", "test_nmse_db", "train_nmse"))
    return result, pattern, rows


def train_learned_pattern(cfg: dict, data: AntennaData, config_hash: str | None = None):
    """Two stages: learn selection logits jointly, then retrain on the
    hardened pattern with the same protocol as any fixed pattern."""
    r = cfg["pattern"]["r"]
    a = data.geom.num_elements
    if r > a:
        raise ConfigurationError(f"pattern budget r={r} exceeds {a} antennas",
                                 fields=["pattern.r"])
    epochs = cfg["train"]["epochs"]
    batch_size = cfg["train"]["batch_size"]
    lr = cfg["train"]["learning_rate"]
    init_seed = cfg["seeds"]["init"]

    train_ids = data.train_ids
    up = np.stack([data.uplink[t] for t in train_ids])          # (n, A, K) complex
    up_ch = np.stack([complex_to_channels(data.uplink[t]) for t in train_ids]) / data.scale
    y = target_tensor(data, train_ids)

    spec = model_spec(cfg["model"]["variant"], cfg["model"]["channels"])
    params = init_params(spec, derive_seed(init_seed, "pattern-stage"))
    state = AdamState()
    logits = np.zeros(a)
    logits_m = np.zeros(a)
    logits_v = np.zeros(a)
    order_rng = stream(init_seed, "pattern-batch-order")
    n = up.shape[0]
    total_steps = max(1, epochs * ((n + batch_size - 1) // batch_size))
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            temp = geometric_temperature(step, total_steps)
            mask = soft_sample(SelectionLogits(logits, temp), r,
                               derive_seed(init_seed, "gumbel", step))
            x = up_ch[idx] * mask[None, :, None, None]
            out, tape = forward(spec, params.tensors, x)
            _, dy = nmse_loss(out, y[idx])
            grads: dict = {}
            dx = backward_input(tape, dy, grads)
            adam_step(params, grads, state, lr=lr)
            # chain rule through the antenna-row mask multiply
            d_mask = np.sum(dx * up_ch[idx], axis=(0, 2, 3))
            d_logits = soft_sample_vjp(SelectionLogits(logits, temp), r,
                                       derive_seed(init_seed, "gumbel", step), d_mask)
            step += 1
            logits_m += (1 - 0.9) * (d_logits - logits_m)
            logits_v += (1 - 0.999) * (d_logits ** 2 - logits_v)
            m_hat = logits_m / (1 - 0.9 ** step)
            v_hat = logits_v / (1 - 0.999 ** step)
            logits -= 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)

    learned = harden(SelectionLogits(logits, geometric_temperature(total_steps, total_steps)), r)
    result, _, rows = train(cfg, data, config_hash=config_hash, pattern=learned)
    return result, learned, rows


def run(cfg: dict, data: AntennaData, config_hash: str | None = None) -> dict:
    """Full antenna pipeline for one config; returns metrics rows + summary."""
    if cfg["pattern"]["source"] == "learned":
        result, pattern, rows = train_learned_pattern(cfg, data, config_hash)
    else:
        result, pattern, rows = train(cfg, data, config_hash)
    summary = {
        "final": {"test_nmse": result.best_value,
                  "test_nmse_db": 10 * np.log10(max(result.best_value, 1e-300))},
        "best_epoch": result.best_epoch,
        "last": result.final(),
        "pattern_indices": pattern.to_index_list(),
    }
    return {"rows": rows, "summary": summary, "result": result}
