import math

import numpy as np
import pytest

from chanex import channel as ch
from chanex.errors import ConfigurationError, DomainError
from chanex.nn.losses import nmse
from chanex.scene import Band, Box, Path, PathSet, SceneParams, generate_scene, trace_paths

GEOM = ch.ArrayGeometry(rows=4, cols=4, element_spacing=0.0625)
OFDM = ch.OfdmConfig(carrier_freq=2.4e9, subcarrier_spacing=312500.0,
                     num_subcarriers=64, cp_length=16)


def _single_path(gain=1.0 + 0j, delay=0.0, az=0.0, el=0.0):
    return PathSet(paths=(Path(complex_gain=gain, delay=delay, aod_az=az, aod_el=el,
                               aoa_az=az, aoa_el=el),))


def _random_pathset(rng, ofdm, n_paths=5, quantized=True):
    paths = []
    for _ in range(n_paths):
        delay = rng.integers(0, 12) / ofdm.bandwidth if quantized else rng.uniform(0, 12 / ofdm.bandwidth)
        paths.append(Path(
            complex_gain=complex(rng.normal(), rng.normal()),
            delay=float(delay),
            aod_az=rng.uniform(-np.pi, np.pi), aod_el=rng.uniform(-np.pi / 2, np.pi / 2),
            aoa_az=rng.uniform(-np.pi, np.pi), aoa_el=rng.uniform(-np.pi / 2, np.pi / 2)))
    paths.sort(key=lambda p: p.delay)
    return PathSet(paths=tuple(paths))


class TestSteeringVector:
    def test_broadside_all_ones(self):
        v = ch.steering_vector(GEOM, 0.0, 0.0, 0.125)
        assert np.allclose(v, np.ones(16))

    def test_endfire_two_element_alternates(self):
        geom = ch.ArrayGeometry(rows=1, cols=2, element_spacing=0.0625)
        v = ch.steering_vector(geom, math.pi / 2, 0.0, 0.125)
        assert np.allclose(v, [1.0, -1.0])

    def test_unit_modulus(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = ch.steering_vector(GEOM, rng.uniform(-np.pi, np.pi),
                                   rng.uniform(-np.pi / 2, np.pi / 2), 0.125)
            assert np.allclose(np.abs(v), 1.0)

    def test_row_major_order(self):
        geom = ch.ArrayGeometry(rows=2, cols=2, element_spacing=0.0625)
        el = math.pi / 6
        v = ch.steering_vector(geom, 0.0, el, 0.125)
        # with az=0 the phase depends on the row index only
        assert np.allclose(v[0], v[1]) and np.allclose(v[2], v[3])
        assert not np.allclose(v[0], v[2])


class TestSynthFreqResponse:
    def test_flat_for_zero_delay_broadside(self):
        grid = ch.synth_freq_response(_single_path(), GEOM, OFDM)
        assert np.allclose(grid.values, np.ones((16, 64)))

    def test_phase_ramp_for_one_tap_delay(self):
        delay = 1.0 / OFDM.bandwidth
        grid = ch.synth_freq_response(_single_path(delay=delay), GEOM, OFDM)
        ratios = grid.values[0, 1:] / grid.values[0, :-1]
        assert np.allclose(ratios, np.exp(-2j * np.pi / 64))

    def test_empty_pathset_rejected(self):
        with pytest.raises(DomainError):
            ch.synth_freq_response(PathSet(), GEOM, OFDM)

    def test_linearity_over_pathset_concatenation(self):
        rng = np.random.default_rng(4)
        a = _random_pathset(rng, OFDM, 3)
        b = _random_pathset(rng, OFDM, 4)
        both = PathSet(paths=a.paths + b.paths)
        total = ch.synth_freq_response(both, GEOM, OFDM).values
        parts = (ch.synth_freq_response(a, GEOM, OFDM).values
                 + ch.synth_freq_response(b, GEOM, OFDM).values)
        assert np.max(np.abs(total - parts)) <= 1e-12 * np.max(np.abs(total))


class TestImpulseResponse:
    def test_zero_delay_single_tap(self):
        taps = ch.impulse_response(_single_path(), GEOM, OFDM)
        assert taps.shape == (16, 1)

    def test_tap_indices(self):
        paths = PathSet(paths=(
            Path(1.0 + 0j, 0.0, 0, 0, 0, 0),
            Path(0.5 + 0j, 3.0 / OFDM.bandwidth, 0, 0, 0, 0)))
        taps = ch.impulse_response(paths, GEOM, OFDM)
        assert taps.shape[1] == 4
        nonzero = np.flatnonzero(np.abs(taps[0]) > 0)
        assert list(nonzero) == [0, 3]

    def test_oversized_delay_rejected(self):
        bad = _single_path(delay=OFDM.num_subcarriers / OFDM.bandwidth)
        with pytest.raises(DomainError):
            ch.impulse_response(bad, GEOM, OFDM)

    def test_dft_oracle_equivalence(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            paths = _random_pathset(rng, OFDM, int(rng.integers(1, 7)))
            grid = ch.synth_freq_response(paths, GEOM, OFDM)
            taps = ch.impulse_response(paths, GEOM, OFDM)
            oracle = np.fft.fftshift(np.fft.fft(taps, n=OFDM.num_subcarriers, axis=1), axes=1)
            rel = np.max(np.abs(grid.values - oracle)) / np.max(np.abs(grid.values))
            assert rel <= 1e-6


class TestQuantizeDelays:
    def test_snaps_to_tap_grid(self):
        scene = generate_scene(3, SceneParams(4, 2, Box((0, 0, 0), (40, 40, 10))))
        raw = trace_paths(scene, scene.terminals[0].position, scene.bs_position, Band.SUB6)
        q = ch.quantize_delays(raw, OFDM.bandwidth)
        ticks = np.array([p.delay for p in q.paths]) * OFDM.bandwidth
        assert np.allclose(ticks, np.round(ticks))


class TestObserveWithCp:
    def _taps(self, indices, gains):
        paths = PathSet(paths=tuple(
            Path(g, i / OFDM.bandwidth, 0, 0, 0.3, 0.1) for i, g in zip(indices, gains)))
        return ch.impulse_response(paths, GEOM, OFDM), ch.synth_freq_response(paths, GEOM, OFDM)

    def test_enough_cp_matches_truth(self):
        taps, grid = self._taps([0, 5, 16], [1.0, 0.5j, 0.25])
        observed = ch.observe_with_cp(taps, OFDM, data_seed=9)
        assert nmse(observed, grid.values) <= 1e-10

    def test_insufficient_cp_distorts(self):
        taps, grid = self._taps([0, OFDM.cp_length + 4], [1.0, 0.5])
        for seed in (0, 1, 2):
            observed = ch.observe_with_cp(taps, OFDM, data_seed=seed)
            assert nmse(observed, grid.values) > 1e-4

    def test_deterministic_in_seed(self):
        taps, _ = self._taps([0, 20], [1.0, 0.5])
        a = ch.observe_with_cp(taps, OFDM, data_seed=4)
        b = ch.observe_with_cp(taps, OFDM, data_seed=4)
        assert np.array_equal(a, b)


class TestAddNoise:
    def _grid(self):
        rng = np.random.default_rng(2)
        values = rng.normal(size=(16, 64)) + 1j * rng.normal(size=(16, 64))
        return ch.ChannelGrid(values=values, geometry=GEOM, ofdm=OFDM)

    def test_infinite_snr_is_identity(self):
        grid = self._grid()
        assert np.array_equal(ch.add_noise(grid, math.inf, 1).values, grid.values)

    def test_zero_db_noise_power(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(64, 256)) + 1j * rng.normal(size=(64, 256))
        grid = ch.ChannelGrid(values=values, geometry=ch.ArrayGeometry(8, 8, 0.0625),
                              ofdm=ch.OfdmConfig(2.4e9, 312500.0, 256, 16))
        noisy = ch.add_noise(grid, 0.0, 7)
        ratio = np.mean(np.abs(noisy.values - values) ** 2) / np.mean(np.abs(values) ** 2)
        assert 0.9 <= ratio <= 1.1

    def test_reproducible(self):
        grid = self._grid()
        assert np.array_equal(ch.add_noise(grid, 10.0, 5).values,
                              ch.add_noise(grid, 10.0, 5).values)


class TestGridFiles:
    def test_roundtrip_and_header(self, tmp_path):
        rng = np.random.default_rng(5)
        values = rng.normal(size=(8, 32)).astype(np.float32).astype(np.float64) \
            + 1j * rng.normal(size=(8, 32)).astype(np.float32).astype(np.float64)
        path = tmp_path / "g.chgr"
        ch.write_grid(path, values)
        blob = path.read_bytes()
        assert blob[:4] == b"CHGR"
        assert np.array_equal(ch.read_grid(path), values)

    def test_write_is_deterministic(self, tmp_path):
        values = np.arange(12, dtype=np.float64).reshape(3, 4) * (1 + 2j)
        assert ch.grid_to_bytes(values) == ch.grid_to_bytes(values.copy())

    def test_bad_magic_rejected(self):
        with pytest.raises(ConfigurationError):
            ch.grid_from_bytes(b"NOPE" + b"\x00" * 16)


def test_ofdm_validation():
    with pytest.raises(ConfigurationError):
        ch.OfdmConfig(carrier_freq=2.4e9, subcarrier_spacing=312500.0,
                      num_subcarriers=64, cp_length=64)
    with pytest.raises(ConfigurationError):
        ch.OfdmConfig(carrier_freq=-1.0, subcarrier_spacing=312500.0,
                      num_subcarriers=64, cp_length=8)
