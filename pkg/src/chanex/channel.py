"""Frequency-domain channel synthesis for uniform planar arrays over OFDM.

Conventions fixed here and relied on by the dataset format:

* array elements are ordered row-major: element k sits at grid position
  (p, q) with p = k // cols, q = k % cols;
* subcarrier frequencies are centered: subcarrier k (k = 0..N-1) has
  baseband frequency (k - N//2) * subcarrier_spacing;
* the steering wavelength comes from the carrier frequency.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import stream
from .scene import SPEED_OF_LIGHT, Path, PathSet

GRID_MAGIC = b"CHGR"
GRID_VERSION = 1


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int
    cols: int
    element_spacing: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("array needs at least one element", fields=["rows", "cols"])
        if self.element_spacing <= 0:
            raise ConfigurationError("element spacing must be positive", fields=["element_spacing"])

    @property
    def num_elements(self) -> int:
        return self.rows * self.cols


def half_wavelength_array(rows: int, cols: int, carrier_freq: float) -> ArrayGeometry:
    return ArrayGeometry(rows=rows, cols=cols,
                         element_spacing=SPEED_OF_LIGHT / carrier_freq / 2.0)


@dataclass(frozen=True)
class OfdmConfig:
    carrier_freq: float
    subcarrier_spacing: float
    num_subcarriers: int
    cp_length: int

    def __post_init__(self):
        bad = [name for name, v in [("carrier_freq", self.carrier_freq),
                                    ("subcarrier_spacing", self.subcarrier_spacing),
                                    ("num_subcarriers", self.num_subcarriers)] if v <= 0]
        if self.cp_length < 0:
            bad.append("cp_length")
        if self.cp_length >= self.num_subcarriers:
            bad.append("cp_length")
        if bad:
            raise ConfigurationError("invalid OFDM configuration", fields=sorted(set(bad)))

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def subcarrier_frequencies(self) -> np.ndarray:
        n = self.num_subcarriers
        return (np.arange(n) - n // 2) * self.subcarrier_spacing


@dataclass
class ChannelGrid:
    """Complex response over (array elements x subcarriers)."""

    values: np.ndarray
    geometry: ArrayGeometry
    ofdm: OfdmConfig

    def __post_init__(self):
        expected = (self.geometry.num_elements, self.ofdm.num_subcarriers)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"grid shape {self.values.shape} does not match geometry/ofdm {expected}")
        if not np.all(np.isfinite(self.values.view(np.float64))):
            raise ConfigurationError("grid contains non-finite entries")

    def copy(self) -> "ChannelGrid":
        return ChannelGrid(values=self.values.copy(), geometry=self.geometry, ofdm=self.ofdm)


def steering_vector(geom: ArrayGeometry, az: float, el: float, wavelength: float) -> np.ndarray:
    """Unit-modulus planar array response, row-major element order."""
    if wavelength <= 0:
        raise DomainError("wavelength must be positive")
    p = np.arange(geom.rows)[:, None]
    q = np.arange(geom.cols)[None, :]
    phase = (2.0 * math.pi / wavelength) * geom.element_spacing * (
        p * math.sin(el) + q * math.cos(el) * math.sin(az))
    return np.exp(1j * phase).reshape(-1)


def _steering_matrix(paths: PathSet, geom: ArrayGeometry, wavelength: float) -> np.ndarray:
    cols = [steering_vector(geom, p.aoa_az, p.aoa_el, wavelength) for p in paths.paths]
    return np.stack(cols, axis=1)  # (elements, paths)


def synth_freq_response(paths: PathSet, geom: ArrayGeometry, ofdm: OfdmConfig) -> ChannelGrid:
    """Superpose path contributions into the (elements x subcarriers) grid."""
    if len(paths) == 0:
        raise DomainError("cannot synthesize a channel from an empty path set")
    steering = _steering_matrix(paths, geom, ofdm.wavelength)
    freqs = ofdm.subcarrier_frequencies()
    phasors = np.exp(-2j * math.pi * np.outer(paths.delays(), freqs))  # (paths, subcarriers)
    values = steering @ (paths.gains()[:, None] * phasors)
    return ChannelGrid(values=values, geometry=geom, ofdm=ofdm)


def impulse_response(paths: PathSet, geom: ArrayGeometry, ofdm: OfdmConfig) -> np.ndarray:
    """Tap-domain response (elements x taps); tap index = round(delay * bandwidth)."""
    if len(paths) == 0:
        raise DomainError("cannot synthesize a channel from an empty path set")
    bw = ofdm.bandwidth
    symbol_duration = ofdm.num_subcarriers / bw
    for i, p in enumerate(paths.paths):
        if p.delay >= symbol_duration:
            raise DomainError(f"path {i} delay {p.delay:.3e}s exceeds the symbol duration")
    indices = np.rint(paths.delays() * bw).astype(int)
    taps = np.zeros((geom.num_elements, int(indices.max()) + 1), dtype=np.complex128)
    steering = _steering_matrix(paths, geom, ofdm.wavelength)
    gains = paths.gains()
    for i, idx in enumerate(indices):
        taps[:, idx] += gains[i] * steering[:, i]
    return taps


def quantize_delays(paths: PathSet, bandwidth: float) -> PathSet:
    """Snap every delay to the tap grid (multiples of 1/bandwidth)."""
    quantized = [replace(p, delay=round(p.delay * bandwidth) / bandwidth) for p in paths.paths]
    quantized.sort(key=lambda p: (p.delay, -1 if p.scatterer is None else p.scatterer))
    return PathSet(paths=tuple(quantized))


def observe_with_cp(taps: np.ndarray, ofdm: OfdmConfig, data_seed: int) -> np.ndarray:
    """Channel estimate seen through an OFDM receiver with a finite cyclic prefix.

    Two consecutive unit-power QPSK symbols are sent through the tap-domain
    channel by linear convolution; the second one is demodulated after CP
    removal and divided by the known data.  When the taps fit inside the CP
    the estimate equals the true frequency response; otherwise the estimate
    carries deterministic inter-symbol/inter-carrier distortion.  Output uses
    the centered subcarrier convention, shape (elements x num_subcarriers).
    """
    taps = np.asarray(taps, dtype=np.complex128)
    if not np.all(np.isfinite(taps.view(np.float64))):
        raise DomainError("taps contain non-finite entries")
    n = ofdm.num_subcarriers
    cp = ofdm.cp_length
    rng = stream(data_seed, "cp-probe")
    bits = rng.integers(0, 2, size=(2, n, 2))
    symbols = ((1.0 - 2.0 * bits[..., 0]) + 1j * (1.0 - 2.0 * bits[..., 1])) / math.sqrt(2.0)
    time_symbols = np.fft.ifft(symbols, axis=1)
    tx = np.concatenate([time_symbols[0, n - cp:], time_symbols[0],
                         time_symbols[1, n - cp:], time_symbols[1]])
    received = np.stack([np.convolve(tx, taps[a]) for a in range(taps.shape[0])])
    start = (n + cp) + cp
    segment = received[:, start:start + n]
    estimate = np.fft.fft(segment, axis=1) / symbols[1][None, :]
    return np.fft.fftshift(estimate, axes=1)


def awgn(values: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Values plus circularly-symmetric Gaussian noise at the given SNR.

    The noise variance is mean(|values|^2) / 10^(snr_db/10); snr_db = inf
    (or None) means no noise.  Deterministic in the seed.
    """
    if snr_db is None or math.isinf(snr_db):
        return values.copy()
    signal_power = float(np.mean(np.abs(values) ** 2))
    sigma2 = signal_power / (10.0 ** (snr_db / 10.0))
    rng = stream(seed, "awgn")
    shape = values.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(sigma2 / 2)
    return values + noise


def add_noise(grid: ChannelGrid, snr_db: float, seed: int) -> ChannelGrid:
    """Noisy copy of a channel grid; see :func:`awgn`."""
    return ChannelGrid(values=awgn(grid.values, snr_db, seed),
                       geometry=grid.geometry, ofdm=grid.ofdm)


# -- binary grid files (dataset format v1) ----------------------------------

def grid_to_bytes(values: np.ndarray) -> bytes:
    a, n = values.shape
    header = GRID_MAGIC + struct.pack("<III", GRID_VERSION, a, n)
    interleaved = np.empty((a, n, 2), dtype="<f4")
    interleaved[..., 0] = values.real
    interleaved[..., 1] = values.imag
    return header + interleaved.tobytes()


def grid_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != GRID_MAGIC:
        raise ConfigurationError("not a channel grid file (bad magic)")
    version, a, n = struct.unpack("<III", blob[4:16])
    if version != GRID_VERSION:
        raise ConfigurationError(f"unsupported grid file version {version}")
    flat = np.frombuffer(blob[16:], dtype="<f4", count=a * n * 2).reshape(a, n, 2)
    return (flat[..., 0].astype(np.float64) + 1j * flat[..., 1].astype(np.float64))


def write_grid(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(values))


def read_grid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())
