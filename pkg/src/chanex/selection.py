"""Subspace selection patterns over antennas or pilot subcarriers.

Fixed patterns (uniform spread, seeded random) plus a differentiable
relaxation: the training-time mask is a sum of r Gumbel-perturbed softmax
draws clamped to [0, 1], which concentrates on the top-r logits as the
temperature anneals toward zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UsageError
from .rng import stream


class MaskAxis(Enum):
    ANTENNA = "antenna"
    SUBCARRIER = "subcarrier"


@dataclass(frozen=True)
class SelectionPattern:
    mask: np.ndarray  # binary uint8 vector of length N
    budget: int

    def __post_init__(self):
        count = int(np.sum(self.mask))
        if count != self.budget or not 1 <= self.budget <= self.mask.shape[0]:
            raise UsageError(f"pattern has {count} ones, budget is {self.budget}")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def to_index_list(self) -> list[int]:
        return [int(i) for i in self.indices]


def pattern_from_indices(indices, n: int) -> SelectionPattern:
    mask = np.zeros(n, dtype=np.uint8)
    mask[list(indices)] = 1
    return SelectionPattern(mask=mask, budget=len(set(int(i) for i in indices)))


@dataclass(frozen=True)
class SelectionLogits:
    logits: np.ndarray
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise UsageError("temperature must be positive")
        if not np.all(np.isfinite(self.logits)):
            raise UsageError("logits must be finite")


def _check_budget(n: int, r: int) -> None:
    if not 1 <= r <= n:
        raise UsageError(f"budget r={r} outside [1, {n}]")


def uniform_pattern(n: int, r: int) -> SelectionPattern:
    """Maximally spread pattern: ones at floor(k*N/r)."""
    _check_budget(n, r)
    mask = np.zeros(n, dtype=np.uint8)
    mask[[(k * n) // r for k in range(r)]] = 1
    return SelectionPattern(mask=mask, budget=r)


def random_pattern(n: int, r: int, seed: int) -> SelectionPattern:
    _check_budget(n, r)
    chosen = stream(seed, "pattern").choice(n, size=r, replace=False)
    mask = np.zeros(n, dtype=np.uint8)
    mask[chosen] = 1
    return SelectionPattern(mask=mask, budget=r)


_DRAW_CLIP = 1.0 - 1e-12


def _gumbels(sl: SelectionLogits, r: int, seed: int) -> np.ndarray:
    u = stream(seed, "gumbel").random((r, sl.logits.shape[0]))
    return -np.log(-np.log(np.clip(u, 1e-12, _DRAW_CLIP)))


def _relaxed_draws(sl: SelectionLogits, r: int, seed: int) -> np.ndarray:
    """(r, N) relaxed one-hot draws, each suppressing the mass already taken.

    Draw i is softmax(alpha_i / T + gumbel_i) with
    alpha_{i+1} = alpha_i + log(1 - draw_i), so successive draws spread over
    distinct entries and the summed mask approaches the top-r indicator as
    the temperature anneals to zero.
    """
    gumbels = _gumbels(sl, r, seed)
    alpha = sl.logits.astype(np.float64).copy()
    draws = np.empty_like(gumbels)
    for i in range(r):
        z = alpha / sl.temperature + gumbels[i]
        z -= z.max()
        e = np.exp(z)
        draws[i] = e / e.sum()
        alpha = alpha + np.log1p(-np.minimum(draws[i], _DRAW_CLIP))
    return draws


def soft_sample(sl: SelectionLogits, r: int, seed: int) -> np.ndarray:
    """Relaxed mask in [0,1]^N; deterministic in (logits, temperature, seed)."""
    _check_budget(sl.logits.shape[0], r)
    total = _relaxed_draws(sl, r, seed).sum(axis=0)
    return np.minimum(total, 1.0)


def soft_sample_vjp(sl: SelectionLogits, r: int, seed: int, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of cotangent . soft_sample(...) with respect to the logits."""
    _check_budget(sl.logits.shape[0], r)
    draws = _relaxed_draws(sl, r, seed)
    total = draws.sum(axis=0)
    d_sum = np.asarray(cotangent) * (total < 1.0)  # clamp kills gradient past 1
    d_alpha = np.zeros_like(sl.logits)
    for i in range(r - 1, -1, -1):
        p = draws[i]
        dp = d_sum - d_alpha / (1.0 - np.minimum(p, _DRAW_CLIP))
        dz = p * (dp - float(p @ dp))  # softmax vector-Jacobian product
        d_alpha = d_alpha + dz / sl.temperature
    return d_alpha


def harden(sl: SelectionLogits, r: int) -> SelectionPattern:
    """Indicator of the r largest logits; ties broken by lowest index."""
    _check_budget(sl.logits.shape[0], r)
    order = np.argsort(-sl.logits, kind="stable")
    mask = np.zeros(sl.logits.shape[0], dtype=np.uint8)
    mask[order[:r]] = 1
    return SelectionPattern(mask=mask, budget=r)


def geometric_temperature(step: int, total_steps: int,
                          start: float = 1.0, end: float = 0.05) -> float:
    """Annealing schedule: geometric decay from start to end over the run."""
    if total_steps <= 1:
        return end
    frac = step / (total_steps - 1)
    return start * math.exp(frac * math.log(end / start))


def apply_mask(values: np.ndarray, pattern: SelectionPattern, axis: MaskAxis) -> np.ndarray:
    """Keep the rows (antenna) or columns (subcarrier) the pattern marks."""
    dim = 0 if axis is MaskAxis.ANTENNA else 1
    if pattern.mask.shape[0] != values.shape[dim]:
        raise UsageError(
            f"pattern length {pattern.mask.shape[0]} does not match axis size {values.shape[dim]}")
    return np.take(values, pattern.indices, axis=dim)
