"""Losses with analytic gradients with respect to the estimate/logits."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, UsageError


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """||estimate - truth||^2 / ||truth||^2 over all entries."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise UsageError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = float(np.sum(np.abs(truth) ** 2))
    if denom == 0.0:
        raise DomainError("truth has zero norm")
    return float(np.sum(np.abs(estimate - truth) ** 2)) / denom


def nmse_db(value: float) -> float:
    return 10.0 * np.log10(max(value, 1e-300))


def nmse_loss(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """NMSE and its gradient with respect to the (real) estimate array.

    Complex data enters as paired real channels; since |a+ib|^2 = a^2 + b^2
    the real-pair norm matches the complex Frobenius norm exactly.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise UsageError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = float(np.sum(truth ** 2))
    if denom == 0.0:
        raise DomainError("truth has zero norm")
    diff = estimate - truth
    return float(np.sum(diff ** 2)) / denom, (2.0 / denom) * diff


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch, stabilized by max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, c = logits.shape
    if labels.shape != (b,):
        raise UsageError(f"labels shape {labels.shape} does not match batch {b}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise UsageError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
    probs = np.exp(shifted - log_z[:, None])
    grad = probs
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    if squeeze:
        grad = grad[0]
    return loss, grad
