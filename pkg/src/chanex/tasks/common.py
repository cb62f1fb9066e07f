"""Shared plumbing for the extrapolation task pipelines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from ..nn import (AdamState, NetworkSpec, ParamStore, adam_step, backward,
                  cross_entropy_loss, forward, init_params, nmse, nmse_db,
                  nmse_loss)
from ..rng import stream

DIVERGENCE_LIMIT = 1e3
TEST_SPLIT_EVERY = 5  # every fifth terminal (by sorted-id rank) goes to the test split


def complex_to_channels(values: np.ndarray) -> np.ndarray:
    """(A, K) complex -> (A, K, 2) float64 with trailing real/imag channels."""
    return np.stack([values.real, values.imag], axis=-1).astype(np.float64)


def channels_to_complex(stacked: np.ndarray) -> np.ndarray:
    return stacked[..., 0] + 1j * stacked[..., 1]


def split_ids(ids) -> tuple[list[int], list[int]]:
    """Deterministic 80/20 split by sorted-id rank; disjoint by construction."""
    ordered = sorted(int(i) for i in ids)
    train = [t for rank, t in enumerate(ordered) if rank % TEST_SPLIT_EVERY != TEST_SPLIT_EVERY - 1]
    test = [t for rank, t in enumerate(ordered) if rank % TEST_SPLIT_EVERY == TEST_SPLIT_EVERY - 1]
    return train, test


def rms_scale(arrays) -> float:
    """Root-mean-square magnitude over a list of complex arrays; never zero."""
    total = 0.0
    count = 0
    for a in arrays:
        total += float(np.sum(np.abs(a) ** 2))
        count += a.size
    return max(np.sqrt(total / max(count, 1)), 1e-12)


@dataclass
class FitResult:
    params: ParamStore
    best_params: ParamStore
    best_epoch: int
    best_value: float
    history: list[dict] = field(default_factory=list)  # one dict per epoch, epoch 0 = init

    def final(self) -> dict:
        return dict(self.history[-1])


def _eval_regression(spec, params, x, y, chunk=128) -> float:
    outputs = []
    for start in range(0, x.shape[0], chunk):
        out, _ = forward(spec, params.tensors, x[start:start + chunk])
        outputs.append(out)
    return nmse(np.concatenate(outputs), y)


def _eval_accuracy(spec, params, x, labels, chunk=256) -> float:
    hits = 0
    for start in range(0, x.shape[0], chunk):
        out, _ = forward(spec, params.tensors, x[start:start + chunk])
        hits += int(np.sum(np.argmax(out, axis=1) == labels[start:start + chunk]))
    return hits / x.shape[0]


def fit_regression(spec: NetworkSpec, x_train, y_train, x_test, y_test, *,
                   epochs: int, learning_rate: float, batch_size: int,
                   init_seed: int, initial_params: ParamStore | None = None,
                   config_hash: str | None = None) -> FitResult:
    """Adam training on the NMSE loss, tracking the best test-NMSE checkpoint.

    Epoch 0 in the history is the untouched initialization (or the provided
    warm start), so transfer arms account for their starting point.
    """
    params = initial_params.copy() if initial_params is not None else init_params(spec, init_seed)
    state = AdamState()
    order_rng = stream(init_seed, "batch-order")
    n = x_train.shape[0]

    def snapshot(epoch, train_loss=None):
        value = _eval_regression(spec, params, x_test, y_test)
        if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise TrainingError(f"training diverged (test NMSE {value:.3e})",
                                config_hash=config_hash)
        row = {"epoch": epoch, "test_nmse": value, "test_nmse_db": nmse_db(value)}
        if train_loss is not None:
            row["train_nmse"] = train_loss
        return row

    history = [snapshot(0)]
    best = (history[0]["test_nmse"], 0, params.copy())
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, tape = forward(spec, params.tensors, x_train[idx])
            loss, dy = nmse_loss(out, y_train[idx])
            losses.append(loss)
            adam_step(params, backward(tape, dy), state, lr=learning_rate)
        row = snapshot(epoch, train_loss=float(np.mean(losses)))
        history.append(row)
        if row["test_nmse"] < best[0]:
            best = (row["test_nmse"], epoch, params.copy())
    return FitResult(params=params, best_params=best[2], best_epoch=best[1],
                     best_value=best[0], history=history)


def fit_classifier(spec: NetworkSpec, x_train, labels_train, x_test, labels_test, *,
                   epochs: int, learning_rate: float, batch_size: int,
                   init_seed: int, config_hash: str | None = None) -> FitResult:
    """Adam training on softmax cross-entropy, tracking the best top-1 accuracy."""
    params = init_params(spec, init_seed)
    state = AdamState()
    order_rng = stream(init_seed, "batch-order")
    n = x_train.shape[0]

    def snapshot(epoch, train_loss=None):
        acc = _eval_accuracy(spec, params, x_test, labels_test)
        row = {"epoch": epoch, "acc_top1": acc}
        if train_loss is not None:
            if not np.isfinite(train_loss) or train_loss > DIVERGENCE_LIMIT:
                raise TrainingError(f"training diverged (loss {train_loss:.3e})",
                                    config_hash=config_hash)
            row["train_loss"] = train_loss
        return row

    history = [snapshot(0)]
    best = (history[0]["acc_top1"], 0, params.copy())
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, tape = forward(spec, params.tensors, x_train[idx])
            loss, dy = cross_entropy_loss(out, labels_train[idx])
            losses.append(loss)
            adam_step(params, backward(tape, dy), state, lr=learning_rate)
        row = snapshot(epoch, train_loss=float(np.mean(losses)))
        history.append(row)
        if row["acc_top1"] > best[0]:
            best = (row["acc_top1"], epoch, params.copy())
    return FitResult(params=params, best_params=best[2], best_epoch=best[1],
                     best_value=best[0], history=history)


def history_rows(history: list[dict], metrics: tuple[str, ...], prefix: str = "") -> list[tuple]:
    rows = []
    for row in history:
        for name in metrics:
            if name in row:
                rows.append((row["epoch"], prefix + name, row[name]))
    return rows
