"""Parameter stores: seeded initialization and binary checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, UsageError
from ..rng import stream
from .layers import NetworkSpec, iter_param_specs

CHECKPOINT_MAGIC = b"CHPT"
CHECKPOINT_VERSION = 1


@dataclass
class ParamStore:
    """Named parameter tensors in stable (layer traversal) order."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    init_seed: int = 0

    def copy(self) -> "ParamStore":
        return ParamStore(tensors={k: v.copy() for k, v in self.tensors.items()},
                          init_seed=self.init_seed)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def keys(self):
        return self.tensors.keys()

    def num_values(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.tensors.values())


def init_params(spec: NetworkSpec, init_seed: int) -> ParamStore:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases.

    Each tensor draws from its own named stream so structural edits to
    unrelated layers never disturb existing initializations.
    """
    tensors: dict[str, np.ndarray] = {}
    for name, shape, fan_in in iter_param_specs(spec):
        if name in tensors:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = stream(init_seed, "init", name).uniform(-bound, bound, size=shape)
    return ParamStore(tensors=tensors, init_seed=int(init_seed))


def zeros_like(store: ParamStore) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in store.tensors.items()}


def save_checkpoint(store: ParamStore, path) -> None:
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<IQ I", CHECKPOINT_VERSION, store.init_seed, len(store.tensors))]
    for name, tensor in store.tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise UsageError("not a checkpoint file (bad magic)")
    version, init_seed, count = struct.unpack_from("<IQ I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IQ I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensor = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors[name] = tensor.astype(np.float64)
    return ParamStore(tensors=tensors, init_seed=int(init_seed))
