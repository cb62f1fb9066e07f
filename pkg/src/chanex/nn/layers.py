"""Layer graph and reverse-mode differentiation.

Networks are ordered layer lists operating on batch-first float64 arrays
(shape (batch, *features)).  ``forward`` first checks shapes statically
along the whole spec, then executes while recording a tape; ``backward``
replays the tape and returns per-parameter gradients.

Layer semantics:

* Dense(in, out): affine map on 1-D features.
* Conv2d(in_ch, out_ch, k, padding): zero-padded 2-D convolution on
  channels-last (height, width, channels) features; k and padding may be
  ints or (vertical, horizontal) pairs.  Channels-last keeps the contracted
  axis contiguous, which is what makes the GEMM formulation fast here.
* Relu: elementwise max(x, 0).
* OdeBlock(inner, steps, step_size): unrolled explicit-Euler flow
  x <- x + h * inner(x); the inner network must map a shape to itself.
* Concat(branch_a, branch_b): dual-branch layer on 1-D features.  The
  input splits at the branches' declared input widths (each branch must
  start with a Dense layer); outputs are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ConfigurationError, UsageError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, tuple):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_size: Union[int, tuple[int, int]]
    padding: Union[int, tuple[int, int]] = 0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class OdeBlock:
    inner: "NetworkSpec"
    steps: int
    step_size: float


@dataclass(frozen=True)
class Concat:
    branch_a: "NetworkSpec"
    branch_b: "NetworkSpec"


LayerSpec = Union[Dense, Conv2d, Relu, OdeBlock, Concat]


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __len__(self):
        return len(self.layers)


def network(*layers) -> NetworkSpec:
    return NetworkSpec(layers=tuple(layers))


def _branch_input_width(branch: NetworkSpec, where: str) -> int:
    if len(branch.layers) == 0 or not isinstance(branch.layers[0], Dense):
        raise ConfigurationError(f"{where}: each Concat branch must start with a Dense layer")
    return branch.layers[0].in_features


def _layer_output_shape(layer: LayerSpec, shape: tuple[int, ...], where: str) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        if shape != (layer.in_features,):
            raise ConfigurationError(f"{where}: Dense expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        kh, kw = _pair(layer.kernel_size)
        ph, pw = _pair(layer.padding)
        if kh < 1 or kw < 1 or ph < 0 or pw < 0:
            raise ConfigurationError(f"{where}: invalid kernel/padding")
        if len(shape) != 3 or shape[2] != layer.in_channels:
            raise ConfigurationError(
                f"{where}: Conv2d expects (H, W, {layer.in_channels}), got {shape}")
        ho = shape[0] + 2 * ph - kh + 1
        wo = shape[1] + 2 * pw - kw + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"{where}: kernel larger than padded input {shape}")
        return (ho, wo, layer.out_channels)
    if isinstance(layer, Relu):
        return shape
    if isinstance(layer, OdeBlock):
        if layer.steps < 1 or layer.step_size <= 0:
            raise ConfigurationError(f"{where}: OdeBlock needs steps >= 1 and step_size > 0")
        inner_out = output_shape(layer.inner, shape, where=f"{where}.inner")
        if inner_out != shape:
            raise ConfigurationError(
                f"{where}: OdeBlock inner maps {shape} to {inner_out}, must be shape-preserving")
        return shape
    if isinstance(layer, Concat):
        in_a = _branch_input_width(layer.branch_a, where)
        in_b = _branch_input_width(layer.branch_b, where)
        if shape != (in_a + in_b,):
            raise ConfigurationError(
                f"{where}: Concat expects ({in_a + in_b},) = branch widths {in_a}+{in_b}, "
                f"got {shape}")
        out_a = output_shape(layer.branch_a, (in_a,), where=f"{where}.a")
        out_b = output_shape(layer.branch_b, (in_b,), where=f"{where}.b")
        if len(out_a) != 1 or len(out_b) != 1:
            raise ConfigurationError(f"{where}: Concat branches must produce 1-D features")
        return (out_a[0] + out_b[0],)
    raise ConfigurationError(f"{where}: unknown layer type {type(layer).__name__}")


def output_shape(spec: NetworkSpec, input_shape: tuple[int, ...], where: str = "net") -> tuple[int, ...]:
    """Statically computed output feature shape; raises before any arithmetic."""
    shape = tuple(int(s) for s in input_shape)
    for i, layer in enumerate(spec.layers):
        shape = _layer_output_shape(layer, shape, where=f"{where}[{i}]:{type(layer).__name__}")
    return shape


def iter_param_specs(spec: NetworkSpec, prefix: str = ""):
    """Yield (name, shape, fan_in) for every parameter tensor, in stable order."""
    for i, layer in enumerate(spec.layers):
        base = f"{prefix}{i}"
        if isinstance(layer, Dense):
            yield f"{base}.w", (layer.out_features, layer.in_features), layer.in_features
            yield f"{base}.b", (layer.out_features,), layer.in_features
        elif isinstance(layer, Conv2d):
            kh, kw = _pair(layer.kernel_size)
            fan_in = layer.in_channels * kh * kw
            yield f"{base}.w", (layer.out_channels, layer.in_channels, kh, kw), fan_in
            yield f"{base}.b", (layer.out_channels,), fan_in
        elif isinstance(layer, OdeBlock):
            yield from iter_param_specs(layer.inner, prefix=f"{base}.inner.")
        elif isinstance(layer, Concat):
            yield from iter_param_specs(layer.branch_a, prefix=f"{base}.a.")
            yield from iter_param_specs(layer.branch_b, prefix=f"{base}.b.")


# -- execution ---------------------------------------------------------------

def _conv_forward(layer: Conv2d, w_tensor, b_tensor, x):
    kh, kw = _pair(layer.kernel_size)
    ph, pw = _pair(layer.padding)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    b, h, w, _ = x.shape
    ho = h + 2 * ph - kh + 1
    wo = w + 2 * pw - kw + 1
    wl = w_tensor.transpose(2, 3, 1, 0)  # (kh, kw, in_ch, out_ch)
    y = np.zeros((b, ho, wo, layer.out_channels))
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i:i + ho, j:j + wo, :] @ wl[i, j]
    return y + b_tensor, xp


def _conv_backward(layer: Conv2d, w_tensor, xp, x_shape, dy):
    kh, kw = _pair(layer.kernel_size)
    ph, pw = _pair(layer.padding)
    b, h, w, c = x_shape
    ho, wo = dy.shape[1], dy.shape[2]
    wl = w_tensor.transpose(2, 3, 1, 0)
    dyf = dy.reshape(-1, layer.out_channels)
    dw = np.empty_like(w_tensor)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, i:i + ho, j:j + wo, :].reshape(-1, c)
            dw[:, :, i, j] = dyf.T @ window
            dxp[:, i:i + ho, j:j + wo, :] += dy @ wl[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    dx = dxp[:, ph:ph + h, pw:pw + w, :] if (ph or pw) else dxp
    return dw, db, dx


@dataclass
class Tape:
    """Activation record from one forward pass; input to ``backward``."""

    spec: NetworkSpec
    params: dict
    entries: list
    batch: int
    out_shape: tuple[int, ...]


def _run_forward(spec, params, x, prefix, entries):
    for i, layer in enumerate(spec.layers):
        base = f"{prefix}{i}"
        if isinstance(layer, Dense):
            entries.append((base, x))
            x = x @ params[f"{base}.w"].T + params[f"{base}.b"]
        elif isinstance(layer, Conv2d):
            y, xp = _conv_forward(layer, params[f"{base}.w"], params[f"{base}.b"], x)
            entries.append((base, (xp, x.shape)))
            x = y
        elif isinstance(layer, Relu):
            mask = x > 0
            entries.append((base, mask))
            x = x * mask
        elif isinstance(layer, OdeBlock):
            step_entries = []
            for _ in range(layer.steps):
                inner_entries = []
                f = _run_forward(layer.inner, params, x, f"{base}.inner.", inner_entries)
                step_entries.append(inner_entries)
                x = x + layer.step_size * f
            entries.append((base, step_entries))
        elif isinstance(layer, Concat):
            in_a = layer.branch_a.layers[0].in_features
            xa, xb = x[:, :in_a], x[:, in_a:]
            ea, eb = [], []
            ya = _run_forward(layer.branch_a, params, xa, f"{base}.a.", ea)
            yb = _run_forward(layer.branch_b, params, xb, f"{base}.b.", eb)
            entries.append((base, (ea, eb, in_a, ya.shape[1])))
            x = np.concatenate([ya, yb], axis=1)
    return x


def forward(spec: NetworkSpec, params: dict, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on a (batch, *features) array; returns output and tape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise UsageError("forward expects a batch-first array of shape (batch, *features)")
    out_shape = output_shape(spec, x.shape[1:])
    entries: list = []
    y = _run_forward(spec, params, x, "", entries)
    return y, Tape(spec=spec, params=params, entries=entries, batch=x.shape[0],
                   out_shape=out_shape)


def _run_backward(spec, params, entries, dy, grads, prefix):
    pos = len(entries) - 1
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        base = f"{prefix}{i}"
        name, payload = entries[pos]
        if name != base:
            raise UsageError(f"tape entry {name!r} does not match layer {base!r}")
        pos -= 1
        if isinstance(layer, Dense):
            x = payload
            grads[f"{base}.w"] = grads.get(f"{base}.w", 0) + dy.T @ x
            grads[f"{base}.b"] = grads.get(f"{base}.b", 0) + dy.sum(axis=0)
            dy = dy @ params[f"{base}.w"]
        elif isinstance(layer, Conv2d):
            xp, x_shape = payload
            dw, db, dx = _conv_backward(layer, params[f"{base}.w"], xp, x_shape, dy)
            grads[f"{base}.w"] = grads.get(f"{base}.w", 0) + dw
            grads[f"{base}.b"] = grads.get(f"{base}.b", 0) + db
            dy = dx
        elif isinstance(layer, Relu):
            dy = dy * payload
        elif isinstance(layer, OdeBlock):
            for inner_entries in reversed(payload):
                d_inner = _run_backward(layer.inner, params, inner_entries,
                                        layer.step_size * dy, grads, f"{base}.inner.")
                dy = dy + d_inner
        elif isinstance(layer, Concat):
            ea, eb, in_a, out_a = payload
            da = _run_backward(layer.branch_a, params, ea, dy[:, :out_a], grads, f"{base}.a.")
            db = _run_backward(layer.branch_b, params, eb, dy[:, out_a:], grads, f"{base}.b.")
            dy = np.concatenate([da, db], axis=1)
    return dy


def backward(tape: Tape, loss_gradient: np.ndarray) -> dict:
    """Parameter gradients for the forward pass recorded on the tape.

    ``loss_gradient`` is dLoss/dOutput with the output's batched shape.
    Also computes (and discards) the input gradient; use ``backward_input``
    when it is needed.
    """
    grads: dict = {}
    backward_input(tape, loss_gradient, grads)
    return grads


def backward_input(tape: Tape, loss_gradient: np.ndarray, grads: dict | None = None) -> np.ndarray:
    """Like ``backward`` but returns the gradient with respect to the input."""
    dy = np.asarray(loss_gradient, dtype=np.float64)
    expected = (tape.batch,) + tape.out_shape
    if dy.shape != expected:
        raise UsageError(f"loss gradient shape {dy.shape} does not match tape output {expected}")
    if grads is None:
        grads = {}
    return _run_backward(tape.spec, tape.params, tape.entries, dy, grads, "")


def ode_block_forward(inner: NetworkSpec, params: dict, x: np.ndarray,
                      steps: int, step_size: float) -> np.ndarray:
    """Explicit-Euler flow of ``inner`` applied to x: K steps of x + h*inner(x).

    ``params`` are the inner network's own parameters (unprefixed names).
    """
    if steps < 1 or step_size <= 0:
        raise ConfigurationError("OdeBlock needs steps >= 1 and step_size > 0")
    x = np.asarray(x, dtype=np.float64)
    inner_out = output_shape(inner, x.shape[1:], where="ode.inner")
    if inner_out != x.shape[1:]:
        raise ConfigurationError(
            f"ode.inner maps {x.shape[1:]} to {inner_out}, must be shape-preserving")
    for _ in range(steps):
        f, _ = forward(inner, params, x)
        x = x + step_size * f
    return x
