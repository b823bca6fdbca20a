"""Feed-forward convolutional spiking networks.

Architectures come from compact strings like ``"32C3-P2-32C3-MP2-256-10"``:
``<F>C<Y>`` is a spiking conv layer with F filters of size YxY (stride 1,
no padding), ``P<Z>`` / ``MP<Z>`` both mean ZxZ max pooling on the binary
spike maps, and a bare integer is a spiking dense layer of that width. The
last layer must be dense; its width is the class count.

The forward pass unrolls T timesteps synchronously: at each step every
layer consumes the previous layer's same-step output. Spiking layers apply
their weights (conv or matmul) to get the input current, then take one LIF
step; membranes start at zero and are reset between batches. The per-class
score of a batch is the final layer's total spike count over all T steps.

With ``record=True`` the pass returns one tap per stream in the network:
the encoded input, every LIF layer's spikes, and every pool output. Taps
feed `count_spikes` (sparsity) and the hardware cost model.

Checkpoint container (magic ``SNNB``, version 1, little-endian): arch text,
input shape, timesteps, beta, theta, surrogate (kind/scale/centered flag),
training seed, then each weight tensor as dims + row-major float64 data.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .neuron import LifParams, MembraneState, SurrogateSpec, lif_step
from .numerics import as_tensor, check_finite, conv2d, make_rng, matmul, maxpool2d

CONV = "conv"
POOL = "pool"
DENSE = "dense"

CHECKPOINT_MAGIC = b"SNNB"
CHECKPOINT_VERSION = 1

_CONV_RE = re.compile(r"^(\d+)C(\d+)$")
_POOL_RE = re.compile(r"^M?P(\d+)$")
_DENSE_RE = re.compile(r"^(\d+)$")


class ArchError(ValueError):
    """Architecture string or layer shapes are invalid."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or has the wrong magic/version."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0  # conv
    kernel: int = 0  # conv
    size: int = 0  # pool window
    width: int = 0  # dense


def parse_arch(text: str) -> list[LayerSpec]:
    """Parse a dash-separated architecture string into layer specs."""
    layers: list[LayerSpec] = []
    seen_dense = False
    for token in text.strip().split("-"):
        m = _CONV_RE.match(token)
        if m:
            filters, kernel = int(m.group(1)), int(m.group(2))
            if filters == 0 or kernel == 0:
                raise ArchError(f"zero dimension in conv token {token!r}")
            if seen_dense:
                raise ArchError(f"conv layer {token!r} after a dense layer")
            layers.append(LayerSpec(CONV, filters=filters, kernel=kernel))
            continue
        m = _POOL_RE.match(token)
        if m:
            size = int(m.group(1))
            if size == 0:
                raise ArchError(f"zero dimension in pool token {token!r}")
            if seen_dense:
                raise ArchError(f"pool layer {token!r} after a dense layer")
            layers.append(LayerSpec(POOL, size=size))
            continue
        m = _DENSE_RE.match(token)
        if m:
            width = int(m.group(1))
            if width == 0:
                raise ArchError(f"zero dimension in dense token {token!r}")
            layers.append(LayerSpec(DENSE, width=width))
            seen_dense = True
            continue
        raise ArchError(f"unknown architecture token {token!r}")
    if not layers:
        raise ArchError("empty architecture string")
    if layers[-1].kind != DENSE:
        raise ArchError("last layer must be dense (the classifier)")
    return layers


@dataclass(frozen=True)
class NetworkSpec:
    """A parsed architecture bound to an input shape and LIF configuration."""

    arch: str
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # (C, H, W)
    timesteps: int
    lif: LifParams
    surrogate: SurrogateSpec

    @property
    def num_classes(self) -> int:
        return self.layers[-1].width

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape (per sample) of each layer; validates compatibility."""
        shapes = []
        cur: tuple[int, ...] = self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == CONV:
                c, h, w = cur
                if layer.kernel > h or layer.kernel > w:
                    raise ArchError(
                        f"layer {i + 1}: kernel {layer.kernel} exceeds input {h}x{w}"
                    )
                cur = (layer.filters, h - layer.kernel + 1, w - layer.kernel + 1)
            elif layer.kind == POOL:
                c, h, w = cur
                if h % layer.size or w % layer.size:
                    raise ArchError(
                        f"layer {i + 1}: pool {layer.size} does not divide {h}x{w}"
                    )
                cur = (c, h // layer.size, w // layer.size)
            else:
                cur = (layer.width,)
            shapes.append(cur)
        return shapes

    def weight_shapes(self) -> list[tuple[int, ...] | None]:
        """Weight tensor shape per layer (None for pools)."""
        shapes: list[tuple[int, ...] | None] = []
        cur: tuple[int, ...] = self.input_shape
        for layer, out_shape in zip(self.layers, self.layer_shapes()):
            if layer.kind == CONV:
                shapes.append((layer.filters, cur[0], layer.kernel, layer.kernel))
            elif layer.kind == DENSE:
                shapes.append((layer.width, int(np.prod(cur))))
            else:
                shapes.append(None)
            cur = out_shape
        return shapes


def make_network(
    arch: str,
    input_shape: tuple[int, int, int],
    timesteps: int,
    lif: LifParams,
    surrogate: SurrogateSpec,
) -> NetworkSpec:
    if timesteps < 1:
        raise ArchError(f"timesteps must be >= 1, got {timesteps}")
    spec = NetworkSpec(arch, tuple(parse_arch(arch)), tuple(input_shape), timesteps, lif, surrogate)
    spec.layer_shapes()  # validate now, not on first forward
    return spec


@dataclass
class NetworkState:
    """Weights (one tensor per spiking layer, None for pools) and membranes."""

    weights: list[np.ndarray | None]
    membranes: list[MembraneState | None] = field(default_factory=list)


def init_state(spec: NetworkSpec, rng: np.random.Generator) -> NetworkState:
    """Kaiming-uniform weights: U(-sqrt(6/fan_in), sqrt(6/fan_in)) per layer."""
    weights: list[np.ndarray | None] = []
    for shape in spec.weight_shapes():
        if shape is None:
            weights.append(None)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=shape))
    return NetworkState(weights=weights)


@dataclass
class Tap:
    """One recorded stream: the full (T, B, ...) train of a layer output."""

    name: str
    kind: str  # 'input' | 'lif' | 'pool'
    train: np.ndarray


@dataclass
class ForwardTrace:
    """Everything BPTT needs from a forward pass.

    Per layer index: `u_pre[i][t]` is the pre-update membrane the spike
    decision saw at step t, `inputs[i][t]` the activation entering the layer
    at step t (post-flatten for dense), `pool_idx[i][t]` the argmax map of
    pool layers, `spikes[i][t]` the layer output.
    """

    u_pre: dict[int, list[np.ndarray]]
    inputs: dict[int, list[np.ndarray]]
    pool_idx: dict[int, list[np.ndarray]]
    spikes: dict[int, list[np.ndarray]]


def _lif_layer_names(spec: NetworkSpec) -> list[str]:
    names = []
    n = 0
    for layer in spec.layers:
        if layer.kind in (CONV, DENSE):
            n += 1
            names.append(f"l{n}_{layer.kind}")
        else:
            names.append(f"pool_after_l{n}")
    return names


def forward(
    spec: NetworkSpec,
    state: NetworkState,
    encoded: np.ndarray,
    record: bool = False,
    _trace: bool = False,
):
    """Run the T-step pass; returns (class spike counts [B, classes], taps).

    `encoded` is the (T, B, C, H, W) input from an encoder. Taps are
    returned only when `record` is set; with `_trace` the full
    BPTT trace is returned as a third element.
    """
    x = check_finite("network input", as_tensor(encoded))
    if x.ndim != 5:
        raise ArchError(f"encoded input must be (T, B, C, H, W), got {x.shape}")
    t_in, bsz = x.shape[0], x.shape[1]
    if t_in != spec.timesteps:
        raise ArchError(f"input has {t_in} timesteps, network expects {spec.timesteps}")
    if tuple(x.shape[2:]) != spec.input_shape:
        raise ArchError(f"input shape {x.shape[2:]} != expected {spec.input_shape}")

    shapes = spec.layer_shapes()
    names = _lif_layer_names(spec)
    membranes: list[MembraneState | None] = [
        MembraneState(np.zeros((bsz, *shape))) if layer.kind in (CONV, DENSE) else None
        for layer, shape in zip(spec.layers, shapes)
    ]
    counts = np.zeros((bsz, spec.num_classes))
    taps_data: list[list[np.ndarray]] = [[] for _ in spec.layers]
    trace = ForwardTrace({}, {}, {}, {}) if _trace else None
    if _trace:
        for i, layer in enumerate(spec.layers):
            trace.inputs[i] = []
            trace.spikes[i] = []
            if layer.kind == POOL:
                trace.pool_idx[i] = []
            else:
                trace.u_pre[i] = []

    for t in range(spec.timesteps):
        a = x[t]
        for i, layer in enumerate(spec.layers):
            if layer.kind == POOL:
                a, idx = maxpool2d(a, layer.size)
                if _trace:
                    trace.pool_idx[i].append(idx)
            else:
                if layer.kind == DENSE and a.ndim > 2:
                    a = a.reshape(bsz, -1)
                if _trace:
                    trace.inputs[i].append(a)
                    trace.u_pre[i].append(membranes[i].u)
                if layer.kind == CONV:
                    current = conv2d(a, state.weights[i])
                else:
                    current = matmul(a, state.weights[i].T)
                membranes[i], a = lif_step(membranes[i], current, spec.lif)
            if record:
                taps_data[i].append(a)
            if _trace:
                trace.spikes[i].append(a)
        counts += a

    state.membranes = membranes
    taps = None
    if record:
        taps = [Tap("input", "input", x)]
        for i, layer in enumerate(spec.layers):
            kind = "pool" if layer.kind == POOL else "lif"
            taps.append(Tap(names[i], kind, np.stack(taps_data[i])))
    if _trace:
        return counts, taps, trace
    return counts, taps


def classify(counts: np.ndarray) -> np.ndarray:
    """Predicted class = most-spiking output neuron (first index on ties)."""
    return np.argmax(counts, axis=1)


@dataclass(frozen=True)
class LayerSparsity:
    name: str
    kind: str  # 'input' | 'lif' | 'pool'
    spikes: int
    slots: int

    @property
    def rate(self) -> float:
        return self.spikes / self.slots


@dataclass(frozen=True)
class SparsityReport:
    """Active-slot counts per recorded stream plus the network-wide rate.

    For binary trains `spikes` is the spike count; for the analog input tap
    it counts nonzero slots (the events a sparsity-aware accelerator must
    process). The aggregate covers LIF layers only: total spikes over total
    neuron-timestep slots, not a mean of per-layer rates.
    """

    layers: tuple[LayerSparsity, ...]

    @property
    def total_spikes(self) -> int:
        return sum(e.spikes for e in self.layers if e.kind == "lif")

    @property
    def total_slots(self) -> int:
        return sum(e.slots for e in self.layers if e.kind == "lif")

    @property
    def aggregate_rate(self) -> float:
        return self.total_spikes / self.total_slots

    def lif_layers(self) -> list[LayerSparsity]:
        return [e for e in self.layers if e.kind == "lif"]

    def entry(self, name: str) -> LayerSparsity:
        for e in self.layers:
            if e.name == name:
                return e
        raise KeyError(f"no recorded stream named {name!r}")


def count_spikes(taps: list[Tap]) -> SparsityReport:
    """Reduce recorded taps to per-layer spike counts and firing rates."""
    if not taps:
        raise ValueError("no recorded spike trains (was the forward pass run with record=True?)")
    entries = []
    for tap in taps:
        entries.append(
            LayerSparsity(
                name=tap.name,
                kind=tap.kind,
                spikes=int(np.count_nonzero(tap.train)),
                slots=int(tap.train.size),
            )
        )
    return SparsityReport(tuple(entries))


def save_checkpoint(path, spec: NetworkSpec, state: NetworkState, seed: int) -> None:
    kind_byte = 0 if spec.surrogate.kind == "arctangent" else 1
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", CHECKPOINT_VERSION))
        arch_bytes = spec.arch.encode("utf-8")
        f.write(struct.pack("<I", len(arch_bytes)))
        f.write(arch_bytes)
        f.write(struct.pack("<III", *spec.input_shape))
        f.write(struct.pack("<I", spec.timesteps))
        f.write(struct.pack("<dd", spec.lif.beta, spec.lif.theta))
        f.write(struct.pack("<BdB", kind_byte, spec.surrogate.scale, int(spec.surrogate.centered)))
        f.write(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
        weights = [w for w in state.weights if w is not None]
        f.write(struct.pack("<I", len(weights)))
        for w in weights:
            f.write(struct.pack("<B", w.ndim))
            f.write(struct.pack(f"<{w.ndim}I", *w.shape))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkSpec, NetworkState, int]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    off = 4
    version = data[off]
    off += 1
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (arch_len,) = take("<I")
    arch = data[off : off + arch_len].decode("utf-8")
    off += arch_len
    c, h, w = take("<III")
    (timesteps,) = take("<I")
    beta, theta = take("<dd")
    kind_byte, scale, centered = take("<BdB")
    (seed,) = take("<Q")
    kind = "arctangent" if kind_byte == 0 else "fast_sigmoid"
    spec = make_network(
        arch, (c, h, w), timesteps, LifParams(beta, theta), SurrogateSpec(kind, scale, bool(centered))
    )
    (n_weights,) = take("<I")
    flat_weights = []
    for _ in range(n_weights):
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        count = int(np.prod(shape))
        nbytes = count * 8
        if off + nbytes > len(data):
            raise CheckpointError("truncated checkpoint weights")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += nbytes
        flat_weights.append(arr)

    expected = [s for s in spec.weight_shapes() if s is not None]
    if len(flat_weights) != len(expected):
        raise CheckpointError(f"checkpoint has {len(flat_weights)} weights, arch needs {len(expected)}")
    for got, want in zip(flat_weights, expected):
        if got.shape != want:
            raise CheckpointError(f"weight shape {got.shape} != expected {want}")
    weights: list[np.ndarray | None] = []
    it = iter(flat_weights)
    for s in spec.weight_shapes():
        weights.append(None if s is None else next(it))
    return spec, NetworkState(weights=weights), seed
