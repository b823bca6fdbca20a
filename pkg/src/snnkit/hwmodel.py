"""Analytical cost model of a sparsity-aware, lock-step SNN accelerator.

The modeled machine processes one inference layer by layer. Each layer's
work has two parts:

* event-driven synaptic work: every incoming spike touches `fanout`
  synapses, each costing `cycles_per_synop` cycles and `energy_per_synop_j`
  joules, spread over `lanes` parallel lanes (cycle count rounded up);
* dense bookkeeping: every neuron performs one membrane update per
  timestep at `cycles_per_update` / `energy_per_update_j`, divided by
  lanes (left fractional when lanes do not divide evenly - this is a
  model, not an RTL trace).

Per-layer cycles per inference therefore follow

    ceil(spikes * fanout * cycles_per_synop / lanes)
        + neurons * T * cycles_per_update / lanes

Lock-step single-inference latency is the SUM of layer cycles over the
clock; with pipelining, steady-state throughput is instead bounded by the
slowest layer (max), reported as a secondary FPS figure. Dynamic energy is
workload only (clock-independent); average power is static plus dynamic
energy over latency; FPS = 1/latency and FPS/W = FPS/power.

Fanout is exact layer geometry, averaged over input positions including
edges: a conv with F filters of size KxK over an HxW input has fanout
F*K*K*Ho*Wo/(H*W); a dense layer's fanout is its output width. Maxpool
layers cost one comparison slot per pooled output per timestep, folded
into the consuming layer's update term.

`HwConfig` values live in a key=value text file (SI units); the defaults
shipped in configs/default.hwconf are placeholders chosen for internal
consistency, not measurements of any concrete FPGA.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .network import CONV, POOL, NetworkSpec, SparsityReport


class HwConfigError(ValueError):
    """Hardware config file is malformed or has non-positive values."""


class SparsityCoverageError(KeyError):
    """The sparsity report is missing a layer the cost model needs."""


@dataclass(frozen=True)
class HwConfig:
    clock_hz: float = 200e6
    cycles_per_synop: float = 1.0
    cycles_per_update: float = 1.0
    static_power_w: float = 0.5
    energy_per_synop_j: float = 5e-12
    energy_per_update_j: float = 2e-12
    lanes: int = 16

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise HwConfigError(f"{f.name} must be strictly positive")


def load_hw_config(path) -> HwConfig:
    """Parse a key = value config file ('#' comments, blank lines ok)."""
    values = {}
    known = {f.name for f in fields(HwConfig)}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise HwConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in known:
                raise HwConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = int(raw) if key == "lanes" else float(raw)
            except ValueError as e:
                raise HwConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    return HwConfig(**values)


def save_hw_config(cfg: HwConfig, path) -> None:
    with open(path, "w") as f:
        f.write("# accelerator cost-model parameters (SI units)\n")
        for fld in fields(cfg):
            f.write(f"{fld.name} = {getattr(cfg, fld.name)!r}\n")


@dataclass(frozen=True)
class LayerWorkload:
    """One spiking layer's per-inference traffic."""

    name: str
    incoming_spikes: float  # active input slots per inference (mean over the pass)
    fanout: float  # synapses touched per incoming spike
    neurons: int  # output neurons
    timesteps: int
    pool_slots: int = 0  # pooled-output comparison slots per inference, folded in

    @property
    def update_slots(self) -> int:
        return self.neurons * self.timesteps + self.pool_slots


@dataclass(frozen=True)
class LayerCost:
    name: str
    cycles: float
    synop_cycles: float
    update_cycles: float
    dyn_energy_j: float


@dataclass(frozen=True)
class HwCostReport:
    layers: tuple[LayerCost, ...]
    latency_s: float
    dyn_energy_j: float
    avg_power_w: float
    fps: float
    fps_per_w: float
    pipelined_fps: float  # steady-state throughput bound (max layer, not sum)

    def table(self) -> str:
        lines = [f"{'layer':<14}{'cycles':>14}{'synop cyc':>14}{'update cyc':>14}{'energy (J)':>14}"]
        for lc in self.layers:
            lines.append(
                f"{lc.name:<14}{lc.cycles:>14.1f}{lc.synop_cycles:>14.1f}"
                f"{lc.update_cycles:>14.1f}{lc.dyn_energy_j:>14.3e}"
            )
        lines.append(
            f"latency {self.latency_s:.6e} s | power {self.avg_power_w:.4f} W | "
            f"FPS {self.fps:.2f} | FPS/W {self.fps_per_w:.2f}"
        )
        return "\n".join(lines)


def layer_cycles(w: LayerWorkload, hw: HwConfig) -> float:
    """Event term (ceil'd over lanes) plus dense update term for one layer."""
    synop = math.ceil(w.incoming_spikes * w.fanout * hw.cycles_per_synop / hw.lanes)
    update = w.update_slots * hw.cycles_per_update / hw.lanes
    return synop + update


def _layer_cost(w: LayerWorkload, hw: HwConfig) -> LayerCost:
    synop = math.ceil(w.incoming_spikes * w.fanout * hw.cycles_per_synop / hw.lanes)
    update = w.update_slots * hw.cycles_per_update / hw.lanes
    energy = (
        w.incoming_spikes * w.fanout * hw.energy_per_synop_j
        + w.update_slots * hw.energy_per_update_j
    )
    return LayerCost(w.name, synop + update, synop, update, energy)


def conv_fanout(filters: int, kernel: int, in_h: int, in_w: int, out_h: int, out_w: int) -> float:
    """Mean synapses touched per input spike, edge effects averaged exactly."""
    return filters * kernel * kernel * out_h * out_w / (in_h * in_w)


def network_workloads(spec: NetworkSpec, sparsity: SparsityReport) -> list[LayerWorkload]:
    """Per-spiking-layer, per-inference workloads from recorded activity.

    Each spiking layer's incoming activity is the tap of the stream feeding
    it (the encoded input for layer 1, otherwise the previous LIF or pool
    tap), divided by the number of samples the recorded pass covered.
    """
    n_samples = recorded_samples(spec, sparsity)
    shapes = spec.layer_shapes()
    names = _layer_names(spec)
    workloads = []
    prev_entry = sparsity.entry("input")
    prev_shape = spec.input_shape
    pending_pool_slots = 0
    for i, layer in enumerate(spec.layers):
        try:
            entry = sparsity.entry(names[i])
        except KeyError:
            raise SparsityCoverageError(f"sparsity report missing {names[i]!r}") from None
        if layer.kind == POOL:
            c, h, w = shapes[i]
            pending_pool_slots = c * h * w * spec.timesteps
            prev_entry = entry
            prev_shape = shapes[i]
            continue
        if layer.kind == CONV:
            _, in_h, in_w = prev_shape
            _, out_h, out_w = shapes[i]
            fanout = conv_fanout(layer.filters, layer.kernel, in_h, in_w, out_h, out_w)
            neurons = layer.filters * out_h * out_w
        else:
            fanout = float(layer.width)
            neurons = layer.width
        workloads.append(
            LayerWorkload(
                name=names[i],
                incoming_spikes=prev_entry.spikes / n_samples,
                fanout=fanout,
                neurons=neurons,
                timesteps=spec.timesteps,
                pool_slots=pending_pool_slots,
            )
        )
        pending_pool_slots = 0
        prev_entry = entry
        prev_shape = shapes[i]
    return workloads


def _layer_names(spec: NetworkSpec) -> list[str]:
    from .network import _lif_layer_names

    return _lif_layer_names(spec)


def recorded_samples(spec: NetworkSpec, sparsity: SparsityReport) -> int:
    """How many samples the recorded pass covered (from input tap size)."""
    try:
        input_entry = sparsity.entry("input")
    except KeyError:
        raise SparsityCoverageError("sparsity report has no 'input' stream") from None
    c, h, w = spec.input_shape
    per_sample = spec.timesteps * c * h * w
    n, rem = divmod(input_entry.slots, per_sample)
    if rem or n < 1:
        raise SparsityCoverageError(
            f"input tap has {input_entry.slots} slots, not a multiple of {per_sample} per sample"
        )
    return n


def estimate(spec: NetworkSpec, sparsity: SparsityReport, hw: HwConfig, pipeline: bool = False) -> HwCostReport:
    """Turn measured firing activity into latency, power, FPS, and FPS/W.

    `pipeline` only affects which FPS figure leads in printed summaries;
    the report always carries both the lock-step FPS (1/latency) and the
    pipelined steady-state bound.
    """
    workloads = network_workloads(spec, sparsity)
    costs = tuple(_layer_cost(w, hw) for w in workloads)
    total_cycles = sum(c.cycles for c in costs)
    latency = total_cycles / hw.clock_hz
    dyn_energy = sum(c.dyn_energy_j for c in costs)
    avg_power = hw.static_power_w + dyn_energy / latency
    fps = 1.0 / latency
    bottleneck = max(c.cycles for c in costs)
    return HwCostReport(
        layers=costs,
        latency_s=latency,
        dyn_energy_j=dyn_energy,
        avg_power_w=avg_power,
        fps=fps,
        fps_per_w=fps / avg_power,
        pipelined_fps=hw.clock_hz / bottleneck,
    )
