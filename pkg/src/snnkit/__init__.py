"""snnkit: desk-scale spiking-network training and accelerator cost analysis.

Train LIF networks with surrogate-gradient BPTT, measure per-layer spike
sparsity, turn sparsity into modeled accelerator latency/power/FPS/W, and
sweep the hyperparameters (surrogate scale, leak beta, threshold theta)
that shape the accuracy-versus-efficiency trade-off.
"""

from .data import Encoder, LabeledDataset, encode, load_idx, save_idx, split_train_test, synth_digits
from .hwmodel import HwConfig, HwCostReport, LayerWorkload, estimate, layer_cycles, load_hw_config
from .learning import (
    TrainConfig,
    bptt,
    cosine_lr,
    evaluate,
    rate_cross_entropy_loss,
    train,
)
from .network import (
    NetworkSpec,
    NetworkState,
    SparsityReport,
    classify,
    count_spikes,
    forward,
    init_state,
    load_checkpoint,
    make_network,
    parse_arch,
    save_checkpoint,
)
from .neuron import (
    LifParams,
    MembraneState,
    SurrogateSpec,
    backward_spike_grad,
    lif_step,
    surrogate_derivative,
    surrogate_forward,
)
from .numerics import conv2d, derive_seed, make_rng, matmul, maxpool2d
from .sweep import SweepGrid, SweepResult, compare, frontier, load_grid, read_result_csv, run_sweep

__version__ = "0.1.0"
