"""Training: BPTT with surrogate spike gradients, loss, optimizers, schedule.

Backpropagation through time walks the unrolled dynamics in reverse. Per
spiking layer, with u[t] the pre-update potential and s[t] = H(u[t] - theta):

    u[t+1] = beta * u[t] + I[t] - s[t] * theta

so dL/du[t] = beta * dL/du[t+1] + sg(u[t]) * dL/ds[t], where sg is the
surrogate slope from `backward_spike_grad`, and dL/dI[t] = dL/du[t+1]. The
reset term's gradient (-theta * dL/du[t+1] into ds[t]) is detached by
default; pass detach_reset=False to keep it. Maxpool routes gradients
through its stored argmax indices; conv/dense backward are the standard
transposed operations.

`bptt(..., smooth=True)` swaps the hard threshold for the smooth surrogate
spike function in the forward pass. In that mode (with the reset attached)
the whole unrolled network is differentiable and BPTT computes its exact
gradient, which is what the finite-difference gradient checks verify; the
hard path is covered separately by hand-unrolled oracles.

Forward weighted sums go through the order-pinned `numerics` ops; backward
reductions use numpy einsum (single fixed C loop, deterministic across
runs, tolerance-checked rather than bit-pinned).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .network import (
    CONV,
    DENSE,
    POOL,
    ForwardTrace,
    LayerSparsity,
    NetworkSpec,
    NetworkState,
    SparsityReport,
    classify,
    forward,
    init_state,
)
from .neuron import backward_spike_grad, surrogate_forward
from .numerics import (
    NonFiniteError,
    as_tensor,
    conv2d,
    derive_seed,
    make_rng,
    matmul,
    maxpool2d,
    maxpool2d_backward,
)


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"  # 'adam' or 'sgd'
    seed: int = 0
    loss: str = "rate_cross_entropy"
    encoder: str = data_mod.DIRECT_CURRENT
    detach_reset: bool = True
    clip_norm: float | None = None  # global-norm clip; None disables
    momentum: float = 0.0  # sgd only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "rate_cross_entropy":
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    test_acc: float
    mean_fire_rate: float
    wallclock_s: float


def rate_cross_entropy_loss(counts: np.ndarray, labels: np.ndarray, timesteps: int):
    """Softmax cross-entropy on spike counts normalized by T.

    Returns (mean loss over the batch, dLoss/dCounts). The 1/T keeps the
    loss scale independent of the simulation length.
    """
    counts = as_tensor(counts)
    labels = np.asarray(labels, dtype=np.int64)
    bsz, n_classes = counts.shape
    if labels.shape != (bsz,):
        raise ValueError(f"labels shape {labels.shape} != ({bsz},)")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    z = counts / timesteps
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    loss = float(np.mean(-np.log(p[np.arange(bsz), labels])))
    grad = p.copy()
    grad[np.arange(bsz), labels] -= 1.0
    grad /= timesteps * bsz
    return loss, grad


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine annealing without restarts: 0.5*base*(1 + cos(pi*epoch/total))."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {total_epochs})")
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / total_epochs))


def _smooth_forward(spec: NetworkSpec, state: NetworkState, encoded: np.ndarray):
    """Forward pass with the surrogate's smooth spike function (tooling only).

    Mirrors `network.forward` but replaces the hard threshold with
    surrogate_forward so the unrolled network is differentiable end to end.
    """
    x = as_tensor(encoded)
    bsz = x.shape[1]
    shapes = spec.layer_shapes()
    theta = spec.lif.theta
    beta = spec.lif.beta
    membranes = [
        np.zeros((bsz, *shape)) if layer.kind in (CONV, DENSE) else None
        for layer, shape in zip(spec.layers, shapes)
    ]
    counts = np.zeros((bsz, spec.num_classes))
    trace = ForwardTrace({}, {}, {}, {})
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
                trace.pool_idx[i].append(idx)
            else:
                if layer.kind == DENSE and a.ndim > 2:
                    a = a.reshape(bsz, -1)
                trace.inputs[i].append(a)
                trace.u_pre[i].append(membranes[i])
                if layer.kind == CONV:
                    current = conv2d(a, state.weights[i])
                else:
                    current = matmul(a, state.weights[i].T)
                u = membranes[i]
                arg = u - theta if spec.surrogate.centered else u
                s = surrogate_forward(arg, spec.surrogate)
                membranes[i] = beta * u + current - s * theta
                a = s
            trace.spikes[i].append(a)
        counts = counts + a
    return counts, trace


def _conv_weight_grad(a: np.ndarray, g: np.ndarray, kernel: int) -> np.ndarray:
    """dL/dW for I = conv2d(a, W): correlate input patches with output grads."""
    from .numerics import _im2col

    bsz, _, ho, wo = g.shape
    patches = _im2col(a, kernel, kernel, 1)  # (B*ho*wo, C*K*K)
    gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, -1)
    f = g.shape[1]
    c = a.shape[1]
    gw = np.einsum("nf,nk->fk", gflat, patches, optimize=False)
    return gw.reshape(f, c, kernel, kernel)


def _conv_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """dL/da for I = conv2d(a, W): full correlation with the flipped kernels."""
    k = w.shape[2]
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(g, w_t, stride=1, padding=k - 1)


def bptt(
    spec: NetworkSpec,
    state: NetworkState,
    encoded: np.ndarray,
    labels: np.ndarray,
    detach_reset: bool = True,
    smooth: bool = False,
    spike_grad_override=None,
):
    """One instrumented forward plus reverse-time backward over a batch.

    Returns (loss, grads) with grads aligned to spec.layers (None at pool
    positions). `spike_grad_override`, if given, replaces the surrogate
    slope function (testing seam; called as fn(u_pre) -> dS/du).
    """
    if smooth:
        counts, trace = _smooth_forward(spec, state, encoded)
    else:
        counts, _, trace = forward(spec, state, encoded, _trace=True)
    loss, dcounts = rate_cross_entropy_loss(counts, labels, spec.timesteps)

    layers = spec.layers
    last = len(layers) - 1
    theta = spec.lif.theta
    beta = spec.lif.beta
    bsz = encoded.shape[1]
    shapes = spec.layer_shapes()
    grads: list[np.ndarray | None] = [
        None if w is None else np.zeros_like(w) for w in state.weights
    ]
    # du[i] = dL/du_i[t+1], i.e. the gradient entering step t+1's state
    du = {
        i: np.zeros((bsz, *shapes[i]))
        for i, layer in enumerate(layers)
        if layer.kind in (CONV, DENSE)
    }

    for t in reversed(range(spec.timesteps)):
        d_current = {i: du[i] for i in du}  # dL/dI_i[t] = dL/du_i[t+1]
        gs_below = None  # gradient w.r.t. the stream flowing out of layer i
        for i in reversed(range(len(layers))):
            layer = layers[i]
            if layer.kind == POOL:
                gs_below = maxpool2d_backward(gs_below, trace.pool_idx[i][t], layer.size)
                continue
            gs = dcounts if i == last else gs_below
            if not detach_reset:
                gs = gs - theta * d_current[i]
            if spike_grad_override is not None:
                sg = spike_grad_override(trace.u_pre[i][t])
            else:
                sg = backward_spike_grad(trace.u_pre[i][t], spec.surrogate, theta)
            du[i] = beta * d_current[i] + sg * gs
            if not np.isfinite(du[i]).all():
                raise NonFiniteError(f"non-finite gradient at layer {i + 1}, timestep {t}")
            a = trace.inputs[i][t]
            g = d_current[i]
            if layer.kind == CONV:
                grads[i] += _conv_weight_grad(a, g, layer.kernel)
                gs_below = _conv_input_grad(g, state.weights[i])
            else:
                grads[i] += np.einsum("bn,bd->nd", g, a, optimize=False)
                ga = matmul(g, state.weights[i])
                prev_shape = spec.input_shape if i == 0 else shapes[i - 1]
                gs_below = ga.reshape(bsz, *prev_shape) if len(prev_shape) > 1 else ga

    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite weight gradient at layer {i + 1}")
    return loss, grads


def batch_loss(
    spec: NetworkSpec, state: NetworkState, encoded: np.ndarray, labels: np.ndarray, smooth: bool = False
) -> float:
    """Loss of one forward pass; the function finite differences sample."""
    if smooth:
        counts, _ = _smooth_forward(spec, state, encoded)
    else:
        counts, _ = forward(spec, state, encoded)
    loss, _ = rate_cross_entropy_loss(counts, labels, spec.timesteps)
    return loss


class Sgd:
    def __init__(self, momentum: float = 0.0):
        self.momentum = momentum
        self.velocity = None

    def step(self, weights, grads, lr: float) -> None:
        if self.velocity is None:
            self.velocity = [None if w is None else np.zeros_like(w) for w in weights]
        for w, g, v in zip(weights, grads, self.velocity):
            if w is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += g
                w -= lr * v
            else:
                w -= lr * g


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, weights, grads, lr: float) -> None:
        if self.m is None:
            self.m = [None if w is None else np.zeros_like(w) for w in weights]
            self.v = [None if w is None else np.zeros_like(w) for w in weights]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for w, g, m, v in zip(weights, grads, self.m, self.v):
            if w is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            w -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(momentum=cfg.momentum)
    return Adam(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)


def clip_gradients(grads, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.square(g)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= scale
    return norm


def evaluate(
    spec: NetworkSpec,
    state: NetworkState,
    dataset: data_mod.LabeledDataset,
    encoder: data_mod.Encoder,
    rng: np.random.Generator,
    batch: int = 64,
):
    """Accuracy and sparsity over a dataset (instrumented forward).

    Returns (accuracy, SparsityReport) with spike/slot counts accumulated
    across all evaluation batches.
    """
    correct = 0
    spikes: list[int] | None = None
    slots: list[int] | None = None
    names_kinds: list[tuple[str, str]] = []
    for start in range(0, dataset.images.shape[0], batch):
        imgs = dataset.images[start : start + batch]
        labels = dataset.labels[start : start + batch]
        encoded = data_mod.encode(imgs, encoder, rng)
        counts, taps = forward(spec, state, encoded, record=True)
        correct += int(np.sum(classify(counts) == labels))
        if spikes is None:
            spikes = [0] * len(taps)
            slots = [0] * len(taps)
            names_kinds = [(tap.name, tap.kind) for tap in taps]
        for j, tap in enumerate(taps):
            spikes[j] += int(np.count_nonzero(tap.train))
            slots[j] += int(tap.train.size)
    entries = tuple(
        LayerSparsity(name, kind, spikes[j], slots[j])
        for j, (name, kind) in enumerate(names_kinds)
    )
    return correct / dataset.images.shape[0], SparsityReport(entries)


def train(
    spec: NetworkSpec,
    dataset: data_mod.LabeledDataset,
    cfg: TrainConfig,
    test_set: data_mod.LabeledDataset | None = None,
):
    """Full training loop; returns (state, per-epoch metrics).

    If `test_set` is None the dataset is split 80/20 with the seeded
    shuffle. Deterministic given cfg.seed: weight init, batch order, and
    (for the Bernoulli encoder) spike draws all derive from it.
    """
    if test_set is None:
        train_set, test_set = data_mod.split_train_test(
            dataset, 0.8, derive_seed(cfg.seed, "split")
        )
    else:
        train_set = dataset
    if spec.num_classes != dataset.num_classes:
        raise ValueError(
            f"network has {spec.num_classes} outputs, dataset has {dataset.num_classes} classes"
        )
    state = init_state(spec, make_rng(derive_seed(cfg.seed, "weights")))
    optimizer = make_optimizer(cfg)
    encoder = data_mod.Encoder(cfg.encoder, spec.timesteps)
    rng_shuffle = make_rng(derive_seed(cfg.seed, "shuffle"))
    rng_encode = make_rng(derive_seed(cfg.seed, "encode"))
    metrics: list[EpochMetrics] = []
    n = train_set.images.shape[0]
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = rng_shuffle.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch):
            sel = order[start : start + cfg.batch]
            encoded = data_mod.encode(train_set.images[sel], encoder, rng_encode)
            loss, grads = bptt(
                spec, state, encoded, train_set.labels[sel], detach_reset=cfg.detach_reset
            )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss diverged at epoch {epoch}, batch {start // cfg.batch}"
                )
            if cfg.clip_norm is not None:
                clip_gradients(grads, cfg.clip_norm)
            optimizer.step(state.weights, grads, lr)
            losses.append(loss)
        rng_eval = make_rng(derive_seed(cfg.seed, "eval", epoch))
        acc, report = evaluate(spec, state, test_set, encoder, rng_eval)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                lr=float(lr),
                train_loss=float(np.mean(losses)),
                test_acc=acc,
                mean_fire_rate=report.aggregate_rate,
                wallclock_s=time.perf_counter() - t0,
            )
        )
    return state, metrics
