"""Leaky integrate-and-fire dynamics and surrogate spike gradients.

The neuron model: a membrane potential u that leaks by a factor beta each
step, integrates its weighted input current, fires a binary spike when it
exceeds a threshold theta, and pays for the spike by subtracting theta
(soft reset):

    spike  = 1 if u > theta else 0        (decided on the pre-update u)
    u_next = beta * u + current - spike * theta

The hard spike has no useful derivative, so training substitutes a smooth
surrogate slope in the backward pass. Two surrogates are supported, each
with a scale factor controlling its sharpness:

    arctangent:   S(U) = (1/pi) * arctan(pi * U * alpha / 2)
    fast_sigmoid: S(U) = U / (1 + k * |U|)

`surrogate_forward` evaluates S itself (only gradient-check tooling ever
runs it in a forward pass); `surrogate_derivative` is the analytic dS/dU
used by backpropagation through time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_tensor, check_finite

ARCTANGENT = "arctangent"
FAST_SIGMOID = "fast_sigmoid"
SURROGATE_KINDS = (ARCTANGENT, FAST_SIGMOID)


@dataclass(frozen=True)
class LifParams:
    """Membrane leak factor beta in [0, 1] and firing threshold theta > 0."""

    beta: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not self.theta > 0.0:
            raise ValueError(f"theta must be > 0, got {self.theta}")


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate kind plus its derivative scale (alpha or k, both > 0).

    `centered` controls where the surrogate slope is evaluated during
    backprop: True (default) centers it on the firing threshold, i.e. the
    slope is taken at u - theta; False evaluates it at the raw potential.
    """

    kind: str
    scale: float
    centered: bool = True

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}, expected one of {SURROGATE_KINDS}")
        if not self.scale > 0.0:
            raise ValueError(f"surrogate scale must be > 0, got {self.scale}")


@dataclass
class MembraneState:
    """Membrane potentials for one layer, same shape as the neuron grid."""

    u: np.ndarray

    def __post_init__(self):
        self.u = check_finite("membrane potential", as_tensor(self.u))


def lif_step(state: MembraneState, input_current: np.ndarray, params: LifParams):
    """Advance the membrane one timestep; returns (new_state, spikes).

    Spikes are decided on the incoming (pre-update) potential; the update is
    evaluated exactly as written: beta*u + current - spikes*theta, so a
    scalar replay of the same expression is bit-identical.
    """
    current = check_finite("input current", as_tensor(input_current))
    if current.shape != state.u.shape:
        raise ValueError(f"current shape {current.shape} != membrane shape {state.u.shape}")
    spikes = (state.u > params.theta).astype(np.float64)
    u_new = params.beta * state.u + current - spikes * params.theta
    return MembraneState(u_new), spikes


def surrogate_forward(u: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    """Smooth spike approximation S(U); gradient-check tooling only."""
    u = check_finite("surrogate input", as_tensor(u))
    if spec.kind == ARCTANGENT:
        return np.arctan(np.pi * u * (spec.scale / 2.0)) / np.pi
    return u / (1.0 + spec.scale * np.abs(u))


def surrogate_derivative(u: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    """Analytic dS/dU of the chosen surrogate.

    arctangent:   (alpha/2) / (1 + (pi*U*alpha/2)^2)
    fast_sigmoid: 1 / (1 + k*|U|)^2
    """
    u = check_finite("surrogate input", as_tensor(u))
    if spec.kind == ARCTANGENT:
        half = spec.scale / 2.0
        return half / (1.0 + np.square(np.pi * u * half))
    return 1.0 / np.square(1.0 + spec.scale * np.abs(u))


def backward_spike_grad(u_at_fire_check: np.ndarray, spec: SurrogateSpec, theta: float) -> np.ndarray:
    """Pseudo-derivative ds/du used by BPTT at the spike decision.

    Evaluated at the pre-update potential (the one the spike condition saw).
    With `spec.centered` the surrogate argument is shifted by theta so its
    peak slope sits exactly on the firing boundary.
    """
    u = as_tensor(u_at_fire_check)
    arg = u - theta if spec.centered else u
    return surrogate_derivative(arg, spec)
