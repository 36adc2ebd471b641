"""Leaky integrate-and-fire dynamics with learnable leak and threshold.

A neuron carries its membrane potential between timesteps; each step leaks the
retained potential, integrates the weighted input drive, and resets where the
previous step spiked. Reset is either subtractive ("soft", threshold removed
from the potential) or zeroing ("hard", retained potential cleared before
integration). Spiking uses the strict rule: a spike is emitted iff the
normalized drive exceeds the threshold, i.e. U/V_th - 1 > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SurrogateConfig, Tensor, decay_add, lif_update, normalized_drive, spike

LEAK_MIN = 1e-3
LEAK_MAX = 1.0 - 1e-3
THRESHOLD_MIN = 1e-2

RESET_MODES = ("soft", "hard")


@dataclass
class LifParams:
    """Per-layer scalar leak and threshold, optionally trainable."""

    leak: Tensor
    threshold: Tensor
    reset_mode: str = "soft"
    learnable: bool = True

    @classmethod
    def create(cls, leak: float = 0.6, threshold: float = 1.0,
               reset_mode: str = "soft", learnable: bool = True) -> "LifParams":
        if not 0.0 < leak < 1.0:
            raise ValueError(f"leak must lie in (0, 1), got {leak}")
        if not threshold > 0.0:
            raise ValueError(f"threshold must be positive, got {threshold}")
        if reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}, got {reset_mode!r}")
        return cls(
            leak=Tensor(leak, requires_grad=learnable),
            threshold=Tensor(threshold, requires_grad=learnable),
            reset_mode=reset_mode,
            learnable=learnable,
        )


@dataclass
class LifState:
    """Membrane potentials and the previous step's spikes for one layer."""

    membrane: Tensor
    prev_spikes: Tensor

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(membrane=Tensor(np.zeros(shape)), prev_spikes=Tensor(np.zeros(shape)))


def lif_step(state: LifState, weighted_input: Tensor, params: LifParams,
             surr: SurrogateConfig, spike_mode: str = "hard") -> tuple[Tensor, LifState]:
    """Advance one timestep; returns (spikes, new state).

    ``weighted_input`` must already contain the full synaptic drive for this
    step, including any skip-connection contribution.
    """
    if weighted_input.shape != state.membrane.shape:
        raise ValueError(
            f"drive shape {weighted_input.shape} does not match membrane {state.membrane.shape}"
        )
    membrane = lif_update(state.membrane, weighted_input, state.prev_spikes,
                          params.leak, params.threshold, params.reset_mode)
    spikes = spike(normalized_drive(membrane, params.threshold), surr, mode=spike_mode)
    return spikes, LifState(membrane=membrane, prev_spikes=spikes)


def leaky_integrate(state: Tensor, weighted_input: Tensor, leak: Tensor) -> Tensor:
    """Non-spiking accumulator step used by readout layers: U' = leak*U + drive."""
    return decay_add(state, weighted_input, leak)


def clamp_params(params: LifParams) -> LifParams:
    """Pull leak and threshold back inside their valid ranges in place.

    Gradient updates can push the leak past 1 or the threshold below zero,
    where the dynamics stop being meaningful.
    """
    np.clip(params.leak.data, LEAK_MIN, LEAK_MAX, out=params.leak.data)
    np.clip(params.threshold.data, THRESHOLD_MIN, None, out=params.threshold.data)
    return params
