"""Waveform inversion of quantitative ultrasound maps through a nonlinear wave model.

The forward model steps the discrete lossy Westervelt equation on a 2-D grid; the
reverse pass through those steps gives exact gradients of a channel-data misfit with
respect to speed of sound, density, attenuation and nonlinearity maps.
"""

from .acquisition import EmissionPlan, Waveform, acquire_sequence, add_noise, focal_delays, synthesize_focused
from .adjoint import PropertyGradients, backprop, forward_with_tape
from .grid import (
    ChannelData,
    ProbeGeometry,
    PropertySet,
    PulseField,
    SimulationGrid,
    Wavefield,
    check_cfl,
    courant_number,
    restrict,
)
from .inversion import (
    LossConfig,
    MultiPulseConfig,
    OptimizerState,
    Physics,
    StageSchedule,
    StopCriteria,
    fwi_invert,
    loss_and_gradient,
    multi_pulse_invert,
    nwi_invert,
    total_loss,
)
from .phantom import PhantomSpec, PropertyBounds, make_phantom, nrmse
from .solver import PmlConfig, pml_profile, simulate

__all__ = [
    "ChannelData", "EmissionPlan", "LossConfig", "MultiPulseConfig", "OptimizerState", "PhantomSpec", "Physics",
    "PmlConfig", "ProbeGeometry", "PropertyBounds", "PropertyGradients", "PropertySet", "PulseField",
    "SimulationGrid", "StageSchedule", "StopCriteria", "Wavefield", "Waveform", "acquire_sequence", "add_noise",
    "backprop", "check_cfl", "courant_number", "focal_delays", "forward_with_tape", "fwi_invert",
    "loss_and_gradient", "make_phantom", "multi_pulse_invert", "nrmse", "nwi_invert", "pml_profile", "restrict",
    "simulate", "synthesize_focused", "total_loss",
]
