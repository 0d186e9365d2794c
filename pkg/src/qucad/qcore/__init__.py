from .circuit import CONTROLLED, ONE_QUBIT, CircuitError, Gate, GateKind, ParamCircuit, normalize_angle
from .noise import GateCostModel, NoiseError, NoiseModel, circular_distance
from .routing import route, route_circuit
from .sim import (
    apply_gate_state,
    check_density,
    depolarize,
    expectations_with_shifts,
    gate_unitary,
    measure_z_expectations,
    simulate_noiseless,
    simulate_noisy,
    zero_state,
)

__all__ = [
    "CONTROLLED", "ONE_QUBIT", "CircuitError", "Gate", "GateKind", "ParamCircuit", "normalize_angle",
    "GateCostModel", "NoiseError", "NoiseModel", "circular_distance", "route", "route_circuit",
    "apply_gate_state", "check_density", "depolarize", "expectations_with_shifts", "gate_unitary",
    "measure_z_expectations", "simulate_noiseless", "simulate_noisy", "zero_state",
]
