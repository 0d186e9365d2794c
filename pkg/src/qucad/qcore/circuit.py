"""Parameterized circuit IR over physical qubits.

Basis states use little-endian ordering: qubit 0 is the least significant bit
of the computational-basis index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from math import tau
from pathlib import Path


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CRX = "CRX"
    CRY = "CRY"
    CRZ = "CRZ"
    CNOT = "CNOT"
    SWAP = "SWAP"

    @property
    def n_qubits(self) -> int:
        return 1 if self in ONE_QUBIT else 2

    @property
    def is_rotation(self) -> bool:
        return self in ONE_QUBIT or self in CONTROLLED


ONE_QUBIT = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})
CONTROLLED = frozenset({GateKind.CRX, GateKind.CRY, GateKind.CRZ})


class CircuitError(ValueError):
    pass


def normalize_angle(x: float) -> float:
    """Wrap an angle into [0, 2π)."""
    y = float(x) % tau
    # float modulo can round up to exactly tau for tiny negative inputs
    return 0.0 if y >= tau else y


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    qubits: tuple[int, ...]
    slot: int | None = None
    angle: float | None = None

    def __post_init__(self):
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        if len(qubits) != kind.n_qubits:
            raise CircuitError(f"{kind.value} acts on {kind.n_qubits} qubit(s), got {qubits}")
        if len(set(qubits)) != len(qubits):
            raise CircuitError(f"{kind.value} needs distinct qubits, got {qubits}")
        if any(q < 0 for q in qubits):
            raise CircuitError(f"negative qubit index in {qubits}")
        if kind.is_rotation:
            if (self.slot is None) == (self.angle is None):
                raise CircuitError(f"{kind.value} needs exactly one of slot or angle")
            if self.angle is not None:
                object.__setattr__(self, "angle", normalize_angle(self.angle))
        elif self.slot is not None or self.angle is not None:
            raise CircuitError(f"{kind.value} carries no parameter")

    @property
    def pair(self) -> tuple[int, int] | None:
        if len(self.qubits) != 2:
            return None
        a, b = self.qubits
        return (a, b) if a < b else (b, a)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "qubits": list(self.qubits)}
        if self.slot is not None:
            d["slot"] = self.slot
        if self.angle is not None:
            d["angle"] = self.angle
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(GateKind(d["kind"]), tuple(d["qubits"]), d.get("slot"), d.get("angle"))


def _norm_pair(p) -> tuple[int, int]:
    a, b = int(p[0]), int(p[1])
    if a == b:
        raise CircuitError(f"self-loop in coupling: {p}")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    n_params: int
    coupling: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "coupling", frozenset(_norm_pair(p) for p in self.coupling))
        for g in self.gates:
            if any(q >= self.n_qubits for q in g.qubits):
                raise CircuitError(f"{g.kind.value} on {g.qubits} exceeds width {self.n_qubits}")
            if g.pair is not None and self.coupling and g.pair not in self.coupling:
                raise CircuitError(f"{g.kind.value} on {g.qubits} is not on a coupled pair")
        slots = sorted(g.slot for g in self.gates if g.slot is not None)
        if slots != list(range(self.n_params)):
            raise CircuitError("parameter slots must be exactly 0..n_params-1, each used once")

    @property
    def param_gates(self) -> list[Gate]:
        """Parameterized gates ordered by slot."""
        out = [None] * self.n_params
        for g in self.gates:
            if g.slot is not None:
                out[g.slot] = g
        return out

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "coupling": [list(p) for p in sorted(self.coupling)],
            "gates": [g.to_dict() for g in self.gates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamCircuit":
        gates = tuple(Gate.from_dict(g) for g in d["gates"])
        n_params = sum(1 for g in gates if g.slot is not None)
        return cls(int(d["n_qubits"]), gates, n_params, frozenset(_norm_pair(p) for p in d.get("coupling", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ParamCircuit":
        return cls.from_dict(json.loads(Path(path).read_text()))
