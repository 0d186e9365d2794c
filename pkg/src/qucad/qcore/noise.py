"""Noise models and basis-gate cost accounting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import pi, tau
from pathlib import Path

import numpy as np

from .circuit import CONTROLLED, ONE_QUBIT, Gate, GateKind

LEVEL_TOL = 1e-9


def circular_distance(a: float, b: float) -> float:
    d = abs(float(a) - float(b)) % tau
    return min(d, tau - d)


def _default_levels() -> dict:
    levels = {}
    for k in ONE_QUBIT:
        levels[k] = {0.0: (0, 0)}
    for k in CONTROLLED:
        # CRX/CRY/CRZ(pi) reduces to one entangler plus local rotations
        levels[k] = {0.0: (0, 0), pi: (2, 1)}
    return levels


def _default_generic() -> dict:
    out = {k: (1, 0) for k in ONE_QUBIT}
    out.update({k: (2, 2) for k in CONTROLLED})
    out[GateKind.CNOT] = (0, 1)
    out[GateKind.SWAP] = (0, 3)
    return out


@dataclass
class GateCostModel:
    """Number of (1q, 2q) basis-gate occurrences each logical gate expands into.

    ``levels`` overrides the generic cost when a rotation angle sits exactly on
    a listed compression level.
    """

    generic: dict = field(default_factory=_default_generic)
    levels: dict = field(default_factory=_default_levels)

    def __post_init__(self):
        self.generic = {GateKind(k): tuple(int(c) for c in v) for k, v in self.generic.items()}
        self.levels = {
            GateKind(k): {float(a) % tau: tuple(int(c) for c in v) for a, v in lv.items()}
            for k, lv in self.levels.items()
        }
        for k in ONE_QUBIT | CONTROLLED:
            if self.levels.get(k, {}).get(0.0) != (0, 0):
                raise ValueError(f"level-0 cost must be zero for {k.value}")
        for v in list(self.generic.values()) + [c for lv in self.levels.values() for c in lv.values()]:
            if min(v) < 0:
                raise ValueError("basis-gate counts must be non-negative")

    def cost(self, kind: GateKind, angle: float | None = None) -> tuple[int, int]:
        if angle is not None:
            for level, c in self.levels.get(kind, {}).items():
                if circular_distance(angle, level) <= LEVEL_TOL:
                    return c
        return self.generic[kind]

    def to_dict(self) -> dict:
        return {
            "generic": {k.value: list(v) for k, v in self.generic.items()},
            "levels": {k.value: {repr(a): list(c) for a, c in lv.items()} for k, lv in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GateCostModel":
        base = cls()
        generic = dict(base.generic)
        generic.update({GateKind(k): v for k, v in d.get("generic", {}).items()})
        levels = {k: dict(v) for k, v in base.levels.items()}
        for k, lv in d.get("levels", {}).items():
            levels[GateKind(k)] = {float(a): c for a, c in lv.items()}
        return cls(generic, levels)

    @classmethod
    def load(cls, path) -> "GateCostModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class NoiseError(ValueError):
    pass


@dataclass
class NoiseModel:
    """Depolarizing probabilities per basis-gate occurrence plus readout confusion.

    ``readout[q]`` is the confusion matrix ``[[p(0|0), p(0|1)], [p(1|0), p(1|1)]]``;
    columns are indexed by the true outcome.
    """

    n_qubits: int
    sq: np.ndarray
    tq: dict
    readout: np.ndarray

    def __post_init__(self):
        self.sq = np.asarray(self.sq, dtype=float)
        self.tq = {tuple(sorted(map(int, k))): float(v) for k, v in self.tq.items()}
        self.readout = np.asarray(self.readout, dtype=float)
        if self.sq.shape != (self.n_qubits,) or self.readout.shape != (self.n_qubits, 2, 2):
            raise NoiseError("noise model arrays do not match qubit count")
        probs = np.concatenate([self.sq, list(self.tq.values()), self.readout.ravel()])
        if not np.all(np.isfinite(probs)) or probs.min(initial=0) < 0 or probs.max(initial=0) > 1:
            raise NoiseError("noise probabilities must lie in [0, 1]")
        if np.abs(self.readout.sum(axis=1) - 1).max(initial=0) > 1e-12:
            raise NoiseError("readout confusion columns must sum to 1")

    @classmethod
    def ideal(cls, n_qubits: int, pairs=()) -> "NoiseModel":
        ro = np.tile(np.eye(2), (n_qubits, 1, 1))
        return cls(n_qubits, np.zeros(n_qubits), {p: 0.0 for p in pairs}, ro)

    def scaled(self, factor: float) -> "NoiseModel":
        """Gate error rates multiplied by ``factor`` (clipped to 1); readout untouched."""
        return NoiseModel(
            self.n_qubits,
            np.minimum(self.sq * factor, 1.0),
            {k: min(v * factor, 1.0) for k, v in self.tq.items()},
            self.readout.copy(),
        )

    def gate_error(self, gate: Gate) -> float:
        """Error rate of the qubit or pair a gate acts on."""
        if gate.pair is None:
            return float(self.sq[gate.qubits[0]])
        try:
            return self.tq[gate.pair]
        except KeyError:
            raise NoiseError(f"no two-qubit error rate for pair {gate.pair}") from None

    def channels(self, gate: Gate, angle: float | None, cost: GateCostModel) -> list:
        """Depolarizing channels ``(qubits, p)`` charged after one gate.

        Occurrences on the same support are merged: m channels of strength p
        compose to one of strength 1 - (1-p)^m. Single-qubit occurrences of a
        two-qubit gate land on its target (last) qubit.
        """
        n1, n2 = cost.cost(gate.kind, angle)
        out = []
        if n2:
            p = self.gate_error(gate)
            out.append((gate.qubits, 1.0 - (1.0 - p) ** n2))
        if n1:
            q = gate.qubits[-1]
            out.append(((q,), 1.0 - (1.0 - float(self.sq[q])) ** n1))
        return [(qs, p) for qs, p in out if p > 0.0]

    def readout_diagonal(self) -> np.ndarray:
        """Per-qubit (value if true 0, value if true 1) of the measured Z after confusion."""
        c = self.readout
        return np.stack([c[:, 0, 0] - c[:, 1, 0], c[:, 0, 1] - c[:, 1, 1]], axis=1)
