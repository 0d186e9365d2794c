"""Exact statevector and density-matrix simulation.

All kernels accept a leading batch axis so a whole minibatch of encoded inputs
can move through a circuit in one pass. Gates are embedded as full
2^n x 2^n matrices, which is the cheap option at the widths this package
targets (n <= 6).
"""
from __future__ import annotations

from functools import lru_cache
from math import cos, pi, sin, sqrt

import numpy as np

from .circuit import CONTROLLED, CircuitError, Gate, GateKind, ParamCircuit
from .noise import GateCostModel, NoiseModel

_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

# two-term rule for generators with eigenvalues +-1/2
TWO_TERM = ((0.5, pi / 2), (-0.5, -pi / 2))
# four-term rule for controlled rotations (generator eigenvalues 0, 0, +-1/2)
_C1 = (sqrt(2) + 1) / (4 * sqrt(2))
_C2 = (sqrt(2) - 1) / (4 * sqrt(2))
FOUR_TERM = ((_C1, pi / 2), (-_C1, -pi / 2), (-_C2, 3 * pi / 2), (_C2, -3 * pi / 2))


def rotation_matrix(axis: str, theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    if axis == "X":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if axis == "Y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if axis == "Z":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=complex)
    raise ValueError(f"unknown rotation axis {axis!r}")


def local_matrix(kind: GateKind, theta: float = 0.0) -> np.ndarray:
    """Gate matrix on its own qubits; the first listed qubit is the most significant local bit."""
    if kind is GateKind.CNOT:
        return _CNOT
    if kind is GateKind.SWAP:
        return _SWAP
    r = rotation_matrix(kind.value[-1], theta)
    if kind in CONTROLLED:
        m = np.eye(4, dtype=complex)
        m[2:, 2:] = r
        return m
    return r


def shift_rule(kind: GateKind):
    if kind in CONTROLLED:
        return FOUR_TERM
    if kind.is_rotation:
        return TWO_TERM
    raise CircuitError(f"{kind.value} has no shift rule")


@lru_cache(maxsize=None)
def _embedding(qubits: tuple, n: int):
    idx = np.arange(2**n)
    m = len(qubits)
    loc = np.zeros_like(idx)
    rest = idx.copy()
    for k, q in enumerate(qubits):
        bit = (idx >> q) & 1
        loc |= bit << (m - 1 - k)
        rest &= ~(1 << q)
    same = rest[:, None] == rest[None, :]
    return loc[:, None], loc[None, :], same


def embed(mat: np.ndarray, qubits, n: int) -> np.ndarray:
    """Full 2^n x 2^n matrix of a gate acting on ``qubits``; ``mat`` may be a stack."""
    li, lj, same = _embedding(tuple(qubits), n)
    return np.where(same, mat[..., li, lj], 0)


def _check_qubits(gate: Gate, n: int) -> None:
    if any(q >= n for q in gate.qubits):
        raise CircuitError(f"{gate.kind.value} on {gate.qubits} exceeds width {n}")


def _width(dim: int) -> int:
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def gate_unitary(gate: Gate, theta: float, n: int) -> np.ndarray:
    _check_qubits(gate, n)
    return embed(local_matrix(gate.kind, theta), gate.qubits, n)


def gate_angle(gate: Gate, theta) -> float | None:
    if gate.slot is not None:
        return float(theta[gate.slot])
    return gate.angle


def apply_gate_state(state: np.ndarray, gate: Gate, theta: float = 0.0) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    n = _width(state.shape[-1])
    return state @ gate_unitary(gate, theta, n).T


def _check_theta(circuit: ParamCircuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_params,):
        raise CircuitError(f"expected {circuit.n_params} parameters, got shape {theta.shape}")
    return theta


def zero_state(n: int) -> np.ndarray:
    s = np.zeros(2**n, dtype=complex)
    s[0] = 1.0
    return s


def simulate_noiseless(circuit: ParamCircuit, theta, state=None) -> np.ndarray:
    """Pure-state evolution; ``state`` may carry a leading batch axis."""
    theta = _check_theta(circuit, theta)
    n = circuit.n_qubits
    state = zero_state(n) if state is None else np.asarray(state, dtype=complex)
    for g in circuit.gates:
        state = state @ gate_unitary(g, gate_angle(g, theta), n).T
    return state


def _twirl(rho: np.ndarray, q: int, n: int) -> np.ndarray:
    """Replace qubit ``q`` of (batched) operator ``rho`` by I/2 times its partial trace."""
    L, R = 2 ** (n - q - 1), 2**q
    lead = rho.shape[:-2]
    r = rho.reshape(*lead, L, 2, R, L, 2, R)
    half = 0.5 * (r[..., :, 0, :, :, 0, :] + r[..., :, 1, :, :, 1, :])
    out = np.zeros_like(r)
    out[..., :, 0, :, :, 0, :] = half
    out[..., :, 1, :, :, 1, :] = half
    return out.reshape(rho.shape)


def depolarize(rho: np.ndarray, qubits, p: float) -> np.ndarray:
    """rho -> (1-p) rho + p (I/2^k ⊗ Tr_k rho) over ``qubits``.

    The map is self-adjoint, so the same call evolves observables backwards.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing probability {p} outside [0, 1]")
    if p == 0.0:
        return rho
    n = _width(rho.shape[-1])
    t = rho
    for q in qubits:
        t = _twirl(t, q, n)
    return (1.0 - p) * rho + p * t


def _conj(U: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return U @ rho @ U.conj().T


def simulate_noisy(circuit: ParamCircuit, theta, noise: NoiseModel, cost_model: GateCostModel | None = None,
                   rho=None, on_channel=None) -> np.ndarray:
    """Density-matrix evolution with depolarizing noise per basis-gate occurrence.

    ``on_channel(rho)`` is called after every channel application when given.
    """
    theta = _check_theta(circuit, theta)
    cost_model = cost_model or GateCostModel()
    n = circuit.n_qubits
    if noise.n_qubits < n:
        raise ValueError("noise model covers fewer qubits than the circuit")
    if rho is None:
        psi = zero_state(n)
        rho = np.outer(psi, psi.conj())
    rho = np.asarray(rho, dtype=complex)
    for g in circuit.gates:
        ang = gate_angle(g, theta)
        rho = _conj(gate_unitary(g, ang, n), rho)
        for qs, p in noise.channels(g, ang, cost_model):
            rho = depolarize(rho, qs, p)
            if on_channel is not None:
                on_channel(rho)
    return rho


def marginal_one_probs(rho_or_state: np.ndarray, density: bool = True) -> np.ndarray:
    """Probability of reading 1 on each qubit (batched over leading axes)."""
    if density:
        probs = np.real(np.diagonal(rho_or_state, axis1=-2, axis2=-1))
    else:
        probs = np.abs(rho_or_state) ** 2
    n = _width(probs.shape[-1])
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    return probs @ bits


def measure_z_expectations(rho: np.ndarray, noise: NoiseModel | None = None) -> np.ndarray:
    """Per-qubit <Z> after classical readout confusion on each marginal."""
    p1 = marginal_one_probs(np.asarray(rho))
    p0 = 1.0 - p1
    if noise is None:
        return np.clip(p0 - p1, -1.0, 1.0)
    n = p1.shape[-1]
    c = noise.readout[:n]
    q0 = c[:, 0, 0] * p0 + c[:, 0, 1] * p1
    q1 = c[:, 1, 0] * p0 + c[:, 1, 1] * p1
    return np.clip(q0 - q1, -1.0, 1.0)


def check_density(rho: np.ndarray, trace_tol=1e-9, herm_tol=1e-10, psd_tol=1e-8) -> None:
    """Raise AssertionError unless ``rho`` (optionally batched) is a valid density matrix."""
    rho = np.asarray(rho)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    assert np.all(np.abs(tr - 1) <= trace_tol), f"trace {tr}"
    herm = np.abs(rho - np.swapaxes(rho.conj(), -1, -2)).max()
    assert herm <= herm_tol, f"non-Hermitian by {herm}"
    ev = np.linalg.eigvalsh(0.5 * (rho + np.swapaxes(rho.conj(), -1, -2)))
    assert ev.min() >= -psd_tol, f"min eigenvalue {ev.min()}"


def z_observables(n: int, qubits, noise: NoiseModel | None = None) -> np.ndarray:
    """Diagonal observables whose expectations are the (readout-corrupted) <Z_q>."""
    bits = (np.arange(2**n)[None, :] >> np.asarray(qubits)[:, None]) & 1
    if noise is None:
        vals = np.where(bits == 0, 1.0, -1.0)
    else:
        d = noise.readout_diagonal()[np.asarray(qubits)]
        vals = np.where(bits == 0, d[:, :1], d[:, 1:])
    return vals


def expectations_with_shifts(circuit: ParamCircuit, theta, init: np.ndarray, readout, noise: NoiseModel | None = None,
                             cost_model: GateCostModel | None = None, slots=None):
    """Readout expectations and their parameter-shift derivatives.

    ``init`` is a batch of statevectors (B, D) when ``noise`` is None, else a
    batch of density matrices (B, D, D). Returns ``(E, dE)`` with ``E`` of
    shape (B, K) and ``dE`` of shape (n_params, B, K); rows of ``dE`` outside
    ``slots`` are zero.

    Each shifted term is the exact circuit expectation with one angle moved;
    the suffix of the circuit is folded into a Heisenberg-picture observable
    so every shift costs one gate application instead of a full re-run.
    """
    theta = _check_theta(circuit, theta)
    cost_model = cost_model or GateCostModel()
    n = circuit.n_qubits
    noisy = noise is not None
    want = set(range(circuit.n_params)) if slots is None else {int(s) for s in slots}

    diag = z_observables(n, readout, noise)
    B, K = init.shape[0], len(readout)

    gates = circuit.gates
    angles = [gate_angle(g, theta) for g in gates]
    Us = [gate_unitary(g, a, n) for g, a in zip(gates, angles)]
    chans = [noise.channels(g, a, cost_model) if noisy else [] for g, a in zip(gates, angles)]

    saved = {}
    x = init
    for i, (g, U, ch) in enumerate(zip(gates, Us, chans)):
        if g.slot is not None and g.slot in want:
            saved[i] = x
        if noisy:
            x = _conj(U, x)
            for qs, p in ch:
                x = depolarize(x, qs, p)
        else:
            x = x @ U.T
    if noisy:
        probs = np.real(np.diagonal(x, axis1=-2, axis2=-1))
    else:
        probs = np.abs(x) ** 2
    E = probs @ diag.T

    dE = np.zeros((circuit.n_params, B, K))
    if not saved:
        return E, dE
    O = np.zeros((K, 2**n, 2**n), dtype=complex)
    O[:, np.arange(2**n), np.arange(2**n)] = diag
    first = min(saved)
    for i in range(len(gates) - 1, first - 1, -1):
        g, U = gates[i], Us[i]
        O_ch = O
        for qs, p in chans[i]:
            O_ch = depolarize(O_ch, qs, p)
        if i in saved:
            x = saved[i]
            rule = shift_rule(g.kind)
            coefs = np.array([c for c, _ in rule])
            shifted = [angles[i] + sh for _, sh in rule]
            Ss = embed(np.stack([local_matrix(g.kind, a) for a in shifted]), g.qubits, n)
            Ms = np.broadcast_to(O_ch, (len(rule),) + O_ch.shape).copy()
            if noisy:
                for j, a in enumerate(shifted):
                    ch = noise.channels(g, a, cost_model)
                    if ch != chans[i]:
                        M = O
                        for qs, p in ch:
                            M = depolarize(M, qs, p)
                        Ms[j] = M
            Sd = np.conj(np.swapaxes(Ss, -1, -2))[:, None]
            Ms = Sd @ Ms @ Ss[:, None]
            S, D = Ms.shape[0], Ms.shape[-1]
            if noisy:
                # Tr(M rho) as a flat dot product against rho transposed
                xt = np.swapaxes(x, -1, -2).reshape(len(x), D * D)
                val = (Ms.reshape(S * K, D * D) @ xt.T).reshape(S, K, -1)
            else:
                val = np.sum(x.conj().T * (Ms @ x.T), axis=-2)
            val = np.real(val)
            dE[g.slot] = np.tensordot(coefs, val, axes=1).T
        O = U.conj().T @ O_ch @ U
    return E, dE
