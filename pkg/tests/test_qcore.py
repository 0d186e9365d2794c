import json
from math import pi

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qucad.qcore import (
    CircuitError,
    Gate,
    GateCostModel,
    GateKind,
    NoiseError,
    NoiseModel,
    ParamCircuit,
    check_density,
    depolarize,
    expectations_with_shifts,
    measure_z_expectations,
    route,
    simulate_noiseless,
    simulate_noisy,
    zero_state,
)
from qucad.qcore.sim import FOUR_TERM, TWO_TERM, local_matrix, shift_rule

ROT = ["RX", "RY", "RZ", "CRX", "CRY", "CRZ"]


def random_circuit(rng, n=3, n_gates=12, coupling=None, fixed=True):
    gates, slot = [], 0
    for _ in range(n_gates):
        kind = GateKind(rng.choice(ROT + (["CNOT", "SWAP"] if fixed else [])))
        if kind.n_qubits == 1:
            qs = (int(rng.integers(n)),)
        else:
            a, b = rng.choice(n, 2, replace=False)
            qs = (int(a), int(b))
        if kind.is_rotation:
            gates.append(Gate(kind, qs, slot=slot))
            slot += 1
        else:
            gates.append(Gate(kind, qs))
    return ParamCircuit(n, tuple(gates), slot, frozenset(coupling or ()))


def noise_for(n, rng, scale=0.05):
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    ro = np.empty((n, 2, 2))
    for q in range(n):
        p10, p01 = rng.uniform(0, 0.1, 2)
        ro[q] = [[1 - p10, p01], [p10, 1 - p01]]
    return NoiseModel(n, rng.uniform(0, scale / 5, n), {p: rng.uniform(0, scale) for p in pairs}, ro)


# --- circuit ---------------------------------------------------------------


def test_gate_validation():
    with pytest.raises(CircuitError):
        Gate(GateKind.CRY, (1, 1), slot=0)
    with pytest.raises(CircuitError):
        Gate(GateKind.RX, (0,))
    with pytest.raises(CircuitError):
        Gate(GateKind.CNOT, (0, 1), slot=0)
    assert Gate(GateKind.RZ, (0,), angle=-0.1).angle == pytest.approx(2 * pi - 0.1)


def test_circuit_rejects_bad_width_and_slots():
    with pytest.raises(CircuitError):
        ParamCircuit(2, (Gate(GateKind.RX, (2,), slot=0),), 1)
    with pytest.raises(CircuitError):
        ParamCircuit(2, (Gate(GateKind.RX, (0,), slot=1),), 1)
    with pytest.raises(CircuitError):
        ParamCircuit(3, (Gate(GateKind.CRX, (0, 2), slot=0),), 1, frozenset({(0, 1), (1, 2)}))


def test_circuit_json_roundtrip(tmp_path):
    c = random_circuit(np.random.default_rng(1), coupling=[(0, 1), (1, 2), (0, 2)])
    p = tmp_path / "c.json"
    c.save(p)
    assert ParamCircuit.load(p) == c
    assert json.loads(p.read_text())["n_qubits"] == 3


# --- statevector -----------------------------------------------------------


def test_cry_half_pi_on_control_one():
    c = ParamCircuit(2, (Gate(GateKind.RX, (0,), angle=pi), Gate(GateKind.CRY, (0, 1), slot=0)), 1)
    psi = simulate_noiseless(c, [pi / 2])
    amp = np.abs(psi)
    assert amp[1] == pytest.approx(np.cos(pi / 4), abs=1e-12)
    assert amp[3] == pytest.approx(np.sin(pi / 4), abs=1e-12)
    assert amp[0] < 1e-12 and amp[2] < 1e-12


def test_little_endian_qubit_order():
    c = ParamCircuit(3, (Gate(GateKind.RX, (1,), angle=pi),), 0)
    psi = simulate_noiseless(c, [])
    assert np.argmax(np.abs(psi)) == 2


def test_cnot_and_swap():
    flip0 = Gate(GateKind.RX, (0,), angle=pi)
    c = ParamCircuit(2, (flip0, Gate(GateKind.CNOT, (0, 1))), 0)
    assert np.argmax(np.abs(simulate_noiseless(c, []))) == 3
    c = ParamCircuit(2, (flip0, Gate(GateKind.SWAP, (0, 1))), 0)
    assert np.argmax(np.abs(simulate_noiseless(c, []))) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_statevector_stays_normalized(seed):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, n=3, n_gates=15)
    psi = simulate_noiseless(c, rng.uniform(0, 2 * pi, c.n_params))
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)


# --- density matrix --------------------------------------------------------


def test_depolarize_full_gives_maximally_mixed_qubit():
    psi = zero_state(2)
    rho = depolarize(np.outer(psi, psi.conj()), (0,), 1.0)
    assert measure_z_expectations(rho)[0] == pytest.approx(0.0)
    assert measure_z_expectations(rho)[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        depolarize(rho, (0,), 1.5)


def test_density_invariants_after_every_channel():
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = random_circuit(rng, n=3, n_gates=12)
        seen = []
        simulate_noisy(c, rng.uniform(0, 2 * pi, c.n_params), noise_for(3, rng, 0.2),
                       on_channel=lambda r: (check_density(r), seen.append(1)))
        assert seen


def test_zero_noise_matches_pure_state():
    rng = np.random.default_rng(2)
    c = random_circuit(rng)
    theta = rng.uniform(0, 2 * pi, c.n_params)
    psi = simulate_noiseless(c, theta)
    rho = simulate_noisy(c, theta, NoiseModel.ideal(3, [(0, 1), (0, 2), (1, 2)]))
    assert np.abs(rho - np.outer(psi, psi.conj())).max() < 1e-12


def test_missing_pair_rate_is_an_error():
    c = ParamCircuit(2, (Gate(GateKind.CRX, (0, 1), slot=0),), 1)
    with pytest.raises(NoiseError):
        simulate_noisy(c, [0.3], NoiseModel.ideal(2))


def test_readout_confusion_on_ground_state():
    ro = np.array([[[0.9, 0.2], [0.1, 0.8]]])
    nm = NoiseModel(1, [0.0], {}, ro)
    rho = np.diag([1.0, 0.0]).astype(complex)
    # P(read 0) - P(read 1) for a true 0
    assert measure_z_expectations(rho, nm)[0] == pytest.approx(0.8)


def test_noise_model_validation():
    with pytest.raises(NoiseError):
        NoiseModel(1, [0.0], {}, np.array([[[0.9, 0.2], [0.2, 0.8]]]))
    with pytest.raises(NoiseError):
        NoiseModel(1, [1.2], {}, np.eye(2)[None])


def test_gate_cost_at_levels():
    cm = GateCostModel()
    assert cm.cost(GateKind.CRY, 0.7) == (2, 2)
    assert cm.cost(GateKind.CRY, pi) == (2, 1)
    assert cm.cost(GateKind.CRY, 0.0) == (0, 0)
    assert cm.cost(GateKind.RZ, 0.0) == (0, 0)


def test_gate_at_zero_adds_no_noise():
    nm = NoiseModel(2, [0.1, 0.1], {(0, 1): 0.3}, np.tile(np.eye(2), (2, 1, 1)))
    c = ParamCircuit(2, (Gate(GateKind.RY, (0,), angle=1.0), Gate(GateKind.CRY, (0, 1), slot=0)), 1)
    psi = simulate_noiseless(c, [0.0])
    rho_clean = np.outer(psi, psi.conj())
    rho = simulate_noisy(c, [0.0], nm, rho=None)
    c0 = ParamCircuit(2, (Gate(GateKind.RY, (0,), angle=1.0),), 0)
    assert np.allclose(rho, simulate_noisy(c0, [], nm))
    assert not np.allclose(rho, rho_clean)


# --- gradients -------------------------------------------------------------


def test_shift_rules():
    assert shift_rule(GateKind.RX) == TWO_TERM
    assert shift_rule(GateKind.CRZ) == FOUR_TERM
    # each rule reproduces d/dθ <O> for a single gate on a random state
    rng = np.random.default_rng(3)
    for kind in (GateKind.RY, GateKind.CRY, GateKind.CRX):
        dim = 2 ** kind.n_qubits
        psi0 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        psi0 /= np.linalg.norm(psi0)
        obs = rng.normal(size=dim)

        def f(t):
            psi = local_matrix(kind, t) @ psi0
            return float(np.real(psi.conj() @ (obs * psi)))

        th = 0.83
        est = sum(c * f(th + s) for c, s in shift_rule(kind))
        fd = (f(th + 1e-6) - f(th - 1e-6)) / 2e-6
        assert abs(fd) > 1e-3
        assert est == pytest.approx(fd, abs=1e-7)


@pytest.mark.parametrize("noisy", [False, True])
def test_shift_gradients_match_finite_differences(noisy):
    rng = np.random.default_rng(5)
    c = random_circuit(rng, n=3, n_gates=10)
    theta = rng.uniform(0, 2 * pi, c.n_params)
    nm = noise_for(3, rng) if noisy else None
    psi = simulate_noiseless(random_circuit(rng, n=3, n_gates=4, fixed=False), rng.uniform(0, 6, 4))[None]
    init = psi[:, :, None] * psi.conj()[:, None, :] if noisy else psi
    E, dE = expectations_with_shifts(c, theta, init, (0, 2), nm)
    h = 1e-5
    for k in range(c.n_params):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        fd = (expectations_with_shifts(c, tp, init, (0, 2), nm)[0]
              - expectations_with_shifts(c, tm, init, (0, 2), nm)[0]) / (2 * h)
        assert np.abs(dE[k] - fd).max() < 1e-6


# --- routing ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_routing_preserves_the_output(seed):
    rng = np.random.default_rng(seed)
    line = [(0, 1), (1, 2), (2, 3)]
    c = random_circuit(rng, n=4, n_gates=10)
    theta = rng.uniform(0, 2 * pi, c.n_params)
    routed, final = route(c, line)
    assert all(g.pair is None or g.pair in routed.coupling for g in routed.gates)
    p_orig = np.abs(simulate_noiseless(c, theta)) ** 2
    p_routed = np.abs(simulate_noiseless(routed, theta)) ** 2
    idx = np.arange(16)
    # physical basis index of each logical basis index under the final layout
    phys = sum(((idx >> l) & 1) << final[l] for l in range(4))
    assert np.allclose(p_routed[phys], p_orig, atol=1e-12)


def test_routing_disconnected_device():
    c = random_circuit(np.random.default_rng(0), n=4)
    with pytest.raises(CircuitError):
        route(c, [(0, 1), (2, 3)])
