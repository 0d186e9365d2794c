"""Greedy shortest-path SWAP routing onto a restricted coupling graph."""
from __future__ import annotations

from collections import deque

from .circuit import CircuitError, Gate, GateKind, ParamCircuit, _norm_pair


def _adjacency(coupling) -> dict:
    adj: dict[int, set] = {}
    for a, b in coupling:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def _check_connected(adj: dict) -> None:
    if not adj:
        return
    start = next(iter(adj))
    seen = {start}
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in adj[u] - seen:
            seen.add(v)
            todo.append(v)
    if len(seen) != len(adj):
        raise CircuitError("coupling graph is disconnected")


def _shortest_path(adj: dict, src: int, dst: int) -> list[int]:
    prev = {src: None}
    todo = deque([src])
    while todo:
        u = todo.popleft()
        if u == dst:
            break
        for v in sorted(adj.get(u, ())):
            if v not in prev:
                prev[v] = u
                todo.append(v)
    if dst not in prev:
        raise CircuitError(f"no path between physical qubits {src} and {dst}")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def route(circuit: ParamCircuit, coupling, layout=None) -> tuple[ParamCircuit, list[int]]:
    """Map a logical circuit onto physical qubits, inserting SWAPs where needed.

    ``layout[l]`` is the initial physical qubit of logical qubit ``l``. Returns
    the routed circuit and the final layout after all inserted SWAPs.
    """
    coupling = frozenset(_norm_pair(p) for p in coupling)
    adj = _adjacency(coupling)
    _check_connected(adj)
    n_phys = max([q + 1 for p in coupling for q in p] + [circuit.n_qubits])
    layout = list(range(circuit.n_qubits)) if layout is None else [int(q) for q in layout]
    if len(layout) != circuit.n_qubits or len(set(layout)) != len(layout):
        raise CircuitError("layout must be an injective map over every logical qubit")
    if any(q < 0 or q >= n_phys for q in layout):
        raise CircuitError("layout points outside the device")
    l2p = list(layout)
    p2l = {p: l for l, p in enumerate(l2p)}

    out = []
    for g in circuit.gates:
        if len(g.qubits) == 2:
            a, b = (l2p[q] for q in g.qubits)
            if _norm_pair((a, b)) not in coupling:
                path = _shortest_path(adj, a, b)
                # walk the first qubit towards the second, one SWAP per hop
                for u, v in zip(path[:-2], path[1:-1]):
                    out.append(Gate(GateKind.SWAP, (u, v)))
                    lu, lv = p2l.get(u), p2l.get(v)
                    if lu is not None:
                        l2p[lu] = v
                    if lv is not None:
                        l2p[lv] = u
                    p2l = {p: l for l, p in enumerate(l2p)}
        out.append(Gate(g.kind, tuple(l2p[q] for q in g.qubits), g.slot, g.angle))
    routed = ParamCircuit(n_phys, tuple(out), circuit.n_params, coupling)
    return routed, l2p


def route_circuit(circuit: ParamCircuit, coupling, layout=None) -> ParamCircuit:
    return route(circuit, coupling, layout)[0]
