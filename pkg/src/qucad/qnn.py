"""QNN assembly, forward pass, parameter-shift gradients, and training."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from math import pi, tau
from pathlib import Path

import numpy as np

from .qcore import CircuitError, Gate, GateCostModel, GateKind, NoiseModel, ParamCircuit, route
from .qcore.sim import _twirl, expectations_with_shifts, rotation_matrix

log = logging.getLogger(__name__)

ENCODING_AXES = ("Y", "Z", "X")


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int)
        if len(self.X) != len(self.y):
            raise ValueError("feature and label counts differ")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


def load_csv(path, header: bool = False, n_classes: int | None = None) -> Dataset:
    """Feature columns followed by an integer label column."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if header:
        rows = rows[1:]
    data = np.array([[float(v) for v in r] for r in rows])
    y = data[:, -1].astype(int)
    return Dataset(data[:, :-1], y, n_classes or int(y.max()) + 1)


def iris() -> Dataset:
    with resources.files("qucad.data").joinpath("iris.csv").open() as f:
        rows = list(csv.reader(f))[1:]
    data = np.array([[float(v) for v in r] for r in rows])
    return Dataset(data[:, :-1], data[:, -1].astype(int), 3)


def train_test_split(ds: Dataset, train_frac: float = 2 / 3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified seeded split."""
    rng = np.random.default_rng(seed)
    tr, te = [], []
    for c in range(ds.n_classes):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        k = int(round(train_frac * len(idx)))
        tr.extend(idx[:k])
        te.extend(idx[k:])
    return ds.subset(np.sort(tr)), ds.subset(np.sort(te))


# ---------------------------------------------------------------------------
# encoding


@dataclass
class EncodingSpec:
    """Angle encoding: feature f drives a rotation on qubit ``f % n`` in layer ``f // n``.

    Layers cycle through RY, RZ, RX. Features are min-max scaled to [0, π]
    with bounds fitted on training data.
    """

    n_qubits: int
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @classmethod
    def fit(cls, X, n_qubits: int) -> "EncodingSpec":
        X = np.atleast_2d(X)
        return cls(n_qubits, X.min(axis=0), X.max(axis=0))

    @property
    def n_features(self) -> int:
        return len(self.lo)

    def assignment(self, f: int) -> tuple[int, str]:
        return f % self.n_qubits, ENCODING_AXES[(f // self.n_qubits) % len(ENCODING_AXES)]

    def angles(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return np.clip((X - self.lo) / span, 0.0, 1.0) * pi

    def gates(self, x) -> list[Gate]:
        """Fixed-angle encoding gates for one sample."""
        ang = self.angles(x)[0]
        return [Gate(GateKind("R" + axis), (q,), angle=a) for f, a in enumerate(ang) for q, axis in [self.assignment(f)]]

    def states(self, X) -> np.ndarray:
        """Encoded product states, shape (B, 2^n)."""
        ang = self.angles(X)
        B, n = len(ang), self.n_qubits
        single = np.zeros((B, n, 2), dtype=complex)
        single[:, :, 0] = 1.0
        for f in range(self.n_features):
            q, axis = self.assignment(f)
            mats = np.stack([rotation_matrix(axis, a) for a in ang[:, f]])
            single[:, q] = np.einsum("bij,bj->bi", mats, single[:, q])
        psi = np.ones((B, 1), dtype=complex)
        for q in range(n - 1, -1, -1):
            # most significant qubit first in the Kronecker product
            psi = (psi[:, :, None] * single[:, q, None, :]).reshape(B, -1)
        return psi

    def densities(self, X, noise: NoiseModel, cost_model: GateCostModel) -> np.ndarray:
        """Encoded inputs with the encoding gates' own depolarizing noise.

        Single-qubit depolarizing channels commute with rotations on the same
        qubit, so every encoding channel is applied once after the product state.
        """
        ang = self.angles(X)
        psi = self.states(X)
        rho = psi[:, :, None] * psi.conj()[:, None, :]
        keep = np.ones((len(ang), self.n_qubits))
        for f in range(self.n_features):
            q, axis = self.assignment(f)
            kind = GateKind("R" + axis)
            n1 = np.array([cost_model.cost(kind, a)[0] for a in ang[:, f]])
            keep[:, q] *= (1.0 - noise.sq[q]) ** n1
        for q in range(self.n_qubits):
            p = 1.0 - keep[:, q]
            if np.any(p > 0):
                rho = (1.0 - p)[:, None, None] * rho + p[:, None, None] * _twirl(rho, q, self.n_qubits)
        return rho

    def to_dict(self) -> dict:
        return {"strategy": "angle", "n_qubits": self.n_qubits, "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingSpec":
        return cls(d["n_qubits"], d["lo"], d["hi"])


# ---------------------------------------------------------------------------
# model


def ring_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def build_vqc(n_qubits: int, n_blocks: int, coupling=None) -> ParamCircuit:
    """Stacked VQC blocks: RY CRY RY RX CRX RX RZ CRZ RZ CRZ, controls in a ring."""
    if n_qubits < 2:
        raise CircuitError("the ansatz needs at least two qubits")
    gates = []
    slot = 0
    layers = ["RY", "CRY", "RY", "RX", "CRX", "RX", "RZ", "CRZ", "RZ", "CRZ"]
    for _ in range(n_blocks):
        for name in layers:
            kind = GateKind(name)
            for q in range(n_qubits):
                qubits = (q,) if kind.n_qubits == 1 else ring_pairs(n_qubits)[q]
                gates.append(Gate(kind, qubits, slot=slot))
                slot += 1
    coupling = ring_pairs(n_qubits) if coupling is None else coupling
    return ParamCircuit(n_qubits, tuple(gates), slot, frozenset(coupling))


@dataclass
class QnnModel:
    circuit: ParamCircuit
    theta: np.ndarray
    encoding: EncodingSpec
    readout: tuple

    def __post_init__(self):
        theta = np.mod(np.asarray(self.theta, dtype=float), tau)
        theta[theta >= tau] = 0.0
        self.theta = theta
        self.readout = tuple(int(q) for q in self.readout)
        if self.theta.shape != (self.circuit.n_params,):
            raise CircuitError(f"theta has shape {self.theta.shape}, circuit wants {self.circuit.n_params}")
        if len(set(self.readout)) != len(self.readout):
            raise CircuitError("readout qubits must be distinct")
        if any(q >= self.circuit.n_qubits for q in self.readout):
            raise CircuitError("readout qubit outside the circuit")

    @property
    def n_classes(self) -> int:
        return len(self.readout)

    def with_theta(self, theta) -> "QnnModel":
        return replace(self, theta=np.array(theta, dtype=float))

    def to_dict(self) -> dict:
        d = self.circuit.to_dict()
        d.update(theta=self.theta.tolist(), readout=list(self.readout), encoding=self.encoding.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QnnModel":
        return cls(ParamCircuit.from_dict(d), d["theta"], EncodingSpec.from_dict(d["encoding"]), d["readout"])

    def save(self, path, **extra) -> None:
        d = self.to_dict()
        d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1))

    @classmethod
    def load(cls, path) -> "QnnModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_model(train: Dataset, n_qubits: int = 4, n_blocks: int = 3, coupling=None, seed: int = 0) -> QnnModel:
    """Random-initialized model routed onto ``coupling`` with the identity initial layout.

    Encoding rotations sit on physical qubits 0..n-1; readout follows each
    logical readout qubit to its final physical position.
    """
    circuit = build_vqc(n_qubits, n_blocks, ring_pairs(n_qubits))
    final = list(range(n_qubits))
    if coupling is not None:
        circuit, final = route(circuit, coupling)
    theta = np.random.default_rng(seed).uniform(0, tau, circuit.n_params)
    enc = EncodingSpec.fit(train.X, circuit.n_qubits)
    return QnnModel(circuit, theta, enc, tuple(final[q] for q in range(train.n_classes)))


# ---------------------------------------------------------------------------
# forward / loss / gradient


def _init(model: QnnModel, X, noise, cost_model):
    if noise is None:
        return model.encoding.states(X)
    return model.encoding.densities(X, noise, cost_model)


def forward_batch(model: QnnModel, X, noise: NoiseModel | None = None, cost_model=None) -> np.ndarray:
    """Logits (<Z> on readout qubits) for a batch of feature rows."""
    cost_model = cost_model or GateCostModel()
    E, _ = expectations_with_shifts(model.circuit, model.theta, _init(model, X, noise, cost_model),
                                    model.readout, noise, cost_model, slots=())
    return E


def forward(model: QnnModel, features, noise: NoiseModel | None = None, cost_model=None) -> np.ndarray:
    return forward_batch(model, np.atleast_2d(features), noise, cost_model)[0]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss(logits, label) -> float:
    """Softmax cross-entropy."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[int(label)])


def batch_loss(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean([loss(z, t) for z, t in zip(logits, y)]))


def grad_parameter_shift(model: QnnModel, X, y, noise: NoiseModel | None = None, freeze=None,
                         cost_model=None) -> tuple[np.ndarray, float]:
    """Mean cross-entropy gradient over a batch, and the batch loss.

    Entries with ``freeze[i]`` set are reported as exactly 0 and never evaluated.
    """
    cost_model = cost_model or GateCostModel()
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=int)
    slots = None
    if freeze is not None:
        slots = np.flatnonzero(~np.asarray(freeze, dtype=bool))
    E, dE = expectations_with_shifts(model.circuit, model.theta, _init(model, X, noise, cost_model),
                                     model.readout, noise, cost_model, slots=slots)
    dl = softmax(E)
    dl[np.arange(len(y)), y] -= 1.0
    grad = np.einsum("pbk,bk->p", dE, dl) / len(y)
    if freeze is not None:
        grad[np.asarray(freeze, dtype=bool)] = 0.0
    return grad, batch_loss(E, y)


def predict(model: QnnModel, X, noise: NoiseModel | None = None, cost_model=None, chunk: int = 256) -> np.ndarray:
    X = np.atleast_2d(X)
    out = [forward_batch(model, X[i:i + chunk], noise, cost_model) for i in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def evaluate_accuracy(model: QnnModel, dataset: Dataset, noise: NoiseModel | None = None, cost_model=None) -> float:
    if len(dataset) == 0:
        return 0.0
    logits = predict(model, dataset.X, noise, cost_model)
    # np.argmax already breaks ties toward the lowest index
    return float(np.mean(np.argmax(logits, axis=1) == dataset.y))


def dataset_loss(model: QnnModel, dataset: Dataset, noise: NoiseModel | None = None, cost_model=None) -> float:
    return batch_loss(predict(model, dataset.X, noise, cost_model), dataset.y)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    noise: NoiseModel | None = None
    cost_model: GateCostModel = field(default_factory=GateCostModel)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid training configuration")


def train(model: QnnModel, dataset: Dataset, config: TrainConfig, val: Dataset | None = None, freeze=None,
          penalty=None) -> tuple[QnnModel, list[float]]:
    """Minibatch gradient descent with momentum.

    Returns the parameters with the lowest selection loss (on ``val`` when
    given, else on the training set) and the per-epoch selection-loss trace,
    whose first entry is the starting loss. ``penalty(theta) -> (value, grad)``
    adds an extra differentiable term to the objective.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    sel = val if val is not None else dataset
    noise, cm = config.noise, config.cost_model
    frozen = None if freeze is None else np.asarray(freeze, dtype=bool)

    def objective(m):
        v = dataset_loss(m, sel, noise, cm)
        return v + (penalty(m.theta)[0] if penalty is not None else 0.0)

    best = model
    best_loss = objective(model)
    trace = [best_loss]
    if config.lr == 0 or config.epochs == 0 or (frozen is not None and frozen.all()):
        return model, trace

    cur = model
    velocity = np.zeros_like(model.theta)
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            g, _ = grad_parameter_shift(cur, dataset.X[idx], dataset.y[idx], noise, frozen, cm)
            if penalty is not None:
                g = g + penalty(cur.theta)[1]
                if frozen is not None:
                    g[frozen] = 0.0
            velocity = config.momentum * velocity - config.lr * g
            theta = cur.theta + velocity
            if frozen is not None:
                theta[frozen] = model.theta[frozen]
            cur = cur.with_theta(theta)
        value = objective(cur)
        trace.append(value)
        log.debug("epoch %d loss %.4f", epoch, value)
        if value < best_loss:
            best, best_loss = cur, value
    if frozen is not None:
        theta = best.theta.copy()
        theta[frozen] = model.theta[frozen]
        best = best.with_theta(theta)
    return best, trace
