"""Noise-aware ADMM compression of QNN parameters onto compression levels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import pi, tau

import numpy as np

from .calib import CalibrationSnapshot, build_noise_model
from .qcore import GateCostModel, NoiseModel, ParamCircuit, circular_distance
from .qcore.noise import LEVEL_TOL
from .qnn import Dataset, QnnModel, TrainConfig, train

log = logging.getLogger(__name__)

__all__ = [
    "CompressionTable", "CompressConfig", "CompressionState", "GateCostModel", "nearest_level", "level_table",
    "priority_table", "resolve_threshold", "make_mask", "project_Z", "admm_compress", "finetune", "compressed_cost",
]

TIE_TOL = 1e-12


@dataclass(frozen=True)
class CompressionTable:
    levels: tuple = (0.0, pi / 2, pi, 3 * pi / 2)

    def __post_init__(self):
        lv = tuple(sorted(float(x) for x in self.levels))
        if not lv:
            raise ValueError("compression table is empty")
        if any(not 0 <= x < tau for x in lv):
            raise ValueError("compression levels must lie in [0, 2π)")
        if len(set(lv)) != len(lv):
            raise ValueError("compression levels must be distinct")
        object.__setattr__(self, "levels", lv)


def nearest_level(theta: float, table: CompressionTable = CompressionTable()) -> tuple[float, float]:
    """Closest level under circular distance; ties go to the smaller level."""
    best, best_d = None, np.inf
    for lv in table.levels:
        d = circular_distance(theta, lv)
        if d < best_d - TIE_TOL:
            best, best_d = lv, d
    return best, best_d


def level_table(theta, table: CompressionTable = CompressionTable()) -> tuple[np.ndarray, np.ndarray]:
    """Per-parameter nearest level and distance."""
    pairs = [nearest_level(t, table) for t in np.asarray(theta, dtype=float)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def _gate_noise(circuit: ParamCircuit, calib) -> np.ndarray:
    noise = calib if isinstance(calib, NoiseModel) else build_noise_model(calib, circuit.n_qubits)
    return np.array([noise.gate_error(g) for g in circuit.param_gates])


def priority_table(circuit: ParamCircuit, dist, calib: CalibrationSnapshot | NoiseModel | None,
                   noise_aware: bool = True) -> np.ndarray:
    """Priority of each parameterized gate to be compressed: gate error over distance.

    With ``noise_aware=False`` (or no calibration) the error term is dropped,
    leaving 1/d. Gates already on a level get +inf.
    """
    dist = np.asarray(dist, dtype=float)
    num = _gate_noise(circuit, calib) if noise_aware and calib is not None else np.ones_like(dist)
    with np.errstate(divide="ignore"):
        p = num / dist
    p[dist < 1e-12] = np.inf
    return p


def resolve_threshold(P, fraction: float) -> float:
    """Absolute threshold that masks a ``fraction`` of entries (highest priorities first).

    A tie straddling the cut cannot be split, so the tied entries stay
    unmasked (infinite ties are masked: those gates already sit on a level).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("masked fraction must lie in [0, 1]")
    P = np.sort(np.asarray(P, dtype=float))
    n = len(P)
    m = int(round(fraction * n))
    if m >= n:
        return 0.0
    hi = P[n - m] if m > 0 else np.inf
    lo = P[n - m - 1]
    if hi == lo:
        return np.nextafter(lo, np.inf) if np.isfinite(lo) else np.inf
    if np.isinf(hi):
        return np.nextafter(lo, np.inf)
    return 0.5 * (lo + hi)


def make_mask(P, threshold: float) -> np.ndarray:
    """1 where priority reaches the threshold, 0 where it falls below."""
    return (np.asarray(P, dtype=float) >= threshold).astype(int)


def project_Z(theta_plus_u, mask, t_admm) -> np.ndarray:
    """Minimizer of indicator + quadratic coupling, componentwise."""
    v = np.asarray(theta_plus_u, dtype=float)
    return np.where(np.asarray(mask).astype(bool), np.asarray(t_admm, dtype=float), v)


def wrap(x):
    """Signed angle difference in [-π, π)."""
    return (np.asarray(x, dtype=float) + pi) % tau - pi


@dataclass
class CompressConfig:
    table: CompressionTable = field(default_factory=CompressionTable)
    rho: float = 0.05
    rounds: int = 10
    inner_epochs: int = 2
    threshold_policy: str = "fraction"
    threshold: float = 0.5
    finetune_epochs: int = 10
    batch_size: int = 10
    lr: float = 0.05
    noise_aware: bool = True
    cost_model: GateCostModel = field(default_factory=GateCostModel)
    seed: int = 0
    rho_growth: float = 1.5  # ρ is multiplied by this after every round

    def validate(self) -> None:
        if self.rounds < 1 or self.rho <= 0 or self.rho_growth < 1:
            raise ValueError("need rounds >= 1, rho > 0 and rho_growth >= 1")
        if self.threshold_policy not in ("fraction", "absolute"):
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")
        if self.threshold_policy == "fraction" and not 0 <= self.threshold <= 1:
            raise ValueError("masked fraction must lie in [0, 1]")
        if self.threshold_policy == "absolute" and not (self.threshold >= 0 and not np.isnan(self.threshold)):
            raise ValueError("absolute threshold must be >= 0")

    def to_dict(self) -> dict:
        return {
            "table": list(self.table.levels), "rho": self.rho, "rounds": self.rounds,
            "inner_epochs": self.inner_epochs, "threshold_policy": self.threshold_policy,
            "threshold": self.threshold, "finetune_epochs": self.finetune_epochs,
            "batch_size": self.batch_size, "lr": self.lr, "noise_aware": self.noise_aware, "seed": self.seed,
            "rho_growth": self.rho_growth,
        }


@dataclass
class CompressionState:
    t_admm: np.ndarray
    dist: np.ndarray
    priority: np.ndarray
    mask: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    rho: float
    round: int = 0


def _mask_step(model: QnnModel, calib, config: CompressConfig):
    t_admm, dist = level_table(model.theta, config.table)
    P = priority_table(model.circuit, dist, calib, config.noise_aware)
    thr = resolve_threshold(P, config.threshold) if config.threshold_policy == "fraction" else config.threshold
    return t_admm, dist, P, make_mask(P, thr)


def admm_compress(model: QnnModel, dataset: Dataset, snapshot: CalibrationSnapshot | None,
                  config: CompressConfig = None, history: list | None = None) -> tuple[QnnModel, np.ndarray]:
    """Compress ``model`` for the device state in ``snapshot``.

    Each round rebuilds the level table, priorities and mask from the current
    parameters, takes a few epochs of noiseless training on the loss plus the
    ADMM proximal term, then updates Z by projection and U by the residual.
    A parameter whose mask bit or assigned level changed between rounds
    restarts with a fresh dual, since its old U points at a stale target.
    ρ grows by ``rho_growth`` per round. Masked parameters are finally pinned
    to their levels and the rest are fine-tuned under the snapshot's noise
    model. ``history`` collects the per-round :class:`CompressionState`.
    """
    config = config or CompressConfig()
    config.validate()
    if len(dataset) == 0:
        raise ValueError("cannot compress against an empty dataset")
    rho = config.rho
    Z = model.theta.copy()
    U = np.zeros_like(Z)
    cur = model
    mask = np.zeros(model.circuit.n_params, dtype=int)
    t_admm = Z.copy()
    for r in range(config.rounds):
        prev_mask, prev_t = mask, t_admm
        t_admm, dist, P, mask = _mask_step(cur, snapshot, config)
        if r > 0:
            moved = (mask != prev_mask) | (t_admm != prev_t)
            U[moved] = 0.0
            Z[moved] = np.where(mask[moved] == 1, t_admm[moved], cur.theta[moved])
        target = Z - U

        def penalty(theta, target=target, rho=rho):
            diff = wrap(theta - target)
            return 0.5 * rho * float(diff @ diff), rho * diff

        tc = TrainConfig(epochs=config.inner_epochs, batch_size=config.batch_size, lr=config.lr,
                         seed=config.seed + 7919 * r, cost_model=config.cost_model)
        cur, _ = train(cur, dataset, tc, penalty=penalty)
        Z = np.mod(project_Z(cur.theta + U, mask, t_admm), tau)
        U = U + wrap(cur.theta - Z)
        if history is not None:
            history.append(CompressionState(t_admm, dist, P, mask.copy(), Z.copy(), U.copy(), rho, r + 1))
        log.debug("admm round %d: %d masked, residual %.3g", r + 1, mask.sum(), np.abs(wrap(cur.theta - Z)).max())
        rho *= config.rho_growth

    theta = cur.theta.copy()
    theta[mask == 1] = t_admm[mask == 1]
    cur = cur.with_theta(theta)
    noise = build_noise_model(snapshot, model.circuit.n_qubits) if snapshot is not None else None
    cur = finetune(cur, mask, dataset, noise, config.finetune_epochs, config)
    return cur, mask


def finetune(model: QnnModel, mask, dataset: Dataset, noise: NoiseModel | None, epochs: int,
             config: CompressConfig | None = None) -> QnnModel:
    """Noise-injection training of the unmasked parameters only."""
    config = config or CompressConfig()
    tc = TrainConfig(epochs=epochs, batch_size=config.batch_size, lr=config.lr, seed=config.seed + 1,
                     noise=noise, cost_model=config.cost_model)
    out, _ = train(model, dataset, tc, freeze=np.asarray(mask).astype(bool))
    return out


def compressed_cost(circuit: ParamCircuit, theta, mask=None, table: CompressionTable = CompressionTable(),
                    cost_model: GateCostModel | None = None) -> tuple[int, int]:
    """Total (1q, 2q) basis-gate occurrences of the circuit at ``theta``.

    Gates whose angle sits on a table level use that level's cost entry.
    """
    cost_model = cost_model or GateCostModel()
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_params,) or (mask is not None and len(mask) != circuit.n_params):
        raise ValueError("parameter/mask length does not match the circuit")
    n1 = n2 = 0
    for g in circuit.gates:
        ang = theta[g.slot] if g.slot is not None else g.angle
        if ang is None:
            c = cost_model.cost(g.kind)
        else:
            lv, d = nearest_level(ang, table)
            c = cost_model.cost(g.kind, lv) if d <= LEVEL_TOL else cost_model.generic[g.kind]
        n1 += c[0]
        n2 += c[1]
    return n1, n2
