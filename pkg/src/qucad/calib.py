"""Device calibration snapshots: I/O, vectorization, noise models, synthetic drift."""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .qcore import NoiseModel
from .qcore.circuit import _norm_pair

RATE_MIN, RATE_MAX = 1e-5, 0.5
DEFAULT_COUPLING = ((0, 1), (1, 2), (2, 3), (0, 3))


class CalibrationError(ValueError):
    pass


def _pair_key(p) -> str:
    return f"{p[0]}-{p[1]}"


def _parse_pair(s) -> tuple[int, int]:
    if isinstance(s, str):
        a, b = s.split("-")
        return _norm_pair((a, b))
    return _norm_pair(s)


@dataclass(frozen=True)
class CalibrationSnapshot:
    """One day of calibration data: per-qubit and per-pair error rates.

    ``ro_error[q]`` is ``(p(1|0), p(0|1))``.
    """

    date: str
    sq_error: dict
    tq_error: dict
    ro_error: dict

    def __post_init__(self):
        object.__setattr__(self, "sq_error", {int(q): float(r) for q, r in self.sq_error.items()})
        object.__setattr__(self, "tq_error", {_parse_pair(p): float(r) for p, r in self.tq_error.items()})
        object.__setattr__(self, "ro_error", {int(q): (float(r[0]), float(r[1])) for q, r in self.ro_error.items()})
        for name, vals in (("sq_error", self.sq_error), ("tq_error", self.tq_error)):
            for k, r in vals.items():
                if not 0.0 <= r <= 1.0:
                    raise CalibrationError(f"day {self.date}: {name}[{k}] = {r} outside [0, 1]")
        for q, pr in self.ro_error.items():
            for r in pr:
                if not 0.0 <= r <= 1.0:
                    raise CalibrationError(f"day {self.date}: ro_error[{q}] = {pr} outside [0, 1]")
        if set(self.ro_error) != set(self.sq_error):
            raise CalibrationError(f"day {self.date}: sq_error and ro_error cover different qubits")
        qubits = set(self.sq_error)
        for p in self.tq_error:
            if not set(p) <= qubits:
                raise CalibrationError(f"day {self.date}: pair {p} uses an unknown qubit")
        _require_connected(qubits, self.tq_error, self.date)

    @property
    def qubits(self) -> list[int]:
        return sorted(self.sq_error)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.tq_error)

    @property
    def n_qubits(self) -> int:
        return max(self.sq_error) + 1

    def to_dict(self) -> dict:
        return {
            "date": self.date,
            "sq_error": {str(q): r for q, r in sorted(self.sq_error.items())},
            "tq_error": {_pair_key(p): r for p, r in sorted(self.tq_error.items())},
            "ro_error": {str(q): list(r) for q, r in sorted(self.ro_error.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSnapshot":
        try:
            return cls(str(d["date"]), d["sq_error"], d["tq_error"], d["ro_error"])
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, CalibrationError):
                raise
            raise CalibrationError(f"day {d.get('date', '?')}: malformed field ({e})") from None

    def with_rates(self, **changes) -> "CalibrationSnapshot":
        d = {"date": self.date, "sq_error": self.sq_error, "tq_error": self.tq_error, "ro_error": self.ro_error}
        d.update(changes)
        return CalibrationSnapshot(**d)


def _require_connected(qubits, pairs, date) -> None:
    if len(qubits) <= 1:
        return
    adj = {q: set() for q in qubits}
    for a, b in pairs:
        adj[a].add(b)
        adj[b].add(a)
    start = min(qubits)
    seen, todo = {start}, [start]
    while todo:
        for v in adj[todo.pop()] - seen:
            seen.add(v)
            todo.append(v)
    if seen != set(qubits):
        raise CalibrationError(f"day {date}: coupling graph is disconnected")


def zero_snapshot(n_qubits: int = 4, coupling=DEFAULT_COUPLING, date: str = "zero") -> CalibrationSnapshot:
    return CalibrationSnapshot(
        date,
        {q: 0.0 for q in range(n_qubits)},
        {_norm_pair(p): 0.0 for p in coupling},
        {q: (0.0, 0.0) for q in range(n_qubits)},
    )


# ---------------------------------------------------------------------------
# vectorization


def canonical_schema(qubits, pairs) -> tuple:
    qubits = sorted(int(q) for q in qubits)
    pairs = sorted(_norm_pair(p) for p in pairs)
    return (
        tuple(("sq", q) for q in qubits)
        + tuple(("tq", p) for p in pairs)
        + tuple(("ro10", q) for q in qubits)
        + tuple(("ro01", q) for q in qubits)
    )


def schema_of(snapshot: CalibrationSnapshot) -> tuple:
    return canonical_schema(snapshot.qubits, snapshot.pairs)


def label_name(label) -> str:
    kind, key = label
    return f"{kind}:{_pair_key(key)}" if kind == "tq" else f"{kind}:{key}"


@dataclass(frozen=True)
class CalibrationVector:
    values: np.ndarray
    schema: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.schema),):
            raise CalibrationError("vector length does not match its schema")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.schema)


def lookup(snapshot: CalibrationSnapshot, label) -> float:
    kind, key = label
    try:
        if kind == "sq":
            return snapshot.sq_error[key]
        if kind == "tq":
            return snapshot.tq_error[key]
        if kind == "ro10":
            return snapshot.ro_error[key][0]
        if kind == "ro01":
            return snapshot.ro_error[key][1]
    except KeyError:
        raise CalibrationError(f"day {snapshot.date}: missing {label_name(label)}") from None
    raise CalibrationError(f"unknown field kind {kind!r}")


def vectorize(snapshot: CalibrationSnapshot, schema=None) -> CalibrationVector:
    schema = schema_of(snapshot) if schema is None else tuple(schema)
    return CalibrationVector(np.array([lookup(snapshot, lab) for lab in schema]), schema)


def calibration_matrix(snapshots, schema=None) -> tuple[np.ndarray, tuple]:
    schema = schema_of(snapshots[0]) if schema is None else tuple(schema)
    return np.array([vectorize(s, schema).values for s in snapshots]), schema


def build_noise_model(snapshot: CalibrationSnapshot, n_qubits: int | None = None) -> NoiseModel:
    n = snapshot.n_qubits if n_qubits is None else n_qubits
    sq = np.zeros(n)
    ro = np.tile(np.eye(2), (n, 1, 1))
    for q, r in snapshot.sq_error.items():
        sq[q] = r
    for q, (p10, p01) in snapshot.ro_error.items():
        ro[q] = [[1.0 - p10, p01], [p10, 1.0 - p01]]
    return NoiseModel(n, sq, dict(snapshot.tq_error), ro)


# ---------------------------------------------------------------------------
# file formats


def parse_calibrations(path) -> list[CalibrationSnapshot]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CalibrationError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(raw, dict) or "days" not in raw:
        raise CalibrationError(f"{path}: expected an object with a 'days' list")
    coupling = {_parse_pair(p) for p in raw.get("coupling", [])}
    out = []
    for d in raw["days"]:
        snap = CalibrationSnapshot.from_dict(d)
        if coupling and set(snap.tq_error) != coupling:
            raise CalibrationError(f"day {snap.date}: tq_error pairs differ from the file coupling")
        if out and (snap.qubits != out[0].qubits or snap.pairs != out[0].pairs):
            raise CalibrationError(f"day {snap.date}: qubit/pair set differs from day {out[0].date}")
        out.append(snap)
    return out


def write_calibrations(path, snapshots) -> None:
    coupling = snapshots[0].pairs if snapshots else []
    doc = {"coupling": [list(p) for p in coupling], "days": [s.to_dict() for s in snapshots]}
    Path(path).write_text(json.dumps(doc, indent=1))


def export_csv(path, snapshots, schema=None) -> None:
    mat, schema = calibration_matrix(snapshots, schema)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date"] + [label_name(lab) for lab in schema])
        for s, row in zip(snapshots, mat):
            w.writerow([s.date] + [repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# synthetic drift


@dataclass
class DriftConfig:
    """Seeded generator settings for a fluctuating calibration history.

    Base rates are jittered per field by a seeded log-normal factor with
    spread ``heterogeneity``. Every rate follows a mean-reverting random walk around its base value
    with per-day step ``step * base``. A spike lifts one target field by a
    magnitude drawn from ``spike_mag`` for a duration drawn from
    ``spike_days``; a newly started spike replaces the running one.
    """

    n_days: int = 389
    n_qubits: int = 4
    coupling: tuple = DEFAULT_COUPLING
    base_sq: float = 0.004
    base_tq: float = 0.03
    base_ro10: float = 0.02
    base_ro01: float = 0.05
    base_overrides: dict = field(default_factory=dict)
    heterogeneity: float = 0.0
    step: float = 0.1
    reversion: float = 0.1
    spike_prob: float = 0.08
    spike_mag: tuple = (0.05, 0.15)
    spike_days: tuple = (3, 12)
    spike_targets: tuple | None = None
    seed: int = 0
    start_date: str = "2021-08-10"

    def validate(self) -> None:
        if self.n_days < 0 or self.n_qubits < 1:
            raise CalibrationError("n_days must be >= 0 and n_qubits >= 1")
        if self.heterogeneity < 0:
            raise CalibrationError("heterogeneity must be >= 0")
        if self.step < 0 or not 0 <= self.reversion <= 1:
            raise CalibrationError("step must be >= 0 and reversion in [0, 1]")
        if not 0 <= self.spike_prob <= 1:
            raise CalibrationError("spike_prob must lie in [0, 1]")
        lo, hi = self.spike_mag
        if lo < 0 or hi < lo:
            raise CalibrationError("spike_mag must be an ordered non-negative range")
        dlo, dhi = self.spike_days
        if dlo < 1 or dhi < dlo:
            raise CalibrationError("spike_days must be an ordered range starting at >= 1")
        for b in (self.base_sq, self.base_tq, self.base_ro10, self.base_ro01, *self.base_overrides.values()):
            if not 0 <= b <= 1:
                raise CalibrationError("base rates must lie in [0, 1]")

    def schema(self) -> tuple:
        return canonical_schema(range(self.n_qubits), self.coupling)

    def base_vector(self) -> np.ndarray:
        defaults = {"sq": self.base_sq, "tq": self.base_tq, "ro10": self.base_ro10, "ro01": self.base_ro01}
        overrides = {_label_from_name(k) if isinstance(k, str) else k: v for k, v in self.base_overrides.items()}
        return np.array([overrides.get(lab, defaults[lab[0]]) for lab in self.schema()])


def _label_from_name(name: str):
    kind, key = name.split(":")
    return (kind, _parse_pair(key)) if kind == "tq" else (kind, int(key))


def snapshot_from_vector(values, schema, date: str) -> CalibrationSnapshot:
    sq, tq, ro10, ro01 = {}, {}, {}, {}
    for (kind, key), v in zip(schema, values):
        {"sq": sq, "tq": tq, "ro10": ro10, "ro01": ro01}[kind][key] = float(v)
    return CalibrationSnapshot(date, sq, tq, {q: (ro10[q], ro01[q]) for q in sq})


def synth_timeseries(config: DriftConfig) -> list[CalibrationSnapshot]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    schema = config.schema()
    base = config.base_vector()
    if config.heterogeneity > 0:
        base = base * np.exp(config.heterogeneity * rng.standard_normal(len(base)))
    base = np.clip(base, RATE_MIN, RATE_MAX)
    if config.spike_targets is None:
        targets = [i for i, lab in enumerate(schema) if lab[0] in ("sq", "tq")]
    else:
        wanted = {_label_from_name(t) if isinstance(t, str) else (t[0], _parse_pair(t[1]) if t[0] == "tq" else t[1])
                  for t in config.spike_targets}
        targets = [i for i, lab in enumerate(schema) if lab in wanted]
        if not targets:
            raise CalibrationError("spike_targets matches no schema field")
    start = dt.date.fromisoformat(config.start_date)

    walk = base.copy()
    spike = None  # (field index, magnitude, days left)
    out = []
    for t in range(config.n_days):
        if t > 0:
            noise = rng.standard_normal(len(base))
            walk = np.clip(walk + config.step * base * noise + config.reversion * (base - walk), RATE_MIN, RATE_MAX)
        if rng.random() < config.spike_prob:
            idx = targets[rng.integers(len(targets))]
            mag = rng.uniform(*config.spike_mag)
            spike = (idx, mag, int(rng.integers(config.spike_days[0], config.spike_days[1] + 1)))
        day = walk.copy()
        if spike is not None:
            idx, mag, left = spike
            day[idx] = min(day[idx] + mag, RATE_MAX)
            spike = (idx, mag, left - 1) if left > 1 else None
        out.append(snapshot_from_vector(day, schema, (start + dt.timedelta(days=t)).isoformat()))
    return out
