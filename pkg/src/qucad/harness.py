"""Multi-day noise experiments, competitor strategies, summary tables and loss-surface scans."""
from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from math import tau
from pathlib import Path

import numpy as np

from .calib import CalibrationSnapshot, build_noise_model
from .compress import CompressConfig, admm_compress
from .qcore import Gate, GateKind, NoiseModel, ParamCircuit
from .qnn import Dataset, EncodingSpec, QnnModel, TrainConfig, dataset_loss, evaluate_accuracy, train, train_test_split
from .repo import OnlineContext, Repository, add_online_entry, build_repository, match_online

log = logging.getLogger(__name__)

THRESHOLDS = (0.8, 0.7, 0.5)


class HarnessError(ValueError):
    pass


class Strategy(str, Enum):
    BASELINE = "baseline"
    NA_TRAIN_ONCE = "na-train-once"
    NA_TRAIN_EVERYDAY = "na-train-everyday"
    ONE_TIME_COMPRESSION = "one-time-compression"
    QUCAD_NO_OFFLINE = "qucad-no-offline"
    QUCAD = "qucad"
    COMPRESS_EVERYDAY = "compress-everyday"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        try:
            return cls(key)
        except ValueError:
            raise HarnessError(f"unknown strategy {name!r}; choose from {[s.value for s in cls]}") from None


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def make_splits(ds: Dataset, train_frac: float = 0.6, seed: int = 0) -> Splits:
    """Stratified train / validation / test split; the remainder is halved."""
    tr, rest = train_test_split(ds, train_frac, seed)
    val, test = train_test_split(rest, 0.5, seed + 1)
    return Splits(tr, val, test)


@dataclass
class ExperimentConfig:
    compress: CompressConfig = field(default_factory=CompressConfig)
    na_epochs: int = 10  # noise-aware training budget, matches the fine-tune budget
    K: int = 6
    A: float = 0.5
    workers: int = 1


def day_seed(seed: int, day: int) -> int:
    """Sub-seed for online day ``day`` (>= 0); ``day=-1`` is the offline phase."""
    return int(np.random.SeedSequence([seed, day + 1]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# timeline


@dataclass
class DayRecord:
    date: str
    strategy: str
    accuracy: float
    decision: str | None = None
    optimized: bool = False
    opt_count: int = 0
    wall_time: float = 0.0
    entry: int | None = None
    report: str = ""


@dataclass
class TimelineResult:
    strategy: str
    seed: int
    records: list

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.records])

    @property
    def dates(self) -> list[str]:
        return [r.date for r in self.records]

    @property
    def opt_count(self) -> int:
        return sum(r.optimized for r in self.records)

    @property
    def opt_time(self) -> float:
        return float(sum(r.wall_time for r in self.records))

    def outcome(self) -> list[tuple]:
        """Everything but wall-clock times, for reproducibility checks."""
        return [(r.date, r.strategy, r.accuracy, r.decision, r.optimized, r.opt_count, r.entry, r.report)
                for r in self.records]

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "seed": self.seed, "records": [asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "TimelineResult":
        return cls(d["strategy"], d["seed"], [DayRecord(**r) for r in d["records"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TimelineResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _check_disjoint(history, online) -> None:
    seen = {s.date for s in history}
    clash = [s.date for s in online if s.date in seen]
    if clash:
        raise HarnessError(f"offline and online snapshots overlap on {clash[:3]}")


def _evaluate_fixed(model, test, online, n, cm, workers):
    def acc(s):
        return evaluate_accuracy(model, test, build_noise_model(s, n), cm)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(acc, online))
    return [acc(s) for s in online]


def prepare_repository(strategy, model, splits: Splits, history, config: ExperimentConfig, seed: int = 0):
    """Offline repository for the QuCAD variants (not counted as online time)."""
    strategy = Strategy.parse(strategy)
    if strategy not in (Strategy.QUCAD, Strategy.QUCAD_NO_OFFLINE):
        return None
    cfg = replace(config.compress, seed=day_seed(seed, -1))
    return build_repository(model, history, splits.train, splits.val, config.K, config.A, cfg, seed=seed,
                            compress=strategy is Strategy.QUCAD)


def run_timeline(strategy, model: QnnModel, splits: Splits, history, online, config: ExperimentConfig | None = None,
                 seed: int = 0, repository: Repository | None = None) -> TimelineResult:
    """Play one strategy over the online days and record accuracy on the test split.

    ``repository`` lets the caller reuse an offline repository between runs;
    it is copied, so online additions never leak back.
    """
    strategy = Strategy.parse(strategy)
    config = config or ExperimentConfig()
    history, online = list(history), list(online)
    _check_disjoint(history, online)
    if not online:
        raise HarnessError("no online days")
    n = model.circuit.n_qubits
    cm = config.compress.cost_model
    tr, val, test = splits.train, splits.val, splits.test
    records = []
    count = 0

    def add(s, acc, optimized=False, wall=0.0, decision=None, entry=None, report=""):
        nonlocal count
        count += int(optimized)
        records.append(DayRecord(s.date, strategy.value, float(acc), decision, optimized, count, wall, entry, report))

    def na_train(s, t):
        tc = TrainConfig(epochs=config.na_epochs, batch_size=config.compress.batch_size, lr=config.compress.lr,
                         seed=day_seed(seed, t), noise=build_noise_model(s, n), cost_model=cm)
        return train(model, tr, tc)[0]

    def compress(s, t, noise_aware=True):
        cfg = replace(config.compress, seed=day_seed(seed, t), noise_aware=noise_aware)
        return admm_compress(model, tr, s, cfg)[0]

    if strategy in (Strategy.BASELINE, Strategy.NA_TRAIN_ONCE, Strategy.ONE_TIME_COMPRESSION):
        wall = 0.0
        fixed = model
        if strategy is Strategy.NA_TRAIN_ONCE:
            fixed, wall = _timed(na_train, online[0], 0)
        elif strategy is Strategy.ONE_TIME_COMPRESSION:
            fixed, wall = _timed(compress, online[0], 0, False)
        accs = _evaluate_fixed(fixed, test, online, n, cm, config.workers)
        for t, (s, a) in enumerate(zip(online, accs)):
            opt = t == 0 and strategy is not Strategy.BASELINE
            add(s, a, opt, wall if opt else 0.0)
    elif strategy in (Strategy.NA_TRAIN_EVERYDAY, Strategy.COMPRESS_EVERYDAY):
        step = na_train if strategy is Strategy.NA_TRAIN_EVERYDAY else compress
        for t, s in enumerate(online):
            m, wall = _timed(step, s, t)
            add(s, evaluate_accuracy(m, test, build_noise_model(s, n), cm), True, wall)
    else:
        repo = repository if repository is not None else prepare_repository(strategy, model, splits, history,
                                                                             config, seed)
        repo = copy.deepcopy(repo)
        if strategy is Strategy.QUCAD_NO_OFFLINE:
            repo.entries = []
        for t, s in enumerate(online):
            ctx = OnlineContext(model, tr, val, replace(config.compress, seed=day_seed(seed, t)))
            t0 = time.perf_counter()
            if not repo.entries:
                j = add_online_entry(repo, s, ctx)
                kind, report = "compress_new", ""
            else:
                dec, repo = match_online(repo, s, ctx)
                j, kind, report = dec.index, dec.kind, dec.report
            wall = time.perf_counter() - t0
            optimized = kind == "compress_new"
            acc = evaluate_accuracy(repo.entries[j].model, test, build_noise_model(s, n), cm)
            add(s, acc, optimized, wall if optimized else 0.0, kind, j, report)
            if report:
                log.warning(report)
    log.info("%s: mean accuracy %.4f, %d optimizations", strategy.value, np.mean([r.accuracy for r in records]),
             count)
    return TimelineResult(strategy.value, seed, records)


# ---------------------------------------------------------------------------
# summary


@dataclass
class SummaryRow:
    strategy: str
    mean_acc: float
    variance: float
    days_over: dict
    vs_baseline: float
    days_delta: dict
    opt_count: int
    opt_time: float


def summarize(result: TimelineResult, thresholds=THRESHOLDS, baseline: TimelineResult | None = None) -> SummaryRow:
    """Mean, population variance and strict days-over counts, with deltas against ``baseline``."""
    baseline = baseline or result
    if result.dates != baseline.dates:
        raise HarnessError("result and baseline cover different days")
    acc, base = result.accuracies, baseline.accuracies
    over = {float(x): int(np.sum(acc > x)) for x in thresholds}
    base_over = {float(x): int(np.sum(base > x)) for x in thresholds}
    return SummaryRow(result.strategy, float(acc.mean()), float(acc.var()), over,
                      float(acc.mean() - base.mean()), {x: over[x] - base_over[x] for x in over},
                      result.opt_count, result.opt_time)


def table_rows(rows) -> list[dict]:
    out = []
    for r in rows:
        d = {"strategy": r.strategy, "mean_acc": r.mean_acc, "vs_baseline": r.vs_baseline, "variance": r.variance}
        for x in r.days_over:
            d[f"days_over_{x:g}"] = r.days_over[x]
            d[f"delta_days_over_{x:g}"] = r.days_delta[x]
        d["online_optimizations"] = r.opt_count
        d["online_time_s"] = r.opt_time
        out.append(d)
    return out


def write_table_csv(path, rows) -> None:
    data = table_rows(rows)
    if not data:
        raise HarnessError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(data[0]))
        w.writeheader()
        w.writerows(data)


# ---------------------------------------------------------------------------
# loss surface


@dataclass
class SurfaceScan:
    angles: np.ndarray
    noiseless: np.ndarray
    noisy: np.ndarray | None = None
    difference: np.ndarray | None = None


def scan_loss_surface(model: QnnModel, param_i: int, param_j: int, grid_steps: int, dataset: Dataset,
                      noise: NoiseModel | None = None, cost_model=None, difference: bool = True) -> SurfaceScan:
    """Loss over a grid of (θ_i, θ_j) in [0, 2π)², other parameters held fixed.

    Grids are indexed ``[a, b]`` with θ_i = angles[a] and θ_j = angles[b]; the
    difference grid is noisy minus noiseless.
    """
    P = model.circuit.n_params
    if param_i == param_j or not (0 <= param_i < P and 0 <= param_j < P):
        raise HarnessError(f"need two distinct parameter slots in [0, {P})")
    if grid_steps < 1:
        raise HarnessError("grid_steps must be positive")
    if difference and noise is None:
        raise HarnessError("a difference grid needs a noise model")
    angles = np.arange(grid_steps) * tau / grid_steps

    def grid(nm):
        out = np.empty((grid_steps, grid_steps))
        theta = model.theta.copy()
        for a, ti in enumerate(angles):
            for b, tj in enumerate(angles):
                theta[param_i], theta[param_j] = ti, tj
                out[a, b] = dataset_loss(model.with_theta(theta), dataset, nm, cost_model)
        return out

    clean = grid(None)
    noisy = grid(noise) if noise is not None else None
    return SurfaceScan(angles, clean, noisy, noisy - clean if difference else None)


def write_grid_csv(path, grid) -> None:
    np.savetxt(path, np.asarray(grid), delimiter=",", fmt="%.10g")


def breakpoint_toy(n_samples: int = 24, tq_error: float = 0.2, seed: int = 0) -> tuple[QnnModel, Dataset, NoiseModel]:
    """Two-qubit, two-parameter classifier: RY on qubit 0 then CRY 0→1.

    Only the CRY pair is noisy, so the line θ_CRY = 0, where the gate
    compiles to nothing, carries no gate noise.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n_samples, 2))
    y = (X[:, 0] + X[:, 1] > 1).astype(int)
    ds = Dataset(X, y, 2)
    circuit = ParamCircuit(2, (Gate(GateKind.RY, (0,), slot=0), Gate(GateKind.CRY, (0, 1), slot=1)), 2,
                           frozenset({(0, 1)}))
    model = QnnModel(circuit, np.zeros(2), EncodingSpec.fit(X, 2), (0, 1))
    noise = NoiseModel(2, np.zeros(2), {(0, 1): tq_error}, np.tile(np.eye(2), (2, 1, 1)))
    return model, ds, noise


def line_means(scan: SurfaceScan, axis: int = 1) -> tuple[float, float]:
    """Mean |difference| on the θ=0 line of one parameter, and over the whole grid.

    ``axis=1`` fixes θ_j = 0 (grid column 0), ``axis=0`` fixes θ_i = 0 (row 0).
    """
    if scan.difference is None:
        raise HarnessError("scan has no difference grid")
    d = np.abs(scan.difference)
    line = d[:, 0] if axis == 1 else d[0, :]
    return float(line.mean()), float(d.mean())
