"""End-to-end acceptance checks, one test per criterion.

Each test records a pass/fail line that is printed in the terminal summary.
Criteria 6-8 share one seeded timeline run (the slow part of the suite).
"""
import itertools
from math import tau

import numpy as np
import pytest

from qucad.calib import DriftConfig, build_noise_model, calibration_matrix, synth_timeseries, vectorize
from qucad.compress import CompressConfig, CompressionTable, admm_compress, level_table, make_mask, nearest_level, \
    project_Z
from qucad.qcore import NoiseModel, check_density, circular_distance, simulate_noiseless, simulate_noisy
from qucad.qnn import TrainConfig, batch_loss, evaluate_accuracy, forward_batch, grad_parameter_shift, iris, \
    make_model, train
from qucad.repo import OnlineContext, RepoEntry, Repository, correlation_weights, match_online, weighted_kmeans, wsae
from qucad.harness import (ExperimentConfig, Strategy, breakpoint_toy, line_means, make_splits, run_timeline,
                           scan_loss_surface, summarize)

MASTER_SEED = 0
N_OFFLINE, N_ONLINE = 243, 60


def random_noise(rng, scale=0.05):
    days = synth_timeseries(DriftConfig(n_days=1, seed=int(rng.integers(1 << 30)), heterogeneity=0.5,
                                        base_tq=scale))
    return build_noise_model(days[0])


# --- 1. simulator correctness ----------------------------------------------


def test_c1_gradients_and_density_invariants(criterion):
    rng = np.random.default_rng(MASTER_SEED)
    data = iris()
    worst = 0.0
    for k in range(20):
        m = make_model(data, n_qubits=4, n_blocks=2, seed=k)
        m = m.with_theta(rng.uniform(0, tau, m.circuit.n_params))
        idx = rng.choice(len(data), 4, replace=False)
        X, y = data.X[idx], data.y[idx]
        g, _ = grad_parameter_shift(m, X, y)
        h = 1e-6
        for i in range(m.circuit.n_params):
            tp, tm = m.theta.copy(), m.theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (batch_loss(forward_batch(m.with_theta(tp), X), y)
                  - batch_loss(forward_batch(m.with_theta(tm), X), y)) / (2 * h)
            worst = max(worst, abs(g[i] - fd))
    n_checked = []
    for k in range(10):
        m = make_model(data, n_qubits=4, n_blocks=2, seed=100 + k)
        theta = rng.uniform(0, tau, m.circuit.n_params)
        simulate_noisy(m.circuit, theta, random_noise(rng, 0.2), on_channel=lambda r: (check_density(r),
                                                                                      n_checked.append(1)))
    ok = criterion(1, worst <= 1e-5 and len(n_checked) > 0,
                   f"max |shift - FD| = {worst:.2e} over 20 models; {len(n_checked)} channel states checked")
    assert ok


# --- 2. zero-noise consistency ---------------------------------------------


def test_c2_zero_noise_matches_noiseless(criterion):
    rng = np.random.default_rng(MASTER_SEED + 2)
    data = iris()
    worst = 0.0
    for k in range(50):
        m = make_model(data, n_qubits=4, n_blocks=int(rng.integers(1, 4)), seed=k)
        theta = rng.uniform(0, tau, m.circuit.n_params)
        zero = NoiseModel.ideal(4, m.circuit.coupling)
        psi = simulate_noiseless(m.circuit, theta)
        rho = simulate_noisy(m.circuit, theta, zero)
        worst = max(worst, np.abs(rho - np.outer(psi, psi.conj())).max())
    ok = criterion(2, worst <= 1e-10, f"max deviation {worst:.2e} on 50 circuits")
    assert ok


# --- 3. projection oracle --------------------------------------------------


def test_c3_projection_matches_brute_force(criterion):
    rng = np.random.default_rng(MASTER_SEED + 3)
    grid = np.linspace(0, tau, 10_000, endpoint=False)
    step = grid[1] - grid[0]
    bad = 0
    for _ in range(100):
        n = 6
        theta, u = rng.uniform(0, tau, n), rng.uniform(-0.3, 0.3, n)
        rho = rng.uniform(0.001, 10)
        v = theta + u
        mask = rng.integers(0, 2, n)
        t_admm, _ = level_table(np.mod(v, tau))
        z = project_Z(v, mask, t_admm)
        for i in range(n):
            # indicator s_i: 0 at the assigned level when masked, else 0 everywhere
            feasible = np.array([t_admm[i]]) if mask[i] else grid
            best = feasible[np.argmin(rho / 2 * (v[i] - feasible) ** 2)]
            if mask[i]:
                bad += z[i] != best
            elif 0 <= v[i] < tau:
                bad += abs(z[i] - best) > step
            else:
                bad += z[i] != v[i]  # outside the grid the unconstrained minimizer is v itself
    ok = criterion(3, bad == 0, f"{bad} mismatches over 100 instances")
    assert ok


# --- 4. mask semantics ------------------------------------------------------


def test_c4_mask_semantics(criterion):
    vals = [0.0, 0.3, 1.0, 2.5, np.inf]
    exhaustive = all(
        make_mask(P, t).tolist() == [int(p >= t) for p in P]
        for P in itertools.product(vals, repeat=3) for t in [0.0, 0.3, 1.0, 2.0, np.inf]
    )
    rng = np.random.default_rng(MASTER_SEED + 4)
    monotone = True
    for _ in range(500):
        P = rng.exponential(1.0, 12)
        a, b = np.sort(rng.exponential(1.0, 2))
        monotone &= bool(np.all(make_mask(P, b) <= make_mask(P, a)))
    levels = CompressionTable().levels
    angles = rng.uniform(0, tau, 10_000)
    agree = 0
    for x in angles:
        d = [circular_distance(x, lv) for lv in levels]
        lv, dist = nearest_level(x)
        agree += lv == levels[int(np.argmin(d))] and abs(dist - min(d)) < 1e-12
    ok = criterion(4, exhaustive and monotone and agree == len(angles),
                   f"exhaustive={exhaustive} monotone={monotone} nearest_level {agree}/{len(angles)}")
    assert ok


# --- 5. clustering ----------------------------------------------------------


def test_c5_clustering(criterion):
    monotone = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        X = rng.normal(size=(40, 6)) * rng.uniform(0.1, 3, 6)
        cm = weighted_kmeans(X, K=int(rng.integers(2, 7)), seed=s, weights=rng.uniform(0, 1, 6))
        monotone += bool(np.all(np.diff(cm.history) <= 1e-12))
    optimal = 0
    w = np.ones(2)
    for s in range(100):
        rng = np.random.default_rng(1000 + s)
        X = np.vstack([rng.normal(0, 0.3, (4, 2)), rng.normal(2, 0.3, (4, 2))])
        best = min(
            wsae(X, np.array([np.median(X[np.array(lab) == k], axis=0) for k in (0, 1)]), np.array(lab), w)
            for lab in itertools.product((0, 1), repeat=8) if 0 < sum(lab) < 8
        )
        optimal += weighted_kmeans(X, K=2, seed=s, weights=w).wsae <= best + 1e-9
    p = np.array([0.2, 0.4, 0.9, 0.5])
    C = np.stack([2 * p - 1, np.full(4, 0.3), -p], axis=1)
    exact = correlation_weights(C, p).tolist() == [1.0, 0.0, 1.0]
    ok = criterion(5, monotone == 100 and optimal >= 95 and exact,
                   f"non-increasing {monotone}/100, brute-force optimal {optimal}/100, exact weights {exact}")
    assert ok


# --- 6-8. the seeded Iris timeline -----------------------------------------


@pytest.fixture(scope="module")
def iris_model():
    splits = make_splits(iris(), seed=MASTER_SEED)
    model, _ = train(make_model(splits.train, seed=MASTER_SEED), splits.train,
                     TrainConfig(epochs=30, seed=MASTER_SEED), val=splits.val)
    return model, splits


@pytest.fixture(scope="module")
def timeline(iris_model):
    model, splits = iris_model
    days = synth_timeseries(DriftConfig(n_days=N_OFFLINE + N_ONLINE, seed=MASTER_SEED))
    history, online = days[:N_OFFLINE], days[N_OFFLINE:]
    cfg = ExperimentConfig()
    runs = {s: run_timeline(s, model, splits, history, online, cfg, seed=MASTER_SEED) for s in Strategy}
    base = runs[Strategy.BASELINE]
    for s, r in runs.items():
        row = summarize(r, baseline=base)
        print(f"{s.value:22s} mean {row.mean_acc:.3f} var {row.variance:.4f} days>0.8 {row.days_over[0.8]:2d} "
              f"optimizations {row.opt_count:2d} online time {row.opt_time:7.1f}s")
    return {s: r for s, r in runs.items()}


def test_c6_compression_benefit(criterion, timeline):
    mean = {s: float(r.accuracies.mean()) for s, r in timeline.items()}
    chain = [Strategy.QUCAD, Strategy.QUCAD_NO_OFFLINE, Strategy.ONE_TIME_COMPRESSION,
             Strategy.NA_TRAIN_EVERYDAY, Strategy.BASELINE]
    gaps = [(a.value, b.value, mean[a] - mean[b]) for a, b in zip(chain, chain[1:])]
    broken = [f"{a}<{b} by {-g:.3f}" for a, b, g in gaps if g < -0.02]
    lift = mean[Strategy.QUCAD] - mean[Strategy.BASELINE]
    detail = " ".join(f"{s.value}={mean[s]:.3f}" for s in chain)
    detail += f"; QuCAD-Baseline={lift:.3f}" + (f"; broken: {', '.join(broken)}" if broken else "")
    ok = criterion(6, not broken and lift >= 0.10, detail)
    assert ok


def test_c7_reuse_efficiency(criterion, timeline):
    q, every = timeline[Strategy.QUCAD], timeline[Strategy.COMPRESS_EVERYDAY]
    frac = q.opt_count / len(q.records)
    ratio = q.opt_time / every.opt_time
    ok = criterion(7, frac <= 0.25 and ratio <= 0.20,
                   f"QuCAD compressions {q.opt_count}/{len(q.records)} ({frac:.0%}); "
                   f"online time {q.opt_time:.0f}s vs {every.opt_time:.0f}s ({ratio:.1%})")
    assert ok


def test_c8_upper_bound_proximity(criterion, timeline):
    gap = timeline[Strategy.COMPRESS_EVERYDAY].accuracies.mean() - timeline[Strategy.QUCAD].accuracies.mean()
    ok = criterion(8, gap <= 0.03, f"CompressEveryday - QuCAD = {gap:.3f}")
    assert ok


# --- 9. noise-aware vs noise-agnostic --------------------------------------


def test_c9_noise_aware_beats_agnostic(criterion, iris_model):
    model, splits = iris_model
    aware, agnostic = [], []
    for s in range(10):
        days = synth_timeseries(DriftConfig(n_days=15, seed=s, spike_targets=(("tq", "0-1"),), spike_prob=1.0))
        day = days[-1]
        noise = build_noise_model(day)
        for flag, out in ((True, aware), (False, agnostic)):
            comp, _ = admm_compress(model, splits.train, day, CompressConfig(noise_aware=flag, seed=s))
            out.append(evaluate_accuracy(comp, splits.test, noise))
    a, b = float(np.mean(aware)), float(np.mean(agnostic))
    ok = criterion(9, a >= b, f"noise-aware {a:.3f} vs agnostic {b:.3f} over 10 seeds")
    assert ok


# --- 10. guidance rules -----------------------------------------------------


def test_c10_guidance_rules(criterion, iris_model):
    model, splits = iris_model
    days = synth_timeseries(DriftConfig(n_days=6, seed=MASTER_SEED))
    schema = calibration_matrix(days)[1]

    def repo(invalid):
        entries = [RepoEntry(vectorize(d, schema).values, d, model, np.zeros(model.circuit.n_params, int),
                             0.3 if bad else 0.9, 0.0, bad) for d, bad in zip(days[:2], invalid)]
        return Repository(entries, np.ones(len(schema)), schema, th_w=1e-3)

    ctx = OnlineContext(model, splits.train, splits.val, CompressConfig(rounds=1, inner_epochs=1, finetune_epochs=1))
    outcomes = []
    for _ in range(2):  # determinism: the same inputs give the same decisions
        r = repo((False, False))
        d1, r = match_online(r, days[1], ctx)
        far = days[4].with_rates(tq_error={p: 0.4 for p in days[4].pairs})
        d2, r = match_online(r, far, ctx)
        d3, _ = match_online(repo((True, False)), days[0], ctx)
        outcomes.append([(d.kind, d.index, d.distance) for d in (d1, d2, d3)])
    reuse = outcomes[0][0][:2] == ("reuse", 1) and outcomes[0][0][2] == 0.0
    new = outcomes[0][1][:2] == ("compress_new", 2) and outcomes[0][1][2] > 1e-3
    fail = outcomes[0][2][:2] == ("fail", 0)
    same = outcomes[0] == outcomes[1]
    ok = criterion(10, reuse and new and fail and same,
                   f"reuse={reuse} compress_new={new} fail={fail} deterministic={same}")
    assert ok


# --- 11. breakpoint visibility ---------------------------------------------


def test_c11_breakpoint_visible(criterion):
    model, ds, noise = breakpoint_toy()
    scan = scan_loss_surface(model, 0, 1, 64, ds, noise)
    line, overall = line_means(scan, axis=1)
    ok = criterion(11, line < overall, f"mean |diff| on θ_CRY=0 line {line:.2e} vs grid {overall:.3f}")
    assert ok
