"""Acceptance criteria, each at its stated tolerance and time budget.

Every test carries a ``criterion`` marker; ``conftest.py`` folds the results
into one PASS/FAIL line per criterion at the end of the session. The learning
criterion trains the shipped presets in ``configs/`` and takes the better part
of an hour on one core.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from dvdn import harness
from dvdn.algorithms import vdn_joint_gradient
from dvdn.config import load
from dvdn.nn import AdamState, NetworkSpec, adam_step, init_params
from dvdn.stats import bootstrap_ci, max_average_return, rank_compare
from dvdn.verify import (
    aligned_batches,
    check_backprop,
    check_consensus,
    check_parameter_sharing,
    check_quadratic_tracking,
    check_tracker_sum,
)
from oracles import torch_vdn_gradients

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.mark.criterion(1, "Metropolis weights and consensus")
def test_consensus_suite(record_property):
    res, secs = timed(check_consensus, n_graphs=10_000, n_range=(2, 8))
    record_property("detail", f"{res.detail}; {secs:.1f}s")
    assert res.passed, res.detail
    assert secs < 10.0


@pytest.mark.criterion(2, "backprop against finite differences")
def test_backprop_suite(record_property):
    res, secs = timed(check_backprop, 100)
    record_property("detail", f"{res.detail}; {secs:.1f}s")
    assert res.passed, res.detail
    assert secs < 5.0


def _closed_form_vs_autodiff(n_cases, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n, T = int(rng.integers(1, 6)), int(rng.integers(1, 17))
        specs = [NetworkSpec(int(rng.integers(1, 6)), (int(rng.integers(2, 9)),), int(rng.integers(2, 5)))
                 for _ in range(n)]
        params = [init_params(s, rng) for s in specs]
        targets = [init_params(s, rng) for s in specs]
        batches = aligned_batches(rng, specs, T)
        closed = vdn_joint_gradient(specs, params, targets, batches, 0.99)
        auto, _ = torch_vdn_gradients(specs, params, targets, batches, 0.99)
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(closed, auto)))
    return worst


@pytest.mark.criterion(3, "joint-TD gradient closed form against autodiff")
def test_joint_td_closed_form(record_property):
    worst, secs = timed(_closed_form_vs_autodiff, 100, seed=0)
    record_property("detail", f"max abs difference {worst:.1e}; {secs:.1f}s")
    assert worst <= 1e-10
    assert secs < 5.0


def _complete_graph_equivalence(monkeypatch, rounds):
    """Shadow every DVDN round on a complete graph with a centralized VDN gradient and Adam step."""
    cfg = load(CONFIGS / "climb_dvdn.cfg", ["seed=0", "graph.kind=complete", "train.grad_clip=0",
                                            f"train.total_steps={rounds + 40}", "eval.interval=100000",
                                            "eval.episodes=2"])
    stats = {"rounds": 0, "grad_err": 0.0, "min_cos": 1.0}
    shadows = {}
    real_round = harness.run_dvdn_round

    def shadowed(learners, batches, graph, gamma, clip=None, pool=None):
        n, T = len(learners), len(batches[0])
        before = [l.params for l in learners]
        vdn = vdn_joint_gradient([l.spec for l in learners], before, [l.target_params for l in learners],
                                 batches, gamma)
        rec = real_round(learners, batches, graph, gamma, clip, pool)
        for i, (l, g, v) in enumerate(zip(learners, rec.grads, vdn)):
            stats["grad_err"] = max(stats["grad_err"], float(np.max(np.abs(g - (n / T) * v))))
            shadow = shadows.setdefault(i, AdamState.zeros(len(v), lr=l.adam.lr))
            vdn_update = adam_step(shadow, before[i], v) - before[i]
            mask = np.abs(g) > 1e-3
            if mask.any():
                a, b = (l.params - before[i])[mask], vdn_update[mask]
                cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
                stats["min_cos"] = min(stats["min_cos"], cos)
        stats["rounds"] += 1
        return rec

    monkeypatch.setattr(harness, "run_dvdn_round", shadowed)
    harness.Trainer(cfg, 0).train()
    return stats


@pytest.mark.criterion(4, "complete-graph DVDN equals scaled VDN")
def test_complete_graph_equivalence(monkeypatch, record_property):
    stats, secs = timed(_complete_graph_equivalence, monkeypatch, 1000)
    record_property("detail", f"{stats['rounds']} rounds, max gradient gap {stats['grad_err']:.1e}, "
                              f"min Adam update cosine {stats['min_cos']:.6f}; {secs:.1f}s")
    assert stats["rounds"] >= 1000
    assert stats["grad_err"] <= 1e-8
    assert stats["min_cos"] > 0.999
    assert secs < 60.0


@pytest.mark.criterion(5, "gradient-tracking invariants")
def test_gradient_tracking_invariants(record_property):
    t0 = time.perf_counter()
    cons = check_tracker_sum(1000)
    quad = check_quadratic_tracking()
    secs = time.perf_counter() - t0
    record_property("detail", f"{cons.detail}; {quad.detail}; {secs:.1f}s")
    assert cons.passed and quad.passed
    assert secs < 30.0


@pytest.mark.criterion(6, "parameter-sharing emulation")
def test_parameter_sharing_emulation(record_property):
    res, secs = timed(check_parameter_sharing, 100)
    record_property("detail", f"{res.detail}; {secs:.1f}s")
    assert res.passed, res.detail
    assert secs < 30.0


LEARNING_RUNS = [(env, algo) for env in ("climb", "foraging") for algo in ("vdn", "dvdn", "iql")]


@pytest.fixture(scope="module")
def learning(tmp_path_factory):
    """Train the six presets used by the learning criterion; returns (artifacts, seconds)."""
    out = tmp_path_factory.mktemp("learning")
    arts = {}
    t0 = time.perf_counter()
    for env, algo in LEARNING_RUNS:
        arts[env, algo] = harness.train(load(CONFIGS / f"{env}_{algo}.cfg"), out / f"{env}_{algo}")
    return arts, time.perf_counter() - t0


def seeds_reaching(art, threshold):
    mat, _ = art.per_seed_matrix()
    best = mat.max(axis=1)
    return int(np.sum(best >= threshold)), best


@pytest.mark.criterion(7, "learning at desk scale")
@pytest.mark.parametrize("algo", ["vdn", "dvdn"])
def test_learning_climb_reaches_near_optimum(learning, algo, record_property):
    arts, _ = learning
    hits, best = seeds_reaching(arts["climb", algo], 10.0)
    record_property("detail", f"{hits}/10 seeds >= 10.0, per-seed max {np.round(best, 2).tolist()}")
    assert len(best) == 10
    assert hits >= 8


@pytest.mark.criterion(7, "learning at desk scale")
def test_learning_climb_dvdn_not_worse_than_iql(learning, record_property):
    arts, _ = learning
    verdict = harness.compare_runs(arts["climb", "dvdn"].rows, arts["climb", "iql"].rows)
    record_property("detail", f"DVDN vs IQL: {verdict}")
    assert verdict in ("outperforms", "matches")


def best_mean(art):
    return max_average_return(art.records()).mean


@pytest.mark.criterion(7, "learning at desk scale")
def test_learning_foraging_dvdn_close_to_vdn_and_iql(learning, record_property):
    arts, _ = learning
    d, v, i = (best_mean(arts["foraging", a]) for a in ("dvdn", "vdn", "iql"))
    record_property("detail", f"max average return DVDN {d:.4f}, VDN {v:.4f}, IQL {i:.4f}")
    assert abs(d - v) <= 0.15 * abs(v)
    assert d >= i - 0.05 * abs(i)


@pytest.mark.criterion(7, "learning at desk scale")
def test_learning_runtime(learning, record_property):
    _, secs = learning
    record_property("detail", f"{len(LEARNING_RUNS)} runs x 10 seeds in {secs / 60:.1f} min")
    assert secs < 30 * 60


def _coverage(reps, n, seed):
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(reps):
        lo, hi = bootstrap_ci(rng.normal(size=n), rng=rng)
        hits += lo <= 0.0 <= hi
    return hits / reps


def _matches_rate(reps, n, seed):
    rng = np.random.default_rng(seed)
    hits = sum(rank_compare(rng.normal(size=n), rng.normal(size=n), rng=rng) == "matches" for _ in range(reps))
    return hits / reps


@pytest.mark.criterion(8, "statistics calibration")
def test_statistics_calibration(record_property):
    t0 = time.perf_counter()
    cov = _coverage(1000, 25, seed=0)
    match = _matches_rate(1000, 25, seed=1)
    secs = time.perf_counter() - t0
    record_property("detail", f"coverage {cov:.3f}, matches rate {match:.3f}; {secs:.1f}s")
    assert 0.93 <= cov <= 0.97
    assert 0.93 <= match <= 0.97
    assert secs < 60.0


SHORT = ["seeds=0,1", "train.total_steps=1500", "eval.interval=500", "eval.episodes=5"]


@pytest.mark.criterion(9, "byte-identical reruns")
@pytest.mark.parametrize("preset", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_reruns_are_byte_identical(preset, tmp_path):
    cfg = load(CONFIGS / preset, SHORT)
    harness.train(cfg, tmp_path / "a")
    harness.train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
