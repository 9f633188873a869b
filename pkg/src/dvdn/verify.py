"""Self-checks run by ``python -m dvdn verify``.

Each suite returns a :class:`SuiteResult`; the sizes default to values that
finish in a few seconds and can be raised for a more thorough sweep.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .algorithms import AgentLearner, gradient_tracking_update, run_dvdn_gt_round, vdn_joint_gradient, vdn_loss
from .graphs import GraphSampler, complete_graph, consensus_step, consensus_to_limit, metropolis_weights, ring_graph
from .nn import AdamState, NetworkSpec, backward, forward, init_params
from .qlearning import Batch, TargetUpdate


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_batch(rng, obs_dim: int, n_actions: int, T: int, p_done: float = 0.3) -> Batch:
    return Batch(obs=rng.normal(size=(T, obs_dim)), actions=rng.integers(0, n_actions, T),
                 rewards=rng.normal(size=T), next_obs=rng.normal(size=(T, obs_dim)), dones=rng.random(T) < p_done)


def aligned_batches(rng, specs, T: int) -> list[Batch]:
    """Per-agent batches that share rewards and terminal flags, as replay produces."""
    rewards, dones = rng.normal(size=T), rng.random(T) < 0.3
    return [Batch(rng.normal(size=(T, s.input_dim)), rng.integers(0, s.output_dim, T), rewards,
                  rng.normal(size=(T, s.input_dim)), dones) for s in specs]


def check_consensus(n_graphs: int = 10_000, n_range=(2, 8), seed: int = 0) -> SuiteResult:
    """Connectivity, symmetry, stochasticity and sum conservation of Metropolis weights."""
    rng = np.random.default_rng(seed)
    samplers = {n: GraphSampler(n, rng) for n in range(n_range[0], n_range[1] + 1)}
    worst_row = worst_sym = worst_cons = 0.0
    for _ in range(n_graphs):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        g = samplers[n].sample()
        w = metropolis_weights(g).matrix
        worst_sym = max(worst_sym, float(np.max(np.abs(w - w.T))))
        worst_row = max(worst_row, float(np.max(np.abs(w.sum(axis=1) - 1.0))))
        vals = list(rng.normal(size=(n, 3)))
        mixed = consensus_step(metropolis_weights(g), vals)
        worst_cons = max(worst_cons, float(np.max(np.abs(np.sum(mixed, axis=0) - np.sum(vals, axis=0)))))
        if np.any(w < 0):
            return SuiteResult("consensus", False, "negative weight")
    ok = worst_sym == 0.0 and worst_row <= 1e-12 and worst_cons <= 1e-10
    iters = []
    for n in range(max(n_range[0], 3), n_range[1] + 1):
        res = consensus_to_limit(ring_graph(n), list(rng.normal(size=(n, 4))), max_iters=500, tol=1e-6)
        ok &= res.converged
        iters.append(res.iterations)
    detail = (f"{n_graphs} graphs, max |row sum - 1| {worst_row:.1e}, max conservation error {worst_cons:.1e}, "
              f"ring convergence iterations {max(iters) if iters else 0}")
    return SuiteResult("consensus", ok, detail)


def finite_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    out = np.empty_like(x)
    for k in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        out[k] = (fn(xp) - fn(xm)) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def check_backprop(n_cases: int = 100, seed: int = 1) -> SuiteResult:
    """Backprop against central finite differences on random small networks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
        spec = NetworkSpec(int(rng.integers(1, 5)), hidden, int(rng.integers(1, 4)))
        params = init_params(spec, rng) + rng.normal(scale=0.1, size=spec.n_params)
        x = rng.normal(size=(int(rng.integers(1, 5)), spec.input_dim))
        err = rng.normal(size=(len(x), spec.output_dim))
        g = backward(spec, params, x, err)
        fd = finite_difference(lambda p: float(np.sum(forward(spec, p, x) * err)), params)
        worst = max(worst, relative_error(g, fd))
    return SuiteResult("backprop", worst < 1e-4, f"{n_cases} cases, max relative error {worst:.2e}")


def check_joint_td_gradient(n_cases: int = 100, seed: int = 2) -> SuiteResult:
    """Closed-form joint-TD gradient versus the chain rule through the additive mixer and finite differences."""
    rng = np.random.default_rng(seed)
    worst_chain = worst_fd = 0.0
    for _ in range(n_cases):
        n, T = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        specs = [NetworkSpec(int(rng.integers(1, 4)), (int(rng.integers(2, 6)),), int(rng.integers(2, 4)))
                 for _ in range(n)]
        params = [init_params(s, rng) for s in specs]
        targets = [init_params(s, rng) for s in specs]
        batches = aligned_batches(rng, specs, T)
        closed = vdn_joint_gradient(specs, params, targets, batches, 0.9)
        chain = vdn_joint_gradient(specs, params, targets, batches, 0.9, method="chain")
        worst_chain = max(worst_chain, max(float(np.max(np.abs(a - b))) for a, b in zip(closed, chain)))
        i = int(rng.integers(n))

        def loss_i(p):
            ps = list(params)
            ps[i] = p
            return vdn_loss(specs, ps, targets, batches, 0.9)

        worst_fd = max(worst_fd, relative_error(closed[i], finite_difference(loss_i, params[i])))
    ok = worst_chain <= 1e-10 and worst_fd < 1e-4
    return SuiteResult("joint_td_gradient", ok,
                       f"{n_cases} cases, closed vs chain {worst_chain:.1e}, closed vs finite diff {worst_fd:.1e}")


def _vector_learner(x0: np.ndarray) -> AgentLearner:
    return AgentLearner(None, x0.copy(), x0.copy(), AdamState.zeros(len(x0)), TargetUpdate())


def check_tracker_sum(n_rounds: int = 1000, seed: int = 3) -> SuiteResult:
    """sum_i z_i equals sum_i g_i after every round on random graphs."""
    rng = np.random.default_rng(seed)
    n, d = 6, 5
    sampler = GraphSampler(n, rng)
    learners = [_vector_learner(rng.normal(size=d)) for _ in range(n)]
    worst = 0.0
    for _ in range(n_rounds):
        grads = list(rng.normal(size=(n, d)))
        gradient_tracking_update(metropolis_weights(sampler.sample()), learners, grads,
                                 step=lambda l, base, z: base - 0.01 * z)
        gap = np.sum([l.tracker for l in learners], axis=0) - np.sum(grads, axis=0)
        worst = max(worst, float(np.max(np.abs(gap))))
    return SuiteResult("tracker_sum", worst <= 1e-9, f"{n_rounds} rounds, max |sum z - sum g| {worst:.1e}")


def quadratic_tracking(centers: np.ndarray, lr: float = 0.05, max_rounds: int = 5000, tol: float = 1e-5):
    """Gradient tracking with plain steps on f_i(x) = (x - c_i)^2 over a ring; returns (copies, rounds)."""
    n = len(centers)
    w = metropolis_weights(ring_graph(n)) if n >= 3 else metropolis_weights(complete_graph(n))
    learners = [_vector_learner(np.zeros(centers.shape[1])) for _ in range(n)]
    target = centers.mean(axis=0)
    for k in range(1, max_rounds + 1):
        grads = [2.0 * (l.params - c) for l, c in zip(learners, centers)]
        gradient_tracking_update(w, learners, grads, step=lambda l, base, z: base - lr * z)
        copies = np.stack([l.params for l in learners])
        if np.max(np.abs(copies - target)) < tol:
            return copies, k
    return np.stack([l.params for l in learners]), max_rounds


def check_quadratic_tracking(seed: int = 4) -> SuiteResult:
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(6, 3))
    copies, rounds = quadratic_tracking(centers)
    err = float(np.max(np.abs(copies - centers.mean(axis=0))))
    return SuiteResult("quadratic_tracking", err < 1e-5, f"max error {err:.1e} after {rounds} rounds")


def check_parameter_sharing(n_rounds: int = 100, n_agents: int = 3, seed: int = 5) -> SuiteResult:
    """Tracking on a complete graph with identical starts and batches keeps all copies bit-identical."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(4, (16,), 3)
    learners = [AgentLearner.create(spec, np.random.default_rng(seed)) for _ in range(n_agents)]
    g = complete_graph(n_agents)
    for _ in range(n_rounds):
        b = random_batch(rng, 4, 3, 16)
        run_dvdn_gt_round(learners, [b] * n_agents, g, 0.9)
        first = learners[0].params
        if any(not np.array_equal(first, l.params) for l in learners[1:]):
            return SuiteResult("parameter_sharing", False, f"copies diverged at round {learners[0].round}")
    return SuiteResult("parameter_sharing", True, f"{n_rounds} rounds, {n_agents} agents bit-identical")


SUITES = {
    "consensus": check_consensus,
    "backprop": check_backprop,
    "joint_td_gradient": check_joint_td_gradient,
    "tracker_sum": check_tracker_sum,
    "quadratic_tracking": check_quadratic_tracking,
    "parameter_sharing": check_parameter_sharing,
}


def run_all(names=None) -> list[SuiteResult]:
    results = []
    for name in names or SUITES:
        t0 = time.perf_counter()
        res = SUITES[name]()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
