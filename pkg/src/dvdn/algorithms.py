"""Distributed value decomposition: TD consensus, DVDN, gradient tracking, VDN.

Every round function takes per-agent batches that are already aligned (same
episodes, same transition order) and already reward-standardized, mutates the
learners in place and returns a :class:`RoundRecord` with diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graphs import CommGraph, ConsensusWeights, consensus_step, metropolis_weights
from .nn import AdamState, NetworkSpec, adam_step, backward_cache, clip_grad_norm, forward_cache, init_params
from .qlearning import (
    Batch,
    RewardStandardizer,
    TargetUpdate,
    signal_gradient,
    td_with_cache,
    update_target,
)


@dataclass
class AgentLearner:
    """Mutable per-agent training state (parameters, target copy, optimizer, tracker)."""

    spec: NetworkSpec | None
    params: np.ndarray
    target_params: np.ndarray
    adam: AdamState
    target_update: TargetUpdate = field(default_factory=TargetUpdate)
    reward_norm: RewardStandardizer = field(default_factory=lambda: RewardStandardizer(False))
    prev_grad: np.ndarray | None = None
    tracker: np.ndarray | None = None
    initialized: bool = False
    round: int = 0
    n_updates: int = 0

    @classmethod
    def create(cls, spec: NetworkSpec, rng, lr: float = 5e-4, target_update: TargetUpdate | None = None,
               standardize_rewards: bool = False) -> "AgentLearner":
        params = init_params(spec, rng)
        return cls(spec, params, params.copy(), AdamState.zeros(spec.n_params, lr=lr),
                   target_update or TargetUpdate(), RewardStandardizer(standardize_rewards))

    def commit(self, new_params: np.ndarray) -> None:
        """Install freshly optimized parameters and maintain the target network."""
        self.params = new_params
        self.n_updates += 1
        self.target_params = update_target(self.params, self.target_params, self.target_update, self.n_updates)


@dataclass
class RoundRecord:
    """Raw per-round vectors; norms are only computed by :meth:`summary`."""

    k: int
    grads: list
    tds: list = field(default_factory=list)
    net_tds: list = field(default_factory=list)
    trackers: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def summary(self) -> "RoundSummary":
        if len(self.params) > 1:
            stack = np.stack(self.params)
            dis = float(np.max(np.linalg.norm(stack - stack.mean(axis=0), axis=1)))
        else:
            dis = 0.0
        return RoundSummary(self.k, _norms(self.grads), _norms(self.tds), _norms(self.net_tds),
                            _norms(self.trackers), dis)


@dataclass
class RoundSummary:
    k: int
    grad_norms: list
    td_norms: list
    net_td_norms: list
    tracker_norms: list
    disagreement: float


def _map(pool, fn, *iterables):
    if pool is None:
        return list(map(fn, *iterables))
    return list(pool.map(fn, *iterables))


def _check_td_lengths(all_tds):
    lengths = {len(np.atleast_1d(d)) for d in all_tds}
    if len(lengths) != 1:
        raise ValueError(f"TD vectors have different lengths: {sorted(lengths)}")


def network_jtd(weights: ConsensusWeights, all_tds) -> list[np.ndarray]:
    """N * (one consensus step over TDs) - own TD, for every agent."""
    _check_td_lengths(all_tds)
    n = weights.n_agents
    mixed = consensus_step(weights, all_tds)
    return [n * m - np.asarray(d, dtype=np.float64) for m, d in zip(mixed, all_tds)]


def estimate_network_jtd(weights: ConsensusWeights, all_tds, i: int) -> np.ndarray:
    return network_jtd(weights, all_tds)[i]


def dvdn_gradient(spec: NetworkSpec, learner: AgentLearner, batch: Batch, gamma: float, net_td) -> np.ndarray:
    """Gradient of (1/T) sum_t (delta_t + net_td_t)^2; net_td is data, not differentiated."""
    delta, acts = td_with_cache(spec, learner.params, learner.target_params, batch, gamma)
    net_td = np.asarray(net_td, dtype=np.float64)
    if net_td.shape != delta.shape:
        raise ValueError("network TD estimate does not match batch length")
    return signal_gradient(spec, learner.params, acts, batch.actions, delta + net_td, 2.0 / len(batch))


def vdn_loss(specs, all_params, all_target_params, batches, gamma: float) -> float:
    """(1/N) sum_tau [y_VDN - Q_VDN]^2 with y_VDN = sum_i (r + gamma max Q_i(o', .; target))."""
    n = len(specs)
    y = 0.0
    q = 0.0
    for spec, p, tp, b in zip(specs, all_params, all_target_params, batches):
        qi = forward_cache(spec, p, b.obs)[-1][np.arange(len(b)), b.actions]
        nxt = forward_cache(spec, tp, b.next_obs)[-1].max(axis=1)
        y = y + b.rewards + np.where(b.dones, 0.0, gamma * nxt)
        q = q + qi
    return float(np.sum((y - q) ** 2) / n)


def vdn_joint_gradient(specs, all_params, all_target_params, batches, gamma: float,
                       method: str = "closed_form") -> list[np.ndarray]:
    """Per-agent gradients of the centralized VDN loss.

    ``closed_form`` seeds every agent's output with -(2/N) * sum_j delta_j;
    ``chain`` differentiates the squared joint residual y_VDN - Q_VDN and
    pushes it through the additive mixing layer. Both must agree.
    """
    n = len(specs)
    T = len(batches[0])
    if any(len(b) != T for b in batches):
        raise ValueError("VDN needs aligned batches of equal length")
    if method == "closed_form":
        tds, caches = zip(*(td_with_cache(s, p, tp, b, gamma)
                            for s, p, tp, b in zip(specs, all_params, all_target_params, batches)))
        jtd = np.sum(np.stack(tds), axis=0)
        return [signal_gradient(s, p, c, b.actions, jtd, 2.0 / n)
                for s, p, c, b in zip(specs, all_params, caches, batches)]
    if method == "chain":
        caches, y_joint, q_joint = [], np.zeros(T), np.zeros(T)
        for s, p, tp, b in zip(specs, all_params, all_target_params, batches):
            acts = forward_cache(s, p, b.obs)
            caches.append(acts)
            q_joint += acts[-1][np.arange(T), b.actions]
            nxt = forward_cache(s, tp, b.next_obs)[-1].max(axis=1)
            y_joint += b.rewards + np.where(b.dones, 0.0, gamma * nxt)
        dloss_dq = -(2.0 / n) * (y_joint - q_joint)
        grads = []
        for s, p, acts, b in zip(specs, all_params, caches, batches):
            seed = np.zeros_like(acts[-1])
            seed[np.arange(T), b.actions] = dloss_dq
            grads.append(backward_cache(s, p, acts, seed))
        return grads
    raise ValueError(f"unknown method {method!r}")


def _adam_update(learner: AgentLearner, base_params: np.ndarray, direction: np.ndarray) -> np.ndarray:
    return adam_step(learner.adam, base_params, direction)


def gradient_tracking_update(weights: ConsensusWeights, learners: Sequence[AgentLearner], new_grads,
                             step: Callable | None = None) -> None:
    """Tracker and parameter consensus followed by an optimizer step on the tracker.

    First round: z_i = g_i and the step starts from the agent's own parameters.
    Later rounds: z_i = sum_j a_ij z_j + g_i - g_i(prev) and the step starts from
    sum_j a_ij w_j. ``step(learner, base, direction)`` defaults to Adam.
    """
    step = step or _adam_update
    if len({l.round for l in learners}) != 1 or len({l.initialized for l in learners}) != 1:
        raise RuntimeError("gradient tracking rounds are out of sync across agents")
    grads = [np.asarray(g, dtype=np.float64) for g in new_grads]
    if learners[0].initialized:
        mixed_z = consensus_step(weights, [l.tracker for l in learners])
        mixed_w = consensus_step(weights, [l.params for l in learners])
        # (mix - g_prev) + g keeps z bit-equal to g when mixing is the identity
        trackers = [(mz - l.prev_grad) + g for mz, l, g in zip(mixed_z, learners, grads)]
        bases = mixed_w
    else:
        trackers = [g.copy() for g in grads]
        bases = [l.params for l in learners]
    for l, g, z, base in zip(learners, grads, trackers, bases):
        l.commit(step(l, base, z))
        l.prev_grad = g
        l.tracker = z
        l.initialized = True
        l.round += 1


def _norms(vs) -> list:
    return [float(np.linalg.norm(v)) for v in vs]


def _check_graph(graph: CommGraph, learners):
    if graph.n_agents != len(learners):
        raise ValueError(f"graph has {graph.n_agents} nodes for {len(learners)} agents")


def run_iql_round(learners, batches, gamma: float, clip: float | None = None, pool=None) -> RoundRecord:
    def local(l, b):
        delta, acts = td_with_cache(l.spec, l.params, l.target_params, b, gamma)
        g = signal_gradient(l.spec, l.params, acts, b.actions, delta, 2.0 / len(b))
        return delta, clip_grad_norm(g, clip)

    out = _map(pool, local, learners, batches)
    for l, (_, g) in zip(learners, out):
        l.commit(adam_step(l.adam, l.params, g))
        l.round += 1
    return RoundRecord(learners[0].round, [g for _, g in out], [d for d, _ in out],
                       params=[l.params for l in learners])


def _dvdn_gradients(learners, batches, graph, gamma, clip, pool, use_jtd=True):
    """TD forward pass, one TD consensus barrier, then local gradients."""
    _check_graph(graph, learners)
    first = _map(pool, lambda l, b: td_with_cache(l.spec, l.params, l.target_params, b, gamma), learners, batches)
    tds = [d for d, _ in first]
    if use_jtd:
        net = network_jtd(metropolis_weights(graph), tds)
    else:
        net = [np.zeros_like(d) for d in tds]

    def local(l, b, d, acts, nd):
        g = signal_gradient(l.spec, l.params, acts, b.actions, d + nd, 2.0 / len(b))
        return clip_grad_norm(g, clip)

    grads = _map(pool, local, learners, batches, tds, [a for _, a in first], net)
    return tds, net, grads


def run_dvdn_round(learners, batches, graph: CommGraph, gamma: float, clip: float | None = None,
                   pool=None) -> RoundRecord:
    tds, net, grads = _dvdn_gradients(learners, batches, graph, gamma, clip, pool)
    for l, g in zip(learners, grads):
        l.commit(adam_step(l.adam, l.params, g))
        l.round += 1
    return RoundRecord(learners[0].round, grads, tds, net, params=[l.params for l in learners])


def run_dvdn_gt_round(learners, batches, graph: CommGraph, gamma: float, use_jtd: bool = True,
                      clip: float | None = None, pool=None) -> RoundRecord:
    """One round with three barriers: TD, tracker and parameter consensus."""
    specs = {l.spec for l in learners}
    if len(specs) != 1:
        raise ValueError("gradient tracking requires homogeneous agents")
    tds, net, grads = _dvdn_gradients(learners, batches, graph, gamma, clip, pool, use_jtd=use_jtd)
    gradient_tracking_update(metropolis_weights(graph), learners, grads)
    return RoundRecord(learners[0].round, grads, tds, net, [l.tracker for l in learners],
                       [l.params for l in learners])


def run_vdn_round(learners, batches, gamma: float, clip: float | None = None, pool=None) -> RoundRecord:
    """Centralized VDN; the loss is normalized per transition rather than per agent."""
    n, T = len(learners), len(batches[0])
    raw = vdn_joint_gradient([l.spec for l in learners], [l.params for l in learners],
                             [l.target_params for l in learners], batches, gamma)
    grads = [clip_grad_norm(g * (n / T), clip) for g in raw]
    for l, g in zip(learners, grads):
        l.commit(adam_step(l.adam, l.params, g))
        l.round += 1
    return RoundRecord(learners[0].round, grads, params=[l.params for l in learners])


def run_vdn_ps_round(shared: AgentLearner, batches, gamma: float, clip: float | None = None,
                     pool=None) -> RoundRecord:
    """VDN with one parameter vector used by every agent."""
    n, T = len(batches), len(batches[0])
    s = shared.spec
    raw = vdn_joint_gradient([s] * n, [shared.params] * n, [shared.target_params] * n, batches, gamma)
    g = clip_grad_norm(np.sum(raw, axis=0) * (n / T), clip)
    shared.commit(adam_step(shared.adam, shared.params, g))
    shared.round += 1
    return RoundRecord(shared.round, [g], params=[shared.params])
