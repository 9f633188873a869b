"""Per-agent deep Q-learning pieces: TD errors, policies, replay and targets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .nn import NetworkSpec, backward_cache, forward, forward_cache


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    """Column-stacked transitions of one agent; ``len(batch)`` is T."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        ts = list(transitions)
        return cls(
            obs=np.array([t.obs for t in ts], dtype=np.float64),
            actions=np.array([t.action for t in ts], dtype=np.int64),
            rewards=np.array([t.reward for t in ts], dtype=np.float64),
            next_obs=np.array([t.next_obs for t in ts], dtype=np.float64),
            dones=np.array([t.done for t in ts], dtype=bool),
        )

    def with_rewards(self, rewards) -> "Batch":
        return Batch(self.obs, self.actions, np.asarray(rewards, dtype=np.float64), self.next_obs, self.dones)

    def repeat(self, k: int) -> "Batch":
        return Batch(*(np.concatenate([a] * k) for a in (self.obs, self.actions, self.rewards, self.next_obs, self.dones)))


def greedy_action(q: np.ndarray) -> int:
    # np.argmax returns the first maximal index, i.e. lowest-index tie-break
    return int(np.argmax(q))


def select_action(spec: NetworkSpec, params: np.ndarray, obs, eps: float, rng: np.random.Generator) -> int:
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(spec.output_dim))
    return greedy_action(forward(spec, params, obs))


@dataclass
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_final: float = 0.05
    anneal_steps: int = 50_000
    eval_epsilon: float = 0.0

    def value(self, step: int) -> float:
        if self.anneal_steps <= 0 or step >= self.anneal_steps:
            return self.eps_final
        frac = step / self.anneal_steps
        return self.eps_start + frac * (self.eps_final - self.eps_start)


class RewardStandardizer:
    """Running mean/variance (Welford) of the team reward stream."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    @property
    def variance(self) -> float:
        return self._m2 / self.count if self.count else 0.0

    def update(self, reward: float) -> None:
        self.count += 1
        d = reward - self.mean
        self.mean += d / self.count
        self._m2 += d * (reward - self.mean)

    def standardize(self, rewards):
        if not self.enabled:
            return np.asarray(rewards, dtype=np.float64)
        return (np.asarray(rewards, dtype=np.float64) - self.mean) / max(math.sqrt(self.variance), 1e-6)


def td_with_cache(spec, params, target_params, batch: Batch, gamma: float):
    """TD vector plus the forward cache of Q(o, .) for reuse in backprop."""
    acts = forward_cache(spec, params, batch.obs)
    q_taken = acts[-1][np.arange(len(batch)), batch.actions]
    if batch.dones.all():
        return batch.rewards - q_taken, acts
    q_next = forward_cache(spec, target_params, batch.next_obs)[-1].max(axis=1)
    boot = np.where(batch.dones, 0.0, gamma * q_next)
    return batch.rewards + boot - q_taken, acts


def td_vector(spec, params, target_params, batch: Batch, gamma: float) -> np.ndarray:
    """delta_t = r + gamma * (1 - done) * max_u Q(o', u; target) - Q(o, a; params)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return td_with_cache(spec, params, target_params, batch, gamma)[0]


def signal_gradient(spec, params, acts, actions, signal, scale: float) -> np.ndarray:
    """Backprop an output seed of ``-scale * signal_t`` at each taken action.

    With ``signal = delta`` and ``scale = 2 / T`` this is the gradient of the
    mean squared TD error with the bootstrap target held fixed.
    """
    seed = np.zeros_like(acts[-1])
    seed[np.arange(len(actions)), actions] = -scale * np.asarray(signal)
    return backward_cache(spec, params, acts, seed)


def iql_gradient(spec, params, target_params, batch: Batch, gamma: float) -> np.ndarray:
    """Gradient of (1/T) sum_t delta_t^2 with the bootstrap target held fixed."""
    delta, acts = td_with_cache(spec, params, target_params, batch, gamma)
    return signal_gradient(spec, params, acts, batch.actions, delta, 2.0 / len(batch))


@dataclass(frozen=True)
class TargetUpdate:
    mode: str = "hard"
    period: int = 200
    rate: float = 0.01

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown target update mode {self.mode!r}")


def update_target(params: np.ndarray, target_params: np.ndarray, mode: TargetUpdate, step: int) -> np.ndarray:
    """Target parameters after optimizer step number ``step`` (1-based)."""
    if mode.mode == "soft":
        return (1.0 - mode.rate) * target_params + mode.rate * params
    if step % mode.period == 0:
        return params.copy()
    return target_params


class SharedIndexStream:
    """Long seeded list of uniform draws that every agent consumes in lockstep.

    Draw ``u`` maps to replay slot ``floor(u * n_stored)``, so agents holding
    buffers of equal size pick identical slots.
    """

    BLOCK = 4096

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self._block = self._rng.random(self.BLOCK)
        self._pos = 0
        self.position = 0

    def take(self, k: int) -> np.ndarray:
        out = np.empty(k)
        filled = 0
        while filled < k:
            if self._pos == self.BLOCK:
                self._block = self._rng.random(self.BLOCK)
                self._pos = 0
            n = min(k - filled, self.BLOCK - self._pos)
            out[filled:filled + n] = self._block[self._pos:self._pos + n]
            self._pos += n
            filled += n
        self.position += k
        return out

    def indices(self, k: int, n_stored: int) -> np.ndarray:
        return np.minimum((self.take(k) * n_stored).astype(np.int64), n_stored - 1)


class ReplayBuffer:
    """Ring buffer of whole episodes for one agent.

    Storage is preallocated as ``(capacity, horizon + 1, obs_dim)`` so that
    sampling is a fancy-index plus a validity mask.
    """

    def __init__(self, capacity: int, horizon: int, obs_dim: int):
        self.capacity = capacity
        self.horizon = horizon
        self.obs = np.zeros((capacity, horizon + 1, obs_dim))
        self.actions = np.zeros((capacity, horizon), dtype=np.int64)
        self.rewards = np.zeros((capacity, horizon))
        self.dones = np.zeros((capacity, horizon), dtype=bool)
        self.lengths = np.zeros(capacity, dtype=np.int64)
        self.episode_ids = np.full(capacity, -1, dtype=np.int64)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add_episode(self, episode_id: int, obs, actions, rewards, dones) -> None:
        """``obs`` holds L + 1 observations for an episode of L transitions."""
        L = len(actions)
        if L < 1 or L > self.horizon or len(obs) != L + 1:
            raise ValueError("episode length inconsistent with buffer horizon")
        s = self._next
        self.obs[s, :L + 1] = obs
        self.actions[s, :L] = actions
        self.rewards[s, :L] = rewards
        self.dones[s, :L] = dones
        self.actions[s, L:] = 0
        self.lengths[s] = L
        self.episode_ids[s] = episode_id
        self._next = (s + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def gather(self, slots: np.ndarray) -> Batch:
        """Concatenate the valid transitions of the given slots, episode-major."""
        L = self.lengths[slots]
        obs = self.obs[slots]
        if L.min() == self.horizon:
            d = obs.shape[2]
            return Batch(
                obs=obs[:, :-1].reshape(-1, d),
                actions=self.actions[slots].ravel(),
                rewards=self.rewards[slots].ravel(),
                next_obs=obs[:, 1:].reshape(-1, d),
                dones=self.dones[slots].ravel(),
            )
        mask = np.arange(self.horizon)[None, :] < L[:, None]
        return Batch(
            obs=obs[:, :-1][mask],
            actions=self.actions[slots][mask],
            rewards=self.rewards[slots][mask],
            next_obs=obs[:, 1:][mask],
            dones=self.dones[slots][mask],
        )

    def sample(self, stream: SharedIndexStream, batch_size: int) -> tuple[Batch, np.ndarray]:
        slots = stream.indices(batch_size, self.size)
        return self.gather(slots), self.episode_ids[slots]


def sample_synchronized_batch(buffers, streams, batch_size: int):
    """Per-agent batches drawn from the same episodes, or None if data is short.

    Each agent consumes its own copy of the shared index stream; the
    episode ids are checked for alignment.
    """
    if any(len(b) < batch_size for b in buffers):
        return None
    sizes = {len(b) for b in buffers}
    if len(sizes) != 1:
        raise RuntimeError("replay buffers out of sync")
    out, ids = [], None
    for buf, stream in zip(buffers, streams):
        batch, eids = buf.sample(stream, batch_size)
        if ids is not None and not np.array_equal(ids, eids):
            raise RuntimeError("agents sampled different episodes")
        ids = eids
        out.append(batch)
    return out


def export_episodes_csv(path, episodes) -> None:
    """Write ``(episode_id, t, actions..., team_reward)`` rows.

    ``episodes`` yields ``(episode_id, joint_actions, rewards)`` where
    ``joint_actions`` has shape (L, n_agents).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        first = True
        for eid, joint, rewards in episodes:
            joint = np.asarray(joint)
            if first:
                w.writerow(["episode_id", "t", *[f"action_{i}" for i in range(joint.shape[1])], "team_reward"])
                first = False
            for t, (acts, r) in enumerate(zip(joint, rewards)):
                w.writerow([eid, t, *[int(a) for a in acts], repr(float(r))])
