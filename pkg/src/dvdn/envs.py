"""Small cooperative Dec-POMDPs with a shared team reward.

All environments expose ``spec``, ``reset(seed=None)`` returning per-agent
observations and ``step(actions)`` returning a :class:`StepResult`.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dims: tuple
    n_actions: tuple
    horizon: int
    gamma: float = 0.99

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if len(self.obs_dims) != self.n_agents or len(self.n_actions) != self.n_agents:
            raise ValueError("per-agent dims must have one entry per agent")

    @property
    def homogeneous(self) -> bool:
        return len(set(self.obs_dims)) == 1 and len(set(self.n_actions)) == 1


@dataclass
class StepResult:
    obs: list
    reward: float
    done: bool


class Env:
    spec: EnvSpec

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.t = 0

    def reset(self, seed=None) -> list:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self._reset()
        return self.observe()

    def step(self, actions) -> StepResult:
        actions = [int(a) for a in actions]
        for a, n in zip(actions, self.spec.n_actions):
            if not 0 <= a < n:
                raise ValueError(f"action {a} out of range [0, {n})")
        reward, finished = self._step(actions)
        self.t += 1
        done = finished or self.t >= self.spec.horizon
        return StepResult(self.observe(), float(reward), done)

    def _reset(self):
        raise NotImplementedError

    def _step(self, actions):
        raise NotImplementedError

    def observe(self) -> list:
        raise NotImplementedError


NOOP, NORTH, SOUTH, EAST, WEST, LOAD = range(6)
_MOVES = {NOOP: (0, 0), NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1), LOAD: (0, 0)}


class ForagingEnv(Env):
    """Grid foraging where adjacent agents must jointly out-level a fruit to load it.

    Agent levels are 1 or 2, fruit levels never exceed the team's total level.
    Loading fruit of level ``l`` pays ``l / sum(all fruit levels)``, so a
    perfect episode returns 1; the final collection pays ``1 - paid so far``
    so that the floating-point sum is exactly 1.0. Each agent sees a square window of
    radius ``sight_radius`` with an agent-level and a fruit-level channel,
    plus its own normalized position.
    """

    def __init__(self, grid_size: int = 8, n_agents: int = 2, n_fruits: int = 3, sight_radius: int = 2,
                 horizon: int = 25, gamma: float = 0.99, seed=None):
        super().__init__(seed)
        interior = max(grid_size - 2, 0) ** 2
        if grid_size < 3 or n_fruits < 1 or n_agents < 1 or n_fruits > interior \
                or n_agents + n_fruits > grid_size * grid_size:
            raise ValueError("grid too small to place agents and fruits disjointly")
        self.size = grid_size
        self.n_fruits = n_fruits
        self.radius = sight_radius
        w = 2 * sight_radius + 1
        obs_dim = 2 * w * w + 2
        self.spec = EnvSpec(n_agents, (obs_dim,) * n_agents, (6,) * n_agents, horizon, gamma)
        self._reset()

    def set_state(self, agent_pos, agent_levels, fruit_pos, fruit_levels) -> list:
        """Install a hand-built board (for tests and scripted scenarios)."""
        self.agent_pos = np.array(agent_pos, dtype=int).reshape(-1, 2)
        self.agent_levels = np.array(agent_levels, dtype=int)
        self.fruit_pos = np.array(fruit_pos, dtype=int).reshape(-1, 2)
        self.fruit_levels = np.array(fruit_levels, dtype=int)
        self.fruit_alive = np.ones(len(self.fruit_levels), dtype=bool)
        self.total_level = float(self.fruit_levels.sum())
        self.paid = 0.0
        self.t = 0
        return self.observe()

    def _reset(self):
        n, g, rng = self.spec.n_agents, self.size, self.rng
        agent_levels = rng.integers(1, 3, size=n)
        fruit_levels = rng.integers(1, agent_levels.sum() + 1, size=self.n_fruits)
        blocked = np.zeros((g, g), dtype=bool)
        fruits = []
        for cell in rng.permutation([(r, c) for r in range(1, g - 1) for c in range(1, g - 1)]):
            if len(fruits) == self.n_fruits:
                break
            r, c = cell
            if not blocked[r, c]:
                fruits.append((r, c))
                blocked[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = True
        if len(fruits) < self.n_fruits:
            raise ValueError("could not place fruits without adjacency")
        taken = set(fruits)
        free = [(r, c) for r in range(g) for c in range(g) if (r, c) not in taken]
        picks = rng.choice(len(free), size=n, replace=False)
        self.set_state([free[k] for k in picks], agent_levels, fruits, fruit_levels)

    def _step(self, actions):
        reward = 0.0
        agents = self.agent_pos.tolist()
        levels = self.agent_levels.tolist()
        alive = self.fruit_alive
        for f, ((fr, fc), need) in enumerate(zip(self.fruit_pos.tolist(), self.fruit_levels.tolist())):
            if not alive[f]:
                continue
            level = sum(lv for (r, c), lv, a in zip(agents, levels, actions)
                        if a == LOAD and abs(r - fr) + abs(c - fc) == 1)
            if level > 0 and level >= need:
                alive[f] = False
                reward += need / self.total_level
        if not alive.any() and reward > 0.0:
            # the last collection pays the remainder so that a perfect episode sums to exactly 1.0
            reward = 1.0 - self.paid
        self.paid += reward

        occupied = {tuple(p) for p in agents}
        occupied |= {tuple(p) for p, a in zip(self.fruit_pos.tolist(), alive) if a}
        targets = []
        for (r, c), a in zip(agents, actions):
            dr, dc = _MOVES[a]
            nr, nc = r + dr, c + dc
            if (dr, dc) == (0, 0) or not (0 <= nr < self.size and 0 <= nc < self.size) or (nr, nc) in occupied:
                targets.append((r, c))
            else:
                targets.append((nr, nc))
        for i, t in enumerate(targets):
            if targets.count(t) == 1:
                self.agent_pos[i] = t
        return reward, not alive.any()

    def observe(self) -> list:
        g, rad = self.size, self.radius
        w = 2 * rad + 1
        grid = np.zeros((2, g + 2 * rad, g + 2 * rad))
        ar, ac = self.agent_pos[:, 0] + rad, self.agent_pos[:, 1] + rad
        grid[0, ar, ac] = self.agent_levels / 2.0
        live = self.fruit_alive
        max_fruit = max(float(self.fruit_levels.max()), 1.0)
        grid[1, self.fruit_pos[live, 0] + rad, self.fruit_pos[live, 1] + rad] = self.fruit_levels[live] / max_fruit
        pos = self.agent_pos / (g - 1)
        out = []
        for i, (r, c) in enumerate(self.agent_pos.tolist()):
            obs = np.empty(2 * w * w + 2)
            obs[:-2] = grid[:, r:r + w, c:c + w].ravel()
            obs[-2:] = pos[i]
            out.append(obs)
        return out


SPREAD_STEP = 0.05
_SPREAD_MOVES = np.array([(0.0, 0.0), (SPREAD_STEP, 0.0), (-SPREAD_STEP, 0.0), (0.0, SPREAD_STEP), (0.0, -SPREAD_STEP)])


class SpreadEnv(Env):
    """Cover landmarks in the unit square; reward is minus the summed landmark-to-closest-agent distance."""

    def __init__(self, n_agents: int = 2, n_landmarks: int = 2, horizon: int = 25, gamma: float = 0.99, seed=None):
        super().__init__(seed)
        self.n_landmarks = n_landmarks
        self.spec = EnvSpec(n_agents, (6,) * n_agents, (5,) * n_agents, horizon, gamma)
        self._reset()

    def set_state(self, agent_pos, landmarks) -> list:
        self.agent_pos = np.array(agent_pos, dtype=float).reshape(-1, 2)
        self.landmarks = np.array(landmarks, dtype=float).reshape(-1, 2)
        self.t = 0
        return self.observe()

    def _reset(self):
        self.set_state(self.rng.random((self.spec.n_agents, 2)), self.rng.random((self.n_landmarks, 2)))

    def team_reward(self) -> float:
        d = np.linalg.norm(self.landmarks[:, None, :] - self.agent_pos[None, :, :], axis=2)
        return -float(d.min(axis=1).sum())

    def _step(self, actions):
        self.agent_pos = np.clip(self.agent_pos + _SPREAD_MOVES[actions], 0.0, 1.0)
        return self.team_reward(), False

    def observe(self) -> list:
        out = []
        for i, p in enumerate(self.agent_pos):
            lm = self.landmarks[np.argmin(np.linalg.norm(self.landmarks - p, axis=1))] - p
            others = np.delete(self.agent_pos, i, axis=0)
            if len(others):
                mate = others[np.argmin(np.linalg.norm(others - p, axis=1))] - p
            else:
                mate = np.zeros(2)
            out.append(np.concatenate([p, lm, mate]))
        return out


CLIMB_PAYOFFS = ((11.0, -30.0, 0.0), (-30.0, 7.0, 0.0), (0.0, 6.0, 5.0))


class ClimbGame(Env):
    """One-shot two-agent coordination game with miscoordination penalties."""

    def __init__(self, payoffs=CLIMB_PAYOFFS, gamma: float = 0.99, seed=None):
        super().__init__(seed)
        self.payoffs = np.array(payoffs, dtype=float)
        if self.payoffs.shape != (3, 3):
            raise ValueError(f"climb game needs a 3x3 payoff matrix, got shape {self.payoffs.shape}")
        self.spec = EnvSpec(2, (1, 1), (3, 3), 1, gamma)

    def _reset(self):
        pass

    def _step(self, actions):
        return self.payoffs[actions[0], actions[1]], True

    def observe(self) -> list:
        return [np.ones(1), np.ones(1)]


ENVS = {"foraging": ForagingEnv, "spread": SpreadEnv, "climb": ClimbGame}


def env_params(env_id: str) -> dict:
    """Constructor parameters (name -> default) accepted by an environment id."""
    if env_id not in ENVS:
        raise KeyError(f"unknown environment {env_id!r}; choose from {sorted(ENVS)}")
    sig = inspect.signature(ENVS[env_id])
    return {k: p.default for k, p in sig.parameters.items() if k != "seed"}


def make_env(env_id: str, seed=None, **params) -> Env:
    allowed = env_params(env_id)
    unknown = set(params) - set(allowed)
    if unknown:
        raise KeyError(f"unknown parameter(s) for {env_id}: {sorted(unknown)}")
    return ENVS[env_id](seed=seed, **params)
