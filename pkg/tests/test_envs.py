import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvdn.envs import (
    CLIMB_PAYOFFS,
    LOAD,
    NOOP,
    ClimbGame,
    EnvSpec,
    ForagingEnv,
    SpreadEnv,
    env_params,
    make_env,
)

SEEDS = st.integers(0, 2**32 - 1)


def rollout(env, rng, policy=None):
    obs, total, trace = env.reset(), 0.0, []
    done = False
    while not done:
        acts = policy(env, obs) if policy else [int(rng.integers(n)) for n in env.spec.n_actions]
        res = env.step(acts)
        trace.append((acts, res.reward, [o.copy() for o in res.obs]))
        total += res.reward
        done = res.done
    return total, trace


def test_env_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec(1, (2,), (2,), 0)
    with pytest.raises(ValueError):
        EnvSpec(1, (2,), (2,), 5, gamma=1.0)
    with pytest.raises(ValueError):
        EnvSpec(2, (2,), (2, 2), 5)


@pytest.mark.parametrize("env_id", ["foraging", "spread", "climb"])
def test_reset_seed_reproduces_episodes(env_id):
    a, b = make_env(env_id), make_env(env_id)
    for seed in range(5):
        ta = rollout_seeded(a, seed)
        tb = rollout_seeded(b, seed)
        assert ta == tb


def rollout_seeded(env, seed):
    rng = np.random.default_rng(seed + 1000)
    env.reset(seed=seed)
    out = []
    for _ in range(env.spec.horizon):
        res = env.step([int(rng.integers(n)) for n in env.spec.n_actions])
        out.append((res.reward, [o.tolist() for o in res.obs], res.done))
        if res.done:
            break
    return out


@pytest.mark.parametrize("env_id", ["foraging", "spread", "climb"])
@given(seed=SEEDS)
def test_obs_dims_and_horizon(env_id, seed):
    env = make_env(env_id, seed=seed)
    rng = np.random.default_rng(seed)
    obs = env.reset()
    assert [len(o) for o in obs] == list(env.spec.obs_dims)
    _, trace = rollout(env, rng)
    assert 1 <= len(trace) <= env.spec.horizon
    for _, reward, o in trace:
        assert isinstance(reward, float)
        assert [len(x) for x in o] == list(env.spec.obs_dims)


def test_invalid_actions_rejected():
    env = ClimbGame()
    env.reset()
    with pytest.raises(ValueError):
        env.step([3, 0])


def test_foraging_joint_load_on_small_board():
    env = ForagingEnv(grid_size=4, n_agents=2, n_fruits=1)
    env.set_state([(0, 1), (1, 0)], [1, 1], [(1, 1)], [2])
    res = env.step([LOAD, LOAD])
    assert res.reward == 1.0 and res.done


def test_foraging_single_agent_too_weak():
    env = ForagingEnv(grid_size=4, n_agents=2, n_fruits=1)
    env.set_state([(0, 1), (3, 3)], [1, 1], [(1, 1)], [2])
    assert env.step([LOAD, LOAD]).reward == 0.0
    env.set_state([(0, 0), (3, 3)], [2, 1], [(1, 1)], [2])
    assert env.step([LOAD, NOOP]).reward == 0.0  # diagonal is not adjacent


def test_foraging_collision_and_blocking():
    env = ForagingEnv(grid_size=4, n_agents=2, n_fruits=1)
    env.set_state([(0, 0), (0, 2)], [1, 1], [(2, 2)], [1])
    env.step([3, 4])  # both move into (0, 1)
    assert env.agent_pos.tolist() == [[0, 0], [0, 2]]
    env.set_state([(1, 2), (3, 3)], [1, 1], [(2, 2)], [1])
    env.step([2, NOOP])  # fruit blocks the move south
    assert env.agent_pos.tolist()[0] == [1, 2]
    env.set_state([(0, 0), (3, 3)], [1, 1], [(2, 2)], [1])
    env.step([1, 4 - 1])  # north off the grid stays; second moves east off the grid stays
    assert env.agent_pos.tolist() == [[0, 0], [3, 3]]


def test_foraging_no_loading_returns_zero():
    env = ForagingEnv(seed=3)
    total, _ = rollout(env, None, policy=lambda e, o: [NOOP] * e.spec.n_agents)
    assert total == 0.0


@given(seed=SEEDS, n_fruits=st.integers(1, 4))
def test_foraging_perfect_episode_sums_to_one(seed, n_fruits):
    env = ForagingEnv(grid_size=8, n_fruits=n_fruits, horizon=50, seed=seed)
    env.reset()
    assert np.all(env.fruit_levels <= env.agent_levels.sum())
    total = 0.0
    for f in range(n_fruits):
        if not env.fruit_alive[f]:
            continue  # an earlier load was adjacent to this fruit too
        r, c = env.fruit_pos[f]
        env.agent_pos[:] = [(r - 1, c), (r + 1, c)]
        res = env.step([LOAD, LOAD])
        assert res.reward > 0
        total += res.reward
    assert res.done and total == 1.0


@given(seed=SEEDS)
def test_foraging_layout_invariants(seed):
    env = ForagingEnv(seed=seed)
    env.reset()
    fp = env.fruit_pos
    assert np.all((fp >= 1) & (fp <= env.size - 2))
    for i in range(len(fp)):
        for j in range(i + 1, len(fp)):
            assert np.max(np.abs(fp[i] - fp[j])) >= 2
    occupied = {tuple(p) for p in env.agent_pos} | {tuple(p) for p in fp}
    assert len(occupied) == len(fp) + len(env.agent_pos)


def test_foraging_observation_window():
    env = ForagingEnv(grid_size=5, n_agents=2, n_fruits=1, sight_radius=1)
    obs = env.set_state([(0, 0), (2, 1)], [2, 1], [(2, 2)], [3])
    w = 3
    agent_ch, fruit_ch = obs[1][:w * w].reshape(w, w), obs[1][w * w:2 * w * w].reshape(w, w)
    assert agent_ch[1, 1] == 0.5 and fruit_ch[1, 2] == 1.0
    assert obs[0][:w * w].reshape(w, w)[1, 1] == 1.0  # own level 2 / 2
    np.testing.assert_allclose(obs[1][-2:], [2 / 4, 1 / 4])


def test_foraging_rejects_impossible_layout():
    with pytest.raises(ValueError):
        ForagingEnv(grid_size=3, n_fruits=2)


def test_spread_rewards():
    env = SpreadEnv(n_agents=2, n_landmarks=2)
    env.set_state([(0.2, 0.2), (0.8, 0.5)], [(0.2, 0.2), (0.8, 0.5)])
    assert env.team_reward() == 0.0
    env1 = SpreadEnv(n_agents=1, n_landmarks=1)
    env1.set_state([(0.0, 0.0)], [(1.0, 1.0)])
    assert env1.team_reward() == pytest.approx(-np.sqrt(2), abs=1e-15)


def test_spread_clamps_and_observes():
    env = SpreadEnv(n_agents=2, n_landmarks=1)
    env.set_state([(0.0, 1.0), (0.5, 0.5)], [(0.9, 0.9)])
    res = env.step([2, 0])  # -x from the left edge
    assert env.agent_pos[0].tolist() == [0.0, 1.0]
    np.testing.assert_allclose(res.obs[0], [0.0, 1.0, 0.9, -0.1, 0.5, -0.5], atol=1e-15)


def greedy_spread(env, obs):
    acts = []
    for o in obs:
        dx, dy = o[2], o[3]
        if max(abs(dx), abs(dy)) < 0.025:
            acts.append(0)
        elif abs(dx) >= abs(dy):
            acts.append(1 if dx > 0 else 2)
        else:
            acts.append(3 if dy > 0 else 4)
    return acts


def test_spread_scripted_beats_random():
    env = SpreadEnv(n_agents=2, n_landmarks=2)
    rng = np.random.default_rng(0)
    scripted, random_ = [], []
    for s in range(100):
        env.reset(seed=s)
        scripted.append(rollout(env, None, greedy_spread)[0])
        env.reset(seed=s)
        random_.append(rollout(env, rng)[0])
    assert np.mean(scripted) > np.mean(random_)


def test_climb_payoffs():
    env = ClimbGame()
    best = max((env.payoffs[a, b], (a, b)) for a in range(3) for b in range(3))
    assert best == (11.0, (0, 0))
    assert env.payoffs.mean() == pytest.approx(np.mean(CLIMB_PAYOFFS))
    for a in range(3):
        for b in range(3):
            env.reset()
            res = env.step([a, b])
            assert res.reward == CLIMB_PAYOFFS[a][b] and res.done
            assert [o.tolist() for o in res.obs] == [[1.0], [1.0]]
    with pytest.raises(ValueError):
        ClimbGame(payoffs=[[1, 2], [3, 4]])


def test_climb_uniform_policy_expected_return():
    env = ClimbGame()
    rng = np.random.default_rng(0)
    rs = [rollout(env, rng)[0] for _ in range(40_000)]
    se = np.std(rs) / np.sqrt(len(rs))
    assert abs(np.mean(rs) - np.mean(CLIMB_PAYOFFS)) < 4 * se


def test_registry():
    assert "grid_size" in env_params("foraging") and "seed" not in env_params("foraging")
    with pytest.raises(KeyError):
        make_env("nope")
    with pytest.raises(KeyError):
        make_env("climb", size=3)
    assert make_env("spread", n_agents=3).spec.n_agents == 3
