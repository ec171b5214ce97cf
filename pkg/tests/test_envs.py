import numpy as np
import pytest

from aclab.envs import (
    ACCEPT,
    REJECT,
    AssemblyLine,
    GridWorld,
    UnsupportedEnvironment,
    assembly_optimal_policy,
    assembly_optimal_value,
    enumerate_states,
    heldout_level_set,
    make_env,
    replay_manifest,
    sample_level_set,
    write_manifest,
)


def test_level_set_sizes_and_part_counts():
    env = AssemblyLine(n_min=2, n_max=8)
    levels = sample_level_set(env, 200, seed=3)
    assert len({lv.digest() for lv in levels}) == 200
    assert [lv.context_id for lv in levels] == list(range(200))
    assert all(2 <= lv.payload["n_parts"] <= 8 for lv in levels)


def test_singleton_level_set():
    env = AssemblyLine()
    assert len(sample_level_set(env, 1, seed=0)) == 1
    with pytest.raises(ValueError):
        sample_level_set(env, 0, seed=0)


def test_gridworld_levels_deterministic():
    env = GridWorld()
    a = sample_level_set(env, 16, seed=5)
    b = sample_level_set(env, 16, seed=5)
    assert [lv.digest() for lv in a] == [lv.digest() for lv in b]


def test_heldout_levels_disjoint_from_training():
    env = GridWorld()
    train = {lv.digest() for lv in sample_level_set(env, 64, seed=0)}
    test = {lv.digest() for lv in heldout_level_set(env, 64, seed=0)}
    assert not train & test


def test_assembly_reset_observation_layout():
    env = AssemblyLine(n_max=4, spec_dim=3)
    lv = env.level_from_flags(0, [False, True], seed=1)
    state, obs = env.reset(lv)
    specs = lv.payload["specs"]
    nm, sd = 4, 3
    assert obs[0] == 1.0 and obs[1:nm].sum() == 0          # part 0 under inspection
    np.testing.assert_array_equal(obs[nm:nm + 2 * sd], specs.reshape(-1))
    np.testing.assert_array_equal(obs[nm + nm * sd:2 * nm + nm * sd], [1, 1, 0, 0])
    np.testing.assert_array_equal(obs[2 * nm + nm * sd:], specs[0])
    assert np.array_equal(env.reset(lv)[1], obs)


def test_defect_rule_readable_from_specs():
    env = AssemblyLine()
    lv = env.level_from_flags(0, [True, False, True], seed=2)
    assert list(lv.payload["specs"][:, 0] > 0) == [True, False, True]


def test_assembly_step_rules():
    env = AssemblyLine(r_plus=1.0, r_minus=-1.0)
    lv = env.level_from_flags(0, [False, True], seed=0)
    s, _ = env.reset(lv)
    s, r, done, _ = env.step(s, ACCEPT)
    assert (r, done) == (1.0, False)
    s2, r, done, _ = env.step(s, ACCEPT)
    assert (r, done) == (-1.0, True) and s2.internal == "failed"
    with pytest.raises(RuntimeError):
        env.step(s2, ACCEPT)
    with pytest.raises(ValueError):
        env.step(s, 2)


def test_reject_all_good_parts():
    env = AssemblyLine(r_plus=1.0, r_minus=-1.0)
    lv = env.level_from_flags(0, [False, False, False], seed=0)
    s, _ = env.reset(lv)
    rewards = []
    done = False
    while not done:
        s, r, done, _ = env.step(s, REJECT)
        rewards.append(r)
    assert rewards == [-1.0, -1.0, -1.0]


def test_enumeration_counts():
    env = AssemblyLine()
    lv = env.level_from_flags(0, [False, True], seed=0)
    states = enumerate_states(env, lv)
    inspect = [s for s, _ in states if not s.done]
    assert len(inspect) == 2 and len(states) == 2 + 1 + 1
    levels = sample_level_set(env, 10, seed=1)
    total = sum(len(enumerate_states(env, lv)) for lv in levels)
    expected = sum(2 * lv.payload["n_parts"] + 1 - int((~lv.payload["flags"]).sum()) for lv in levels)
    assert total == expected
    keys = {(s.level.context_id, s.step_index, s.internal) for lv in levels for s, _ in enumerate_states(env, lv)}
    assert len(keys) == total


def test_enumeration_unsupported_for_gridworld():
    env = GridWorld()
    with pytest.raises(UnsupportedEnvironment):
        enumerate_states(env, env.make_level(0, 0))


def test_optimal_values():
    env = AssemblyLine(r_plus=1.0)
    good3 = env.level_from_flags(0, [False] * 3)
    assert assembly_optimal_value(env, env.reset(good3)[0], 1.0) == 3.0
    two = env.level_from_flags(1, [False, True])
    assert assembly_optimal_value(env, env.reset(two)[0], 0.5) == 1.5
    s = env.reset(two)[0]
    assert assembly_optimal_policy(env, s) == ACCEPT


def test_optimal_policy_achieves_optimal_return():
    env = AssemblyLine(gamma=1.0)
    for lv in sample_level_set(env, 30, seed=4):
        s, _ = env.reset(lv)
        total, done = 0.0, False
        while not done:
            s, r, done, _ = env.step(s, assembly_optimal_policy(env, s))
            total += r
        assert total == env.optimal_return(lv, 1.0) == lv.payload["n_parts"]


def test_gridworld_reset_and_moves():
    env = GridWorld()
    lv = env.make_level(0, 11)
    s, obs = env.reset(lv)
    assert s.internal == tuple(lv.payload["start"]) and obs.shape == (env.spec.obs_dim,)
    np.testing.assert_array_equal(obs[-env.texture_dim:], lv.payload["texture"])
    # no-op actions beyond the four moves leave the agent in place
    s2, r, done, obs2 = env.step(s, 10)
    assert s2.internal == s.internal and r == 0.0 and not done


def test_gridworld_shortest_path_reaches_goal():
    from collections import deque
    env = GridWorld()
    lv = env.make_level(0, 2)
    walls, start, goal = lv.payload["walls"], tuple(lv.payload["start"]), tuple(lv.payload["goal"])
    prev = {start: None}
    q = deque([start])
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    while q:
        cell = q.popleft()
        for a, (dr, dc) in enumerate(moves):
            n = (cell[0] + dr, cell[1] + dc)
            if 0 <= n[0] < 7 and 0 <= n[1] < 7 and not walls[n] and n not in prev:
                prev[n] = (cell, a)
                q.append(n)
    path = []
    cell = goal
    while prev[cell] is not None:
        cell, a = prev[cell]
        path.append(a)
    s, _ = env.reset(lv)
    for a in reversed(path):
        s, r, done, _ = env.step(s, a)
    assert done and r == env.goal_reward


def test_determinism_of_transition_streams():
    env = GridWorld()
    lv = env.make_level(0, 9)
    acts = np.random.default_rng(0).integers(0, env.spec.n_actions, size=40)
    runs = []
    for _ in range(2):
        s, o = env.reset(lv)
        out = [o]
        for a in acts:
            if s.done:
                break
            s, r, d, o = env.step(s, int(a))
            out.append(o)
        runs.append(np.array(out))
    assert np.array_equal(runs[0], runs[1])


def test_manifest_round_trip(tmp_path):
    env = AssemblyLine()
    levels = sample_level_set(env, 5, seed=1)
    write_manifest(tmp_path / "m.json", levels, "assembly", env.params())
    again = replay_manifest(tmp_path / "m.json", env)
    assert [lv.digest() for lv in again] == [lv.digest() for lv in levels]
    # a differently parameterised env cannot replay the manifest
    with pytest.raises(ValueError):
        replay_manifest(tmp_path / "m.json", AssemblyLine(spec_dim=5))


def test_make_env():
    assert isinstance(make_env("gridworld"), GridWorld)
    with pytest.raises(ValueError):
        make_env("procgen")
