import math

import numpy as np
import pytest

from aclab.envs import AssemblyLine, GridWorld, UnsupportedEnvironment, sample_level_set
from aclab.theory import (
    BoundReport,
    build_chain,
    constant_representation,
    context_representation,
    generalisation_bound,
    identity_representation,
    latent_policy_returns,
    markov_check,
    mixture_policy,
    optimal_actor_representation,
    optimal_critic_representation,
    optimal_policy,
    stationary_distribution,
    state_information,
    uniform_policy,
    verify_assembly,
)


def reject_biased(p_reject):
    return lambda states, obs: np.tile([1 - p_reject, p_reject], (len(states), 1))


def simulate(env, levels, policy, episodes, rng):
    """Monte-Carlo visit counts per (context, t) and mean discounted return from the start."""
    visits, returns = {}, []
    for _ in range(episodes):
        lv = levels[rng.integers(len(levels))]
        s, o = env.reset(lv)
        g, disc = 0.0, 1.0
        while not s.done:
            key = (lv.context_id, s.step_index)
            visits[key] = visits.get(key, 0) + 1
            a = int(rng.random() < policy([s], o[None])[0, 1])
            s, r, _, o = env.step(s, a)
            g += disc * r
            disc *= env.spec.gamma
        returns.append(g)
    return {k: v / episodes for k, v in visits.items()}, float(np.mean(returns))


def test_chain_matches_monte_carlo():
    env = AssemblyLine(gamma=0.9)
    levels = sample_level_set(env, 3, 1)
    pi = reject_biased(0.3)
    chain = build_chain(env, levels, pi)
    visits, mc_return = simulate(env, levels, pi, 40000, np.random.default_rng(0))
    for i, s in enumerate(chain.states):
        if not s.done:
            assert chain.visit[i] == pytest.approx(visits.get((s.level.context_id, s.step_index), 0.0), abs=0.01)
    starts = [i for i, s in enumerate(chain.states) if s.step_index == 0 and not s.done]
    assert np.mean(chain.values[starts]) == pytest.approx(mc_return, abs=0.03)


def test_chain_hand_values():
    env = AssemblyLine(gamma=1.0)
    lv = env.level_from_flags(0, [True, False])
    chain = build_chain(env, [lv], reject_biased(0.8))
    s0 = next(i for i, s in enumerate(chain.states) if s.step_index == 0 and not s.done)
    s1 = next(i for i, s in enumerate(chain.states) if s.step_index == 1 and not s.done)
    v1 = 0.2 * 1 + 0.8 * -1
    assert chain.values[s1] == pytest.approx(v1, abs=1e-14)
    assert chain.values[s0] == pytest.approx(0.2 * -1 + 0.8 * (1 + v1), abs=1e-14)
    assert chain.visit[s1] == pytest.approx(0.8, abs=1e-14)
    src, act, dst, w = chain.transitions(include_terminal=True)
    assert w.sum() == pytest.approx(1.0)


def test_chain_requires_enumerable_env():
    env = GridWorld()
    with pytest.raises(UnsupportedEnvironment):
        build_chain(env, [env.make_level(0, 0)], uniform_policy(env))


def test_markov_examples():
    env = AssemblyLine()
    levels = sample_level_set(env, 6, 2)
    for pi in (uniform_policy(env), optimal_policy(env)):
        assert markov_check(env, levels, pi, identity_representation).certified
    const = markov_check(env, levels, uniform_policy(env), constant_representation)
    assert not const.certified and const.delta_inverse == pytest.approx(const.mi_xx_a, abs=1e-12)
    phi_a = markov_check(env, levels, optimal_policy(env), optimal_actor_representation(env))
    assert abs(phi_a.delta_inverse) <= 1e-9 and phi_a.delta_density > 1e-9


def test_relabelling_preserves_all_information():
    env = AssemblyLine()
    levels = sample_level_set(env, 5, 4)

    def scrambled(states, obs):
        z = identity_representation(states, obs)
        return np.stack([3.7 * z[:, 0] - 11, z[:, 1] ** 3, z[:, 2] + 100 * z[:, 1]], 1)

    rep = markov_check(env, levels, uniform_policy(env), scrambled)
    assert rep.certified and rep.inverse_residual < 1e-12 and rep.density_residual < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_data_processing_direction_for_random_lumpings(seed):
    env = AssemblyLine()
    levels = sample_level_set(env, 5, seed)
    rng = np.random.default_rng(seed)
    table = {}

    def lump(states, obs):
        out = []
        for s in states:
            key = (s.level.context_id, s.step_index, s.internal)
            table.setdefault(key, int(rng.integers(3)))
            out.append([table[key]])
        return np.array(out, dtype=float)

    pi = mixture_policy(env, rng, 0.7)
    rep = markov_check(env, levels, pi, lump)
    assert rep.direction_ok


def test_context_representation_identifies_level():
    env = AssemblyLine(n_min=4, n_max=4)
    levels = [env.level_from_flags(i, [False, True, False, False], seed=i) for i in range(5)]
    info = state_information(build_chain(env, levels, optimal_policy(env)), context_representation)
    assert info["I(Z;L)"] == pytest.approx(math.log(5), abs=1e-12) == info["H(L)"]


def test_stationary_actor_distribution_is_pooled_defect_rate():
    env = AssemblyLine(n_min=5, n_max=5)
    levels = [env.level_from_flags(0, [True, False, False, False, False]),
              env.level_from_flags(1, [True, True, False, True, False])]
    mu, per = stationary_distribution(build_chain(env, levels, optimal_policy(env)), optimal_actor_representation(env))
    assert mu[(1.0,)] == pytest.approx(4 / 10, abs=1e-12)
    assert per[0][(1.0,)] == pytest.approx(0.2) and per[1][(1.0,)] == pytest.approx(0.6)


def test_critic_representation_counts_remaining_parts():
    env = AssemblyLine(n_min=1, n_max=4, gamma=1.0)
    levels = [env.level_from_flags(i, [False] * n) for i, n in enumerate((1, 2, 3, 4))]
    chain = build_chain(env, levels, optimal_policy(env), gamma=1.0)
    z = optimal_critic_representation(env, 1.0)(chain.states, chain.obs)
    idx, _ = chain.state_weights()
    remaining = [chain.states[i].level.payload["n_parts"] - chain.states[i].step_index for i in idx]
    assert list(z[idx, 0]) == remaining and len(set(z[idx, 0])) == 4


def test_actor_representation_is_optimal_everywhere():
    env = AssemblyLine(gamma=1.0)
    levels = sample_level_set(env, 15, 3)
    best, rets = latent_policy_returns(env, levels, optimal_actor_representation(env), 1.0)
    assert np.allclose(rets, [env.optimal_return(lv, 1.0) for lv in levels])
    assert best == {(0.0,): 0, (1.0,): 1}


def test_bound_formula_and_monotonicity():
    assert generalisation_bound(4.0, 8, 0.5) == pytest.approx(math.sqrt(2 * 16 / 8 * 0.5))
    assert generalisation_bound(4.0, 8, 0.5, slack=0.05) == pytest.approx(math.sqrt(4 * 0.55))
    mis = np.linspace(0, 3, 20)
    vals = [generalisation_bound(2.0, 10, m) for m in mis]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    vals = [generalisation_bound(2.0, n, 1.0) for n in range(1, 50)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        generalisation_bound(1.0, 0, 1.0)


def test_bound_report():
    rep = BoundReport(train_return=3.0, test_return=2.0, mi=0.0, d=16.0, n_levels=200)
    assert rep.gap == 1.0 and rep.bound == 0.0
    assert rep.bound_with_slack == pytest.approx(math.sqrt(2 * 256 / 200 * 0.05))
    assert not rep.holds
    assert BoundReport(3.0, 2.9, 0.1, 16.0, 200).holds


def test_verification_suite_passes():
    results = verify_assembly(0)
    failed = [r.name for r in results if not r.passed]
    assert not failed, failed
    names = {r.name for r in results}
    for needed in ("lemma1_heterogeneous", "lemma1_homogeneous", "lemma2_monotone", "actor_optimal_not_markov",
                   "actor_optimal_zz_zero", "critic_incompatible", "data_processing_direction"):
        assert needed in names
