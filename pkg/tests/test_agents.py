import numpy as np
import pytest

from aclab.agents import (
    ActorCriticModel,
    ConfigError,
    ReturnNormalizer,
    TrainConfig,
    VecEnv,
    assembly_expected_return,
    assembly_policy_return,
    build_model,
    clipped_surrogate,
    collect_rollout,
    compute_gae,
    ppg_aux_loss,
    ppo_policy_loss,
    ppo_value_loss,
    train,
)
from aclab.envs import AssemblyLine, GridWorld, sample_level_set
from aclab.nn import finite_difference_check, log_softmax
from aclab.seeding import stream

SMALL = dict(num_envs=4, rollout_len=16, minibatches=2, ppo_epochs=1, critic_epochs=1, n_pi=2,
             aux_epochs=1, aux_minibatch_size=32, hidden=16, latent=8)


def small_model(coupled=True, aux=False, seed=0):
    return ActorCriticModel(6, 3, coupled=coupled, hidden=5, latent=4, aux_value_head=aux,
                            rng=np.random.default_rng(seed))


def batch(model, n=8, seed=1, ratio_noise=0.1):
    rng = np.random.default_rng(seed)
    obs = rng.standard_normal((n, model.obs_dim))
    actions = rng.integers(0, model.n_actions, n)
    logits = model.policy_logits(obs)
    logp = log_softmax(logits)[np.arange(n), actions]
    return {"obs": obs, "actions": actions, "adv": rng.standard_normal(n),
            "logp_old": logp + ratio_noise * rng.standard_normal(n), "returns": rng.standard_normal(n),
            "old_logits": logits + 0.3 * rng.standard_normal(logits.shape)}


# --- GAE ---------------------------------------------------------------------

def gae_oracle(rewards, values, dones, last, gamma, lam):
    """Straightforward per-step loop over a single environment."""
    adv = np.zeros(len(rewards))
    for t in range(len(rewards)):
        total, disc = 0.0, 1.0
        for k in range(t, len(rewards)):
            nv = 0.0 if dones[k] else (values[k + 1] if k + 1 < len(rewards) else last)
            total += disc * (rewards[k] + gamma * nv - values[k])
            if dones[k]:
                break
            disc *= gamma * lam
        adv[t] = total
    return adv


def test_gae_single_terminal_step():
    adv, ret = compute_gae([[1.0]], [[0.0]], [[True]], [0.0], 0.99, 0.95)
    assert adv[0, 0] == 1.0 and ret[0, 0] == 1.0


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal((5, 1)), rng.standard_normal((5, 1))
    last = rng.standard_normal(1)
    adv, _ = compute_gae(r, v, np.zeros((5, 1), bool), last, 0.9, 0.0)
    nxt = np.concatenate([v[1:, 0], last])
    np.testing.assert_allclose(adv[:, 0], r[:, 0] + 0.9 * nxt - v[:, 0], rtol=1e-14)


def test_gae_worked_example():
    adv, _ = compute_gae(np.array([[1.0], [0.0], [1.0]]), np.full((3, 1), 0.5),
                         np.array([[False], [False], [True]]), np.zeros(1), 0.99, 0.95)
    np.testing.assert_allclose(adv[:, 0], [1.43257, 0.46525, 0.5], atol=5e-6)
    np.testing.assert_allclose(adv[:, 0], gae_oracle([1, 0, 1], [0.5] * 3, [0, 0, 1], 0.0, 0.99, 0.95))


def test_gae_matches_oracle_across_episode_boundaries():
    rng = np.random.default_rng(3)
    r = rng.standard_normal(12)
    v = rng.standard_normal(12)
    d = np.zeros(12, bool)
    d[[4, 9]] = True
    adv, _ = compute_gae(r[:, None], v[:, None], d[:, None], np.array([0.7]), 0.97, 0.9)
    np.testing.assert_allclose(adv[:, 0], gae_oracle(r, v, d, 0.7, 0.97, 0.9), rtol=1e-12)


def test_gae_lambda_one_targets_are_monte_carlo_returns():
    rng = np.random.default_rng(4)
    r = rng.standard_normal(6)
    v = rng.standard_normal(6)
    d = np.zeros(6, bool)
    d[-1] = True
    _, ret = compute_gae(r[:, None], v[:, None], d[:, None], np.zeros(1), 0.9, 1.0)
    mc = [sum(0.9 ** (k - t) * r[k] for k in range(t, 6)) for t in range(6)]
    np.testing.assert_allclose(ret[:, 0], mc, rtol=1e-12)


# --- rollouts ------------------------------------------------------------------

def test_rollout_buffer_shape_and_logprob_reevaluation():
    env = GridWorld()
    levels = sample_level_set(env, 4, 0)
    model = ActorCriticModel(env.spec.obs_dim, env.spec.n_actions, rng=np.random.default_rng(0))
    vec = VecEnv(env, levels, 3, np.random.default_rng(1))
    buf = collect_rollout(model, vec, np.random.default_rng(2), 10)
    assert buf.size == 30 and buf.obs.shape == (10, 3, env.spec.obs_dim)
    flat = buf.flat()
    relp = log_softmax(model.policy_logits(flat["obs"]))[np.arange(30), flat["actions"]]
    np.testing.assert_allclose(relp, flat["logp_old"], rtol=1e-12)


def test_deterministic_policy_repeats_action():
    env = AssemblyLine()
    model = ActorCriticModel(env.spec.obs_dim, 2, rng=np.random.default_rng(0))
    model.params["pi.0.b"] = np.array([0.0, 1e6])
    vec = VecEnv(env, sample_level_set(env, 5, 0), 4, np.random.default_rng(0))
    buf = collect_rollout(model, vec, np.random.default_rng(0), 12)
    assert np.all(buf.actions == 1)


# --- losses ----------------------------------------------------------------------

def test_clip_saturation():
    obj, d = clipped_surrogate(np.array([1.3]), np.array([2.0]), 0.2)
    assert obj[0] == pytest.approx(1.2 * 2.0) and d[0] == 0.0
    obj, d = clipped_surrogate(np.array([0.7]), np.array([-1.0]), 0.2)
    assert obj[0] == pytest.approx(-0.8) and d[0] == 0.0


def test_clip_inactive_at_unit_ratio():
    model = small_model()
    mb = batch(model, ratio_noise=0.0)
    _, g_clip, _ = ppo_policy_loss(model, mb, clip=0.2)
    _, g_free, _ = ppo_policy_loss(model, mb, clip=0.999)
    assert all(np.array_equal(g_clip[k], g_free[k]) for k in g_clip)


def test_unit_ratio_gradient_is_vanilla_policy_gradient():
    model = small_model()
    mb = batch(model, ratio_noise=0.0)
    _, g, info = ppo_policy_loss(model, mb, clip=0.2, ent_coef=0.0)
    adv = info["adv_norm"]

    def vanilla(_p):
        lp = log_softmax(model.policy_logits(mb["obs"]))[np.arange(8), mb["actions"]]
        return -float(np.mean(lp * adv))

    assert finite_difference_check(vanilla, model.params, g) < 1e-4


@pytest.mark.parametrize("coupled", [True, False])
def test_policy_loss_gradient(coupled):
    model = small_model(coupled)
    mb = batch(model, ratio_noise=0.15)
    _, g, _ = ppo_policy_loss(model, mb, clip=0.2, ent_coef=0.05)
    fn = lambda _p: ppo_policy_loss(model, mb, clip=0.2, ent_coef=0.05)[0]  # noqa: E731
    assert finite_difference_check(fn, model.params, g) < 1e-4


@pytest.mark.parametrize("coupled", [True, False])
def test_value_loss_gradient(coupled):
    model = small_model(coupled)
    mb = batch(model)
    _, g, _ = ppo_value_loss(model, mb)
    assert finite_difference_check(lambda _p: ppo_value_loss(model, mb)[0], model.params, g) < 1e-4


def test_value_loss_analytic():
    model = small_model()
    obs = np.zeros((2, 6))
    c = model.value(obs)[0]
    loss, _, _ = ppo_value_loss(model, {"obs": obs, "returns": np.array([0.0, 2.0])})
    assert loss == pytest.approx((c ** 2 + (c - 2) ** 2) / 2, rel=1e-12)
    loss, _, _ = ppo_value_loss(model, {"obs": obs, "returns": model.value(obs)})
    assert loss == 0.0


@pytest.mark.parametrize("coupled", [True, False])
def test_joint_aux_loss_gradient(coupled):
    model = small_model(coupled, aux=True)
    mb = batch(model)
    loss, g, _ = ppg_aux_loss(model, mb, beta_clone=0.7)
    assert finite_difference_check(lambda _p: ppg_aux_loss(model, mb, 0.7)[0], model.params, g) < 1e-4
    _, (gc, ga), _ = ppg_aux_loss(model, mb, 0.7, split=True)
    if not coupled:
        assert set(gc) <= set(model.critic_keys) and set(ga) <= set(model.actor_keys)


def test_aux_loss_degenerate_cases():
    model = small_model(False, aux=True)
    mb = batch(model)
    mb["old_logits"] = model.policy_logits(mb["obs"])
    _, _, info = ppg_aux_loss(model, mb)
    assert info["kl"] == pytest.approx(0.0, abs=1e-14)
    mb2 = batch(model)
    loss, _, info = ppg_aux_loss(model, mb2, beta_clone=0.0)
    assert loss == pytest.approx(info["aux_value_loss"] + info["distill_loss"], rel=1e-14)
    with pytest.raises(ValueError):
        ppg_aux_loss(model, {k: v for k, v in mb.items() if k != "old_logits"})


def test_decoupled_gradients_stay_in_their_pathway():
    model = small_model(False)
    mb = batch(model)
    _, gp, _ = ppo_policy_loss(model, mb)
    _, gv, _ = ppo_value_loss(model, mb)
    assert set(gp) <= set(model.actor_keys) and not any(k.startswith("phi_c") for k in gp)
    assert set(gv) <= set(model.critic_keys) and not any(k.startswith("phi_a") for k in gv)


def test_value_stop_gradient_at_representation():
    model = small_model(True)
    _, g, _ = ppo_value_loss(model, batch(model), value_into_rep=False)
    assert set(g) == {"v.0.w", "v.0.b"}


# --- return normalisation -----------------------------------------------------------

def test_return_normaliser_zero_stream_and_disabled():
    norm = ReturnNormalizer(2, 0.99)
    out = norm(np.zeros((50, 2)), np.zeros((50, 2), bool))
    assert np.all(np.isfinite(out)) and np.all(out == 0)
    r = np.random.default_rng(0).standard_normal((5, 2))
    assert np.array_equal(ReturnNormalizer(2, 0.99, enabled=False)(r, np.zeros((5, 2), bool)), r)


def test_return_normaliser_scale_invariance():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((4000, 4))
    d = rng.random((4000, 4)) < 0.05
    a, b = ReturnNormalizer(4, 0.99), ReturnNormalizer(4, 0.99)
    out_a, out_b = a(r, d), b(10 * r, d)
    np.testing.assert_allclose(out_a[2000:], out_b[2000:], rtol=1e-4)


# --- training ---------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(clip=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(num_envs=0)
    assert TrainConfig().batch_size == 16 * 128


def test_budget_zero_returns_initial_model():
    env = AssemblyLine()
    cfg = TrainConfig(**SMALL)
    res = train("ppo", "coupled", cfg, env, sample_level_set(env, 3, 0), 0, seed=5)
    init = build_model(env, "ppo", "coupled", cfg, stream(5, "init"))
    assert res.steps == 0 and all(np.array_equal(res.model.params[k], init.params[k]) for k in init.params)


@pytest.mark.parametrize("algorithm", ["ppg", "dcpg"])
@pytest.mark.parametrize("n_pi", [1, 3])
def test_aux_buffer_size_scales_with_policy_phases(algorithm, n_pi):
    env = AssemblyLine()
    cfg = TrainConfig(**{**SMALL, "n_pi": n_pi})
    res = train(algorithm, "decoupled", cfg, env, sample_level_set(env, 3, 0), 6 * cfg.batch_size, seed=0)
    assert res.aux_batch_sizes == [n_pi * cfg.batch_size] * (6 // n_pi)


def test_unknown_algorithm_rejected():
    env = AssemblyLine()
    with pytest.raises(ConfigError):
        train("a2c", "coupled", TrainConfig(**SMALL), env, sample_level_set(env, 2, 0), 100, 0)
    with pytest.raises(ConfigError):
        train("ppo", "split", TrainConfig(**SMALL), env, sample_level_set(env, 2, 0), 100, 0)


@pytest.mark.parametrize("algorithm", ["ppo", "ppg", "dcpg"])
@pytest.mark.parametrize("coupling", ["coupled", "decoupled"])
def test_every_variant_trains_and_is_reproducible(algorithm, coupling):
    env = AssemblyLine()
    levels = sample_level_set(env, 4, 0)
    cfg = TrainConfig(**SMALL)
    a = train(algorithm, coupling, cfg, env, levels, 4 * cfg.batch_size, seed=2)
    b = train(algorithm, coupling, cfg, env, levels, 4 * cfg.batch_size, seed=2)
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)
    assert all(np.isfinite(v).all() for v in a.model.params.values())
    assert len(a.log) == 4 and a.steps == 4 * cfg.batch_size


def test_exact_policy_return_matches_monte_carlo():
    env = AssemblyLine(gamma=1.0)
    lv = sample_level_set(env, 1, 3)[0]
    model = ActorCriticModel(env.spec.obs_dim, 2, rng=np.random.default_rng(1))
    exact = assembly_policy_return(model, env, lv)
    rng = np.random.default_rng(0)
    totals = []
    for _ in range(20000):
        s, o = env.reset(lv)
        tot, done = 0.0, False
        while not done:
            p = np.exp(log_softmax(model.policy_logits(o[None]))[0])
            s, r, done, o = env.step(s, int(rng.random() < p[1]))
            tot += r
        totals.append(tot)
    assert abs(np.mean(totals) - exact) < 4 * np.std(totals) / np.sqrt(len(totals))
    assert assembly_expected_return(model, env, [lv]) == exact
