import numpy as np
import pytest

from aclab.agents import ActorCriticModel, TrainConfig, train
from aclab.auxiliary import (
    AuxAttachment,
    AuxSuite,
    TargetNetwork,
    advantage_distill_loss,
    augmentation_consistency_loss,
    derangement,
    dynamics_discriminator_loss,
    mico_distance,
    mico_loss,
    resample_actions,
)
from aclab.envs import AssemblyLine, sample_level_set
from aclab.nn import finite_difference_check, kl_categorical

SMALL = dict(num_envs=4, rollout_len=16, minibatches=2, ppo_epochs=1, critic_epochs=1, hidden=16, latent=8)


def setup(coupled=False, attachments=(), seed=0):
    model = ActorCriticModel(6, 3, coupled=coupled, hidden=5, latent=4, rng=np.random.default_rng(seed))
    suite = AuxSuite(model, attachments, 0.99, np.random.default_rng(seed + 1))
    rng = np.random.default_rng(seed + 2)
    n = 10
    mb = {"obs": rng.standard_normal((n, 6)), "next_obs": rng.standard_normal((n, 6)),
          "actions": rng.integers(0, 3, n), "rewards": rng.standard_normal(n), "adv": rng.standard_normal(n)}
    return model, suite, mb


def att(obj, target, **params):
    return AuxAttachment(obj, target, params=params)


def test_mico_distance_hand_value():
    d = mico_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]), beta_theta=0.3)
    assert d[0] == pytest.approx(1.0 + 0.3 * np.pi / 2, rel=1e-12)


def test_mico_diagonal_case():
    u = np.array([[0.6, -0.8]])
    assert mico_distance(u, u, 0.1)[0] == pytest.approx(1.0, abs=1e-6)


def test_mico_equal_latents_residual_is_target_term():
    model, suite, mb = setup(attachments=[att("mico", "actor")])
    mb["obs"][1] = mb["obs"][0]
    mb["rewards"][1] = mb["rewards"][0]
    partner = np.arange(10)
    partner[[0, 1]] = [1, 0]
    tgt = suite.targets["actor"]
    zt = model.phi_a.forward(tgt.params, mb["next_obs"])[0]
    z = model.represent(mb["obs"][:1])
    d_self = mico_distance(z, z, 0.1)[0]
    expected_resid = d_self - 0.99 * mico_distance(zt[:1], zt[1:2], 0.1)[0]
    loss, _ = mico_loss(model, "actor", tgt, {k: v[:2] for k, v in mb.items()}, 0.99,
                        np.random.default_rng(0), coef=1.0, partner=[1, 0])
    assert loss == pytest.approx(expected_resid ** 2, rel=1e-10)


@pytest.mark.parametrize("which", ["actor", "critic"])
def test_mico_gradient(which):
    model, suite, mb = setup(attachments=[att("mico", which)])
    perm = np.random.default_rng(5).permutation(10)
    fn = lambda _p: mico_loss(model, which, suite.targets[which], mb, 0.99, None, partner=perm)[0]  # noqa: E731
    _, g = mico_loss(model, which, suite.targets[which], mb, 0.99, None, partner=perm)
    assert finite_difference_check(fn, model.params, g) < 1e-4


@pytest.mark.parametrize("which", ["actor", "critic"])
def test_dynamics_gradient(which):
    model, suite, mb = setup(attachments=[att("dynamics", which, hidden=7)])
    rng = np.random.default_rng(3)
    perm, fake = derangement(10, rng), resample_actions(mb["actions"], 3, rng)
    kw = dict(hidden=7, perm=perm, fake_actions=fake)
    _, g = dynamics_discriminator_loss(model, which, mb, None, **kw)
    fn = lambda _p: dynamics_discriminator_loss(model, which, mb, None, **kw)[0]  # noqa: E731
    assert finite_difference_check(fn, model.params, g) < 1e-4


def test_dynamics_negatives():
    rng = np.random.default_rng(0)
    perm = derangement(50, rng)
    assert sorted(perm) == list(range(50)) and np.all(perm != np.arange(50))
    a = rng.integers(0, 15, 500)
    fake = resample_actions(a, 15, rng)
    assert np.all(fake != a) and fake.min() >= 0 and fake.max() < 15


def test_dynamics_uninformative_discriminator_gives_log2():
    model, suite, mb = setup(attachments=[att("dynamics", "actor", hidden=7)])
    for k in model.head("dyn_actor").keys():
        model.params[k] = np.zeros_like(model.params[k])
    loss, _ = dynamics_discriminator_loss(model, "actor", mb, np.random.default_rng(0), hidden=7)
    assert loss == pytest.approx(np.log(2), rel=1e-12)


def test_dynamics_weighting_masks_ood_actions():
    model, suite, mb = setup(attachments=[att("dynamics", "actor", hidden=7)])
    rng = np.random.default_rng(1)
    kw = dict(hidden=7, perm=derangement(10, rng), fake_actions=resample_actions(mb["actions"], 3, rng))
    loss, _, parts = dynamics_discriminator_loss(model, "actor", mb, None, w_ood_action=0.0,
                                                 return_parts=True, **kw)
    assert loss == pytest.approx((1.0 * parts[0] + 1.0 * parts[1]) / 2.0, rel=1e-12)
    loss, _, parts = dynamics_discriminator_loss(model, "actor", mb, None, return_parts=True, **kw)
    assert loss == pytest.approx((parts[0] + parts[1] + 0.5 * parts[2]) / 2.5, rel=1e-12)


def test_dynamics_separable_limit():
    model, suite, mb = setup(attachments=[att("dynamics", "actor", hidden=7)])
    rng = np.random.default_rng(2)
    kw = dict(hidden=7, perm=derangement(10, rng), fake_actions=resample_actions(mb["actions"], 3, rng))
    opt_loss = []
    from aclab.nn import AdamState, adam_step
    st = AdamState.create(model.params, model.actor_keys, lr=1e-2)
    for _ in range(1500):
        loss, g = dynamics_discriminator_loss(model, "actor", mb, None, **kw)
        adam_step(model.params, g, st, None)
        opt_loss.append(loss)
    assert opt_loss[-1] < 0.05 < opt_loss[0]


@pytest.mark.parametrize("which", ["actor", "critic"])
def test_advantage_gradient_and_values(which):
    model, suite, mb = setup(attachments=[att("advantage", which)])
    _, g = advantage_distill_loss(model, which, mb, mb["adv"])
    fn = lambda _p: advantage_distill_loss(model, which, mb, mb["adv"])[0]  # noqa: E731
    assert finite_difference_check(fn, model.params, g) < 1e-4
    for k in model.head(f"adv_{which}").keys():
        model.params[k] = np.zeros_like(model.params[k])
    t = mb["adv"]
    assert advantage_distill_loss(model, which, mb, t)[0] == pytest.approx(0.25 * np.mean(t ** 2), rel=1e-12)
    assert advantage_distill_loss(model, which, mb, np.zeros(10))[0] == 0.0


@pytest.mark.parametrize("which", ["actor", "critic"])
def test_augmentation_gradient_and_identity(which):
    model, suite, mb = setup()
    aug = mb["obs"] + 0.1 * np.random.default_rng(0).standard_normal(mb["obs"].shape)
    clean = model.policy_logits(mb["obs"]) if which == "actor" else model.value(mb["obs"])
    kw = dict(aug_obs=aug, clean=clean)
    _, g = augmentation_consistency_loss(model, which, mb, None, **kw)
    fn = lambda _p: augmentation_consistency_loss(model, which, mb, None, **kw)[0]  # noqa: E731
    assert finite_difference_check(fn, model.params, g) < 1e-4
    loss, _ = augmentation_consistency_loss(model, which, mb, np.random.default_rng(0), sigma=0.0, drop=0.0)
    assert loss == 0.0


def test_augmentation_kl_matches_summation():
    model, suite, mb = setup()
    aug = mb["obs"] * 0.5
    loss, _ = augmentation_consistency_loss(model, "actor", mb, None, coef=1.0, aug_obs=aug)
    p = model.policy_logits(mb["obs"])
    q = model.policy_logits(aug)
    pp = np.exp(p - np.logaddexp.reduce(p, axis=1, keepdims=True))
    qq = np.exp(q - np.logaddexp.reduce(q, axis=1, keepdims=True))
    direct = np.mean(np.sum(pp * np.log(pp / qq), axis=1))
    assert loss == pytest.approx(direct, rel=1e-10)
    assert np.mean(kl_categorical(p, q)) == pytest.approx(direct, rel=1e-10)


def test_augmentation_constant_value_head():
    model, suite, mb = setup()
    model.params["v.0.w"][:] = 0.0
    loss, _ = augmentation_consistency_loss(model, "critic", mb, np.random.default_rng(0), sigma=1.0)
    assert loss == 0.0


@pytest.mark.parametrize("obj", ["mico", "dynamics", "advantage", "augmentation"])
def test_attachment_isolation(obj):
    for target, other in (("actor", "critic"), ("critic", "actor")):
        model, suite, mb = setup(attachments=[att(obj, target)])
        grads, _ = suite.losses(model, mb, None, mb["adv"])
        keys = set(model.actor_keys if target == "actor" else model.critic_keys)
        assert grads and set(grads) <= keys
        off = set(model.critic_keys if target == "actor" else model.actor_keys)
        assert not set(grads) & off


def test_target_network_decay():
    model, suite, mb = setup(attachments=[att("mico", "actor", tau=0.1)])
    tgt = suite.targets["actor"]
    key = model.rep_keys("actor")[0]
    start = tgt.params[key].copy()
    model.params[key] = model.params[key] + 1.0
    online = model.params[key].copy()
    for _ in range(7):
        tgt.update(model.params)
    np.testing.assert_allclose(tgt.params[key] - online, 0.9 ** 7 * (start - online), rtol=1e-10)


def test_attachment_validation():
    with pytest.raises(ValueError):
        AuxAttachment("curiosity", "actor")
    with pytest.raises(ValueError):
        AuxAttachment("mico", "both")
    with pytest.raises(ValueError):
        AuxAttachment("mico", "actor", params={"gamma": 1})
    assert AuxAttachment("mico", "critic").tag == "mico(C)"
    assert AuxAttachment("advantage", "actor").coef == 0.25


@pytest.mark.parametrize("obj", ["dynamics", "advantage", "augmentation", "mico"])
def test_zero_coefficient_is_neutral(obj):
    env = AssemblyLine()
    levels = sample_level_set(env, 3, 0)
    cfg = TrainConfig(**SMALL)
    base = train("ppo", "decoupled", cfg, env, levels, 3 * cfg.batch_size, seed=1)
    zero = train("ppo", "decoupled", cfg, env, levels, 3 * cfg.batch_size, seed=1,
                 attachments=[AuxAttachment(obj, "actor", coef=0.0)])
    assert all(np.array_equal(base.model.params[k], zero.model.params[k]) for k in base.model.params)
