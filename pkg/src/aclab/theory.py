"""Exact-enumeration checks on the assembly line.

Everything here runs on plug-in probabilities of enumerated states and transitions
under an explicit policy, so no estimator error enters a check. A representation is
any callable ``rep(states, obs) -> (m, d) array``; rows that compare equal are the same
latent state.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .envs.assembly import ACCEPT, REJECT, AssemblyLine
from .envs.base import EnvState, UnsupportedEnvironment
from .info.exact import codes, exact_cmi, exact_mi
from .nn import softmax

# --- policies ------------------------------------------------------------------


def optimal_policy(env):
    def pi(states, obs):
        out = np.zeros((len(states), 2))
        for i, s in enumerate(states):
            out[i, env.optimal_action(s)] = 1.0
        return out
    return pi


def uniform_policy(env):
    return lambda states, obs: np.full((len(states), env.spec.n_actions), 1.0 / env.spec.n_actions)


def mixture_policy(env, rng: np.random.Generator, weight: float):
    """Per-state random blend of the optimal and uniform policies, fixed once drawn."""
    opt, cache = optimal_policy(env), {}

    def pi(states, obs):
        out = []
        for s, p_opt in zip(states, opt(states, obs)):
            key = (s.level.context_id, s.step_index)
            if key not in cache:
                cache[key] = weight * float(rng.random())
            w = cache[key]
            out.append(w * p_opt + (1 - w) * 0.5)
        return np.array(out)
    return pi


def model_policy(model):
    return lambda states, obs: softmax(model.policy_logits(obs))


def probe_policies(env, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return {"uniform": uniform_policy(env), "optimal": optimal_policy(env),
            "mixture_a": mixture_policy(env, rng, 0.5), "mixture_b": mixture_policy(env, rng, 0.9)}


# --- representations -------------------------------------------------------------


_PHASES = {"inspect": 0, "failed": 1, "complete": 2}


def identity_representation(states, obs):
    return np.array([[s.level.context_id, s.step_index, _PHASES[s.internal]] for s in states], dtype=float)


def constant_representation(states, obs):
    return np.zeros((len(states), 1))


def optimal_actor_representation(env):
    """z = 0 where accepting is optimal, 1 where rejecting is."""
    def rep(states, obs):
        return np.array([[env.optimal_action(s) if not s.done else -1] for s in states], dtype=float)
    return rep


def optimal_critic_representation(env, gamma: float | None = None):
    """One latent per distinct optimal value (values equal to 1e-9 share a latent)."""
    g = env.spec.gamma if gamma is None else gamma

    def rep(states, obs):
        return np.array([[round(env.optimal_value(s, g), 9)] for s in states])
    return rep


def model_representation(model, which: str = "actor"):
    return lambda states, obs: model.represent(obs, which)


# --- enumerated chain ----------------------------------------------------------------


@dataclass
class ExactChain:
    states: list
    obs: np.ndarray
    context: np.ndarray          # per state
    terminal: np.ndarray         # per state
    visit: np.ndarray            # per state, sum over timesteps of P(c) P(reach)
    values: np.ndarray           # per state, V^pi
    src: np.ndarray              # per transition
    act: np.ndarray
    dst: np.ndarray
    weight: np.ndarray           # P(c) P(reach src) pi(a|src)
    reward: np.ndarray

    def state_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Visitation distribution over non-terminal states (indices, probabilities)."""
        idx = np.flatnonzero(~self.terminal & (self.visit > 0))
        w = self.visit[idx]
        return idx, w / w.sum()

    def transitions(self, include_terminal: bool = False):
        keep = self.weight > 0
        if not include_terminal:
            keep &= ~self.terminal[self.dst]
        w = self.weight[keep]
        return self.src[keep], self.act[keep], self.dst[keep], w / w.sum()


def _require_enumerable(env):
    if not hasattr(env, "enumerate_states"):
        raise UnsupportedEnvironment(f"{getattr(env, 'kind', env)} cannot be enumerated")


def build_chain(env, levels, policy, level_weights=None, gamma: float | None = None) -> ExactChain:
    _require_enumerable(env)
    gamma = env.spec.gamma if gamma is None else gamma
    levels = list(levels)
    pc = np.full(len(levels), 1.0 / len(levels)) if level_weights is None else np.asarray(level_weights, float)
    index: dict = {}
    states, obs, context, terminal = [], [], [], []
    visit, values = [], []
    src, act, dst, weight, reward = [], [], [], [], []

    def sid(s: EnvState, o):
        key = (s.level.context_id, s.step_index, s.internal)
        if key not in index:
            index[key] = len(states)
            states.append(s)
            obs.append(o)
            context.append(s.level.context_id)
            terminal.append(s.done)
            visit.append(0.0)
            values.append(0.0)
        return index[key]

    for lv, p_level in zip(levels, pc):
        for s, o in env.enumerate_states(lv):
            sid(s, o)
        n = lv.payload["n_parts"]
        inspect = [EnvState(lv, t, "inspect") for t in range(n)]
        o_in = np.array([env.observe(s) for s in inspect])
        probs = policy(inspect, o_in)
        reach = np.zeros(n + 1)
        reach[0] = 1.0
        nexts = []
        for t, s in enumerate(inspect):
            i = index[(lv.context_id, t, "inspect")]
            visit[i] += p_level * reach[t]
            row = []
            for a in range(env.spec.n_actions):
                s2, r, d, o2 = env.step(s, a)
                j = sid(s2, o2)
                src.append(i)
                act.append(a)
                dst.append(j)
                weight.append(p_level * reach[t] * probs[t, a])
                reward.append(r)
                if not d:
                    reach[t + 1] += reach[t] * probs[t, a]
                row.append((j, r, d))
            nexts.append(row)
        for t in reversed(range(n)):
            i = index[(lv.context_id, t, "inspect")]
            values[i] = sum(probs[t, a] * (r + (0.0 if d else gamma * values[j]))
                            for a, (j, r, d) in enumerate(nexts[t]))
    return ExactChain(states, np.array(obs), np.array(context), np.array(terminal, dtype=bool),
                      np.array(visit), np.array(values), np.array(src), np.array(act), np.array(dst),
                      np.array(weight), np.array(reward))


def latent_table(chain: ExactChain, rep) -> np.ndarray:
    z = np.asarray(rep(chain.states, chain.obs), dtype=np.float64)
    return z.reshape(len(chain.states), -1)


# --- stationary distributions ------------------------------------------------------


def stationary_distribution(chain: ExactChain, rep) -> tuple[dict, dict]:
    """mu(z) over all levels and mu(z|c) per level, from full-episode visitation."""
    z = latent_table(chain, rep)
    idx, w = chain.state_weights()
    keys = [tuple(row) for row in z[idx]]
    mu: dict = {}
    per: dict = {}
    for key, c, p in zip(keys, chain.context[idx], w):
        mu[key] = mu.get(key, 0.0) + p
        per.setdefault(int(c), {})
        per[int(c)][key] = per[int(c)].get(key, 0.0) + p
    for c, table in per.items():
        tot = sum(table.values())
        per[c] = {k: v / tot for k, v in table.items()}
    return mu, per


# --- Markov check --------------------------------------------------------------------


def _group_prob(w, code):
    return np.bincount(code, weights=w)[code]


@dataclass
class MarkovReport:
    delta_inverse: float
    delta_density: float
    inverse_residual: float
    density_residual: float
    mi_xx_a: float
    mi_zz_a: float
    mi_x_x: float
    mi_z_z: float

    @property
    def certified(self) -> bool:
        return self.delta_inverse <= 1e-9 and self.delta_density <= 1e-9

    @property
    def direction_ok(self) -> bool:
        return self.delta_inverse >= -1e-10 and self.delta_density >= -1e-10


def markov_check(env, levels, policy, rep, chain: ExactChain | None = None) -> MarkovReport:
    chain = chain or build_chain(env, levels, policy)
    z = latent_table(chain, rep)
    src, act, dst, w = chain.transitions()
    zs, zd = z[src], z[dst]
    mi_xx_a = exact_mi(w, np.stack([src, dst], 1), act)
    mi_zz_a = exact_mi(w, np.hstack([zs, zd]), act)
    mi_x_x = exact_mi(w, src, dst)
    mi_z_z = exact_mi(w, zs, zd)
    # P(a | x, x') against P(a | z, z')
    cx, cz = codes(src, dst), codes(zs, zd)
    cxa, cza = codes(src, dst, act), codes(zs, zd, act)
    inv = np.abs(_group_prob(w, cxa) / _group_prob(w, cx) - _group_prob(w, cza) / _group_prob(w, cz))
    # P(x, x') / (P(x) P(x')) against the same ratio in latent space
    rx = _group_prob(w, cx) / (_group_prob(w, codes(src)) * _group_prob(w, codes(dst)))
    rz = _group_prob(w, cz) / (_group_prob(w, codes(zs)) * _group_prob(w, codes(zd)))
    return MarkovReport(mi_xx_a - mi_zz_a, mi_x_x - mi_z_z, float(inv.max()), float(np.abs(rx - rz).max()),
                        mi_xx_a, mi_zz_a, mi_x_x, mi_z_z)


# --- state-level information quantities -------------------------------------------------


def state_information(chain: ExactChain, rep, values: np.ndarray | None = None) -> dict:
    """I(Z;L), I(Z;V), I(Z;V|L), I(Z;L|V) and I(O;L) under the visitation distribution."""
    z = latent_table(chain, rep)
    idx, w = chain.state_weights()
    v = np.round((chain.values if values is None else values)[idx], 9)
    c = chain.context[idx]
    zi = z[idx]
    return {
        "I(Z;L)": exact_mi(w, zi, c),
        "I(Z;V)": exact_mi(w, zi, v),
        "I(Z;V|L)": exact_cmi(w, zi, v, c),
        "I(Z;L|V)": exact_cmi(w, zi, c, v),
        "I(O;L)": exact_mi(w, chain.obs[idx], c),
        "H(L)": exact_mi(w, c, c),
    }


def optimal_values(env, chain: ExactChain, gamma: float | None = None) -> np.ndarray:
    return np.array([env.optimal_value(s, gamma) for s in chain.states])


# --- generalisation bound ---------------------------------------------------------


def generalisation_bound(d: float, n_levels: int, mi: float, slack: float = 0.0) -> float:
    """sqrt(2 D^2 / |L| * I), with ``slack`` nats added to I before the root."""
    if n_levels < 1:
        raise ValueError("need at least one level")
    return math.sqrt(2.0 * d * d / n_levels * (max(mi, 0.0) + slack))


@dataclass
class BoundReport:
    train_return: float
    test_return: float
    mi: float
    d: float
    n_levels: int
    slack: float = 0.05

    @property
    def gap(self) -> float:
        return self.train_return - self.test_return

    @property
    def bound(self) -> float:
        return generalisation_bound(self.d, self.n_levels, self.mi)

    @property
    def bound_with_slack(self) -> float:
        return generalisation_bound(self.d, self.n_levels, self.mi, self.slack)

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound_with_slack

    def as_dict(self) -> dict:
        return {"train_return": self.train_return, "test_return": self.test_return, "gap": self.gap,
                "mi": self.mi, "D": self.d, "n_levels": self.n_levels, "bound": self.bound,
                "bound_with_slack": self.bound_with_slack, "holds": self.holds}


def generalisation_bound_check(model, env, train_levels, test_levels, mi: float, slack: float = 0.05,
                               episodes: int = 256, rng=None) -> BoundReport:
    """Gap of discounted initial-state values versus the bound. Exact on the assembly line."""
    if isinstance(env, AssemblyLine):
        from .agents.evaluate import assembly_expected_return
        g = env.spec.gamma
        tr = assembly_expected_return(model, env, train_levels, g)
        te = assembly_expected_return(model, env, test_levels, g)
    else:
        from .agents.evaluate import evaluate_returns
        rng = rng or np.random.default_rng(0)
        tr = evaluate_returns(model, env, train_levels, episodes, rng, discounted=True)
        te = evaluate_returns(model, env, test_levels, episodes, rng, discounted=True)
    return BoundReport(tr, te, float(mi), env.reward_bound, len(list(train_levels)), slack)


# --- latent-measurable policies ----------------------------------------------------------


def latent_policy_returns(env, levels, rep, gamma: float | None = None) -> tuple[dict, np.ndarray]:
    """Exhaustive search over deterministic maps from latent states to actions.

    Returns the best map (by level-mean return) and its per-level returns.
    """
    g = env.spec.gamma if gamma is None else gamma
    levels = list(levels)
    per_level = []
    keys: set = set()
    for lv in levels:
        states = [EnvState(lv, t, "inspect") for t in range(lv.payload["n_parts"])]
        z = np.asarray(rep(states, np.array([env.observe(s) for s in states]))).reshape(len(states), -1)
        row = [tuple(r) for r in z]
        keys.update(row)
        per_level.append((lv, row))
    keys = sorted(keys)
    if len(keys) > 16:
        raise ValueError(f"{len(keys)} latent states is too many for exhaustive search")
    best, best_ret = None, None
    for assignment in itertools.product((ACCEPT, REJECT), repeat=len(keys)):
        table = dict(zip(keys, assignment))
        rets = np.array([_rollout_fixed(env, lv, [table[k] for k in row], g) for lv, row in per_level])
        if best_ret is None or rets.mean() > best_ret.mean() + 1e-12:
            best, best_ret = table, rets
    return best, best_ret


def _rollout_fixed(env, level, actions, gamma) -> float:
    s, _ = env.reset(level)
    total, disc = 0.0, 1.0
    while not s.done:
        s, r, d, _ = env.step(s, actions[s.step_index])
        total += disc * r
        disc *= gamma
    return total


# --- verification suite -----------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    tolerance: float | None = None


def exhaustive_levels(env: AssemblyLine, n_parts: int, seed: int = 0) -> list:
    """One level per defect pattern of length ``n_parts``."""
    rng = np.random.default_rng(seed)
    combos = itertools.product((False, True), repeat=n_parts)
    return [env.level_from_flags(i, flags, seed=int(rng.integers(2 ** 31))) for i, flags in enumerate(combos)]


def patterned_levels(env: AssemblyLine, rates, n_parts: int, seed: int = 0) -> list:
    """Levels of ``n_parts`` parts with round(rate * n_parts) defective parts each, shuffled."""
    rng = np.random.default_rng(seed)
    out = []
    for i, rate in enumerate(rates):
        flags = np.zeros(n_parts, dtype=bool)
        flags[:int(round(rate * n_parts))] = True
        rng.shuffle(flags)
        out.append(env.level_from_flags(i, flags, seed=int(rng.integers(2 ** 31)), p_fail=rate))
    return out


def value_cap_representation(env, cap: float, gamma: float | None = None):
    """z = min(V*, cap): interpolates from level-invariant (cap 0) to full value encoding."""
    g = env.spec.gamma if gamma is None else gamma
    return lambda states, obs: np.array([[round(min(env.optimal_value(s, g), cap), 9)] for s in states])


def context_representation(states, obs):
    return np.array([[s.level.context_id] for s in states], dtype=float)


def lemma_checks(env: AssemblyLine | None = None, seed: int = 0) -> list[CheckResult]:
    env = env or AssemblyLine(n_min=10, n_max=10, gamma=1.0)
    out = []
    phi_a = optimal_actor_representation(env)
    het = patterned_levels(env, [0.1, 0.9], 10, seed)
    info_het = state_information(build_chain(env, het, optimal_policy(env)), phi_a)
    out.append(CheckResult("lemma1_heterogeneous", info_het["I(Z;L)"] > 1e-6 and info_het["I(O;L)"] > 0,
                           {"I(Z*_A;L)": info_het["I(Z;L)"], "I(O;L)": info_het["I(O;L)"]}))
    rng = np.random.default_rng(seed)
    flags = rng.random(10) < 0.3
    hom = [env.level_from_flags(i, flags, seed=int(rng.integers(2 ** 31))) for i in range(4)]
    chain_hom = build_chain(env, hom, optimal_policy(env))
    info_hom = state_information(chain_hom, phi_a)
    out.append(CheckResult("lemma1_homogeneous", abs(info_hom["I(Z;L)"]) <= 1e-10 and info_hom["I(O;L)"] > 0,
                           {"I(Z*_A;L)": info_hom["I(Z;L)"], "I(O;L)": info_hom["I(O;L)"]}, 1e-10))
    ctx = state_information(chain_hom, context_representation)
    out.append(CheckResult("context_identification", abs(ctx["I(Z;L)"] - math.log(len(hom))) <= 1e-10,
                           {"I(Z;L)": ctx["I(Z;L)"], "ln|L|": math.log(len(hom))}, 1e-10))
    # value-capped family on levels of varying length
    fam_env = AssemblyLine(n_min=2, n_max=8, gamma=1.0)
    levels = [fam_env.level_from_flags(i, np.zeros(n, dtype=bool), seed=i) for i, n in enumerate((2, 4, 6, 8))]
    chain = build_chain(fam_env, levels, optimal_policy(fam_env))
    v_star = optimal_values(fam_env, chain)
    series = []
    for cap in range(0, 9):
        info = state_information(chain, value_cap_representation(fam_env, cap), v_star)
        series.append((info["I(Z;V)"] - info["I(Z;V|L)"], info["I(Z;L)"], info))
    series.sort(key=lambda s: s[0])
    mono = all(b[1] >= a[1] - 1e-12 for a, b in zip(series, series[1:]))
    chain_rule = max(abs(i["I(Z;V)"] - (i["I(Z;V|L)"] + i["I(Z;L)"] - i["I(Z;L|V)"])) for _, _, i in series)
    out.append(CheckResult("lemma2_monotone", mono and series[-1][1] > series[0][1],
                           {"level_specific": [s[0] for s in series], "I(Z;L)": [s[1] for s in series]}))
    out.append(CheckResult("chain_rule", chain_rule <= 1e-10, {"max_residual": chain_rule}, 1e-10))
    return out


def markov_checks(env: AssemblyLine | None = None, seed: int = 0) -> list[CheckResult]:
    env = env or AssemblyLine()
    from .envs.base import sample_level_set
    levels = sample_level_set(env, 12, seed)
    out = []
    directions = []
    for name, pi in probe_policies(env, seed).items():
        chain = build_chain(env, levels, pi)
        inj = markov_check(env, levels, pi, identity_representation, chain)
        const = markov_check(env, levels, pi, constant_representation, chain)
        phi_a = markov_check(env, levels, pi, optimal_actor_representation(env), chain)
        directions += [inj.direction_ok, const.direction_ok, phi_a.direction_ok]
        out.append(CheckResult(f"injective_certified[{name}]", inj.certified,
                               {"delta_inverse": inj.delta_inverse, "delta_density": inj.delta_density}, 1e-9))
        if const.mi_xx_a > 1e-9 or const.mi_x_x > 1e-9:
            out.append(CheckResult(f"constant_rejected[{name}]", not const.certified,
                                   {"delta_inverse": const.delta_inverse, "delta_density": const.delta_density}))
        if name == "optimal":
            out.append(CheckResult("actor_optimal_not_markov",
                                   abs(phi_a.delta_inverse) <= 1e-9 and phi_a.delta_density > 1e-9,
                                   {"delta_inverse": phi_a.delta_inverse, "delta_density": phi_a.delta_density,
                                    "inverse_residual": phi_a.inverse_residual}))
    out.append(CheckResult("data_processing_direction", all(directions), tolerance=1e-10))
    return out


def representation_checks(env: AssemblyLine | None = None, seed: int = 0) -> list[CheckResult]:
    env = env or AssemblyLine(gamma=1.0)
    from .envs.base import sample_level_set
    out = []
    phi_a, phi_c = optimal_actor_representation(env), optimal_critic_representation(env, 1.0)
    exhaustive = exhaustive_levels(env, 3, seed)
    zz = markov_check(env, exhaustive, optimal_policy(env), phi_a)
    out.append(CheckResult("actor_optimal_zz_zero", abs(zz.mi_z_z) <= 1e-10, {"I(Z*_A;Z*_A')": zz.mi_z_z}, 1e-10))
    levels = sample_level_set(env, 40, seed)
    chain = build_chain(env, levels, optimal_policy(env), gamma=1.0)
    mu, _ = stationary_distribution(chain, phi_a)
    idx, w = chain.state_weights()
    pooled = float(np.sum(w * np.array([s.level.payload["flags"][s.step_index] for s in
                                         (chain.states[i] for i in idx)])))
    out.append(CheckResult("stationary_actor", abs(mu.get((1.0,), 0.0) - pooled) <= 1e-12,
                           {"mu(z1)": mu.get((1.0,), 0.0), "pooled_defect_rate": pooled}, 1e-12))
    v_star = optimal_values(env, chain, 1.0)
    ia = state_information(chain, phi_a, v_star)
    ic = state_information(chain, phi_c, v_star)
    h_v = exact_mi(chain.state_weights()[1], v_star[idx].round(9), v_star[idx].round(9))
    out.append(CheckResult("critic_value_determined", abs(ic["I(Z;V)"] - h_v) <= 1e-10,
                           {"I(Z*_C;V)": ic["I(Z;V)"], "H(V)": h_v}, 1e-10))
    out.append(CheckResult("critic_more_level_info", ic["I(Z;L)"] > ia["I(Z;L)"],
                           {"I(Z*_C;L)": ic["I(Z;L)"], "I(Z*_A;L)": ia["I(Z;L)"]}))
    _, rets_a = latent_policy_returns(env, levels, phi_a, 1.0)
    optimum = np.array([env.optimal_return(lv, 1.0) for lv in levels])
    out.append(CheckResult("actor_optimality_conservation", bool(np.allclose(rets_a, optimum, atol=1e-12)),
                           {"max_gap": float(np.max(optimum - rets_a))}, 1e-12))
    _, rets_c = latent_policy_returns(env, levels, phi_c, 1.0)
    out.append(CheckResult("critic_incompatible", bool(rets_c.mean() < optimum.mean() - 1e-9
                                                       and np.all(rets_c <= optimum + 1e-12)),
                           {"best_latent_mean": float(rets_c.mean()), "optimal_mean": float(optimum.mean())}))
    # when rejection is the best blind response, every level with a good part loses
    risky = [env.make_level(i, int(s), p_fail=0.8) for i, s in enumerate(np.random.default_rng(seed).integers(2 ** 31, size=40))]
    best, rets_r = latent_policy_returns(env, risky, phi_c, 1.0)
    opt_r = np.array([env.optimal_return(lv, 1.0) for lv in risky])
    good = np.array([not lv.payload["flags"].all() for lv in risky])
    out.append(CheckResult("critic_incompatible_per_level",
                           bool(all(a == REJECT for a in best.values()) and np.all(rets_r[good] < opt_r[good] - 1e-9)),
                           {"levels_with_good_part": int(good.sum()), "best_policy_rejects_all":
                            all(a == REJECT for a in best.values())}))
    return out


def verify_assembly(seed: int = 0) -> list[CheckResult]:
    return markov_checks(seed=seed) + lemma_checks(seed=seed) + representation_checks(seed=seed)
