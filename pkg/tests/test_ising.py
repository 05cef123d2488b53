import numpy as np
import pytest

import envzoo
from gfnkit import rng
from gfnkit.envs.ising import (IsingEnvironment, all_configurations, back_and_forth_proposal, cd_gradient,
                               configurations_to_state, energy_grad, gibbs_data_sampler,
                               gibbs_exact_distribution, heat_bath_prob_plus, ising_energy, load_samples,
                               mh_accept, neg_log_rmse, save_samples, torus_adjacency)
from gfnkit.metrics import EmpiricalDistribution, tv_distance
from gfnkit.nn import MlpSpec, mlp_init
from gfnkit.oracles import enumerate_state_graph, exact_policy_marginal
from gfnkit.rollout import MlpPolicy


def naive_energy(x, J):
    total = 0.0
    for i in range(len(x)):
        for j in range(len(x)):
            total += x[i] * J[i][j] * x[j]
    return -total


def random_policy(env, seed):
    spec = MlpSpec(env.obs_dim, (16,), env.num_actions, env.num_bwd_actions)
    params = mlp_init(spec, rng.key(seed))
    params = {k: v * 3.0 for k, v in params.items()}   # sharpen so the policy is far from uniform
    return MlpPolicy(params, spec)


def keys(x):
    return [r.astype(np.int8).tobytes() for r in x]


def test_energy_examples():
    J = 0.1 * torus_adjacency(3)
    assert np.isclose(ising_energy(np.ones(9), J), -3.6)
    assert torus_adjacency(3).sum() == 36
    x = rng.generator(rng.key(0)).choice([-1, 1], size=(20, 9))
    assert np.allclose(ising_energy(x, J), ising_energy(-x, J))
    Jr = rng.generator(rng.key(1)).normal(size=(9, 9))
    Jr = Jr + Jr.T
    np.fill_diagonal(Jr, 0)
    for row in x:
        assert abs(ising_energy(row, Jr) - naive_energy(row.tolist(), Jr.tolist())) < 1e-10


def test_action_space_and_initial_mask():
    env = envzoo.ising(3)
    assert env.num_actions == 18
    assert not env.backward_action_mask(env.reset(1)[1]).any()


def test_trajectory_count_is_d_factorial():
    env = envzoo.ising(2)
    g = enumerate_state_graph(env)
    paths = np.zeros(g.num_states)
    paths[0] = 1
    for lvl in range(int(g.level.max())):
        e = g.level[g.src] == lvl
        np.add.at(paths, g.dst[e], paths[g.src[e]])
    assert np.all(paths[g.terminal_indices()] == 24)
    assert len(g.terminal_indices()) == 16


def test_gibbs_zero_coupling_is_uniform():
    x = gibbs_data_sampler(np.zeros((9, 9)), rng.key(2), 10_000, burn_in=10, thinning=1)
    assert x.shape == (10_000, 9)
    assert np.all(np.abs(x.mean(0)) < 3 / np.sqrt(10_000) * 1.0 + 1e-12)


def test_gibbs_two_by_two_matches_exact():
    J = 0.2 * torus_adjacency(2)
    x = gibbs_data_sampler(J, rng.key(3), 40_000, burn_in=100, thinning=2)
    exact = gibbs_exact_distribution(J)
    assert tv_distance(EmpiricalDistribution.from_keys(keys(x)), exact) < 0.02


def test_parallel_tempering_matches_exact():
    J = 0.4 * torus_adjacency(2)
    x = gibbs_data_sampler(J, rng.key(4), 40_000, burn_in=100, thinning=2, betas=[1.0, 0.6, 0.3])
    assert tv_distance(EmpiricalDistribution.from_keys(keys(x)), gibbs_exact_distribution(J)) < 0.02


def test_heat_bath_detailed_balance():
    J = 0.3 * torus_adjacency(2)
    xs = all_configurations(4).astype(np.float64)
    logp = -ising_energy(xs, J)
    pi = np.exp(logp - logp.max())
    pi /= pi.sum()
    index = {tuple(r): i for i, r in enumerate(xs.astype(int))}
    for site in range(4):
        P = np.zeros((16, 16))
        p_plus = heat_bath_prob_plus(J, xs, site)
        for i, x in enumerate(xs):
            for val, p in ((1, p_plus[i]), (-1, 1 - p_plus[i])):
                y = x.copy()
                y[site] = val
                P[i, index[tuple(y.astype(int))]] += p
        assert np.allclose(P.sum(1), 1)
        flow = pi[:, None] * P
        assert np.allclose(flow, flow.T, atol=1e-15)


def test_cd_gradient():
    x = rng.generator(rng.key(5)).choice([-1.0, 1.0], size=(6, 4))
    assert np.all(cd_gradient(x, x) == 0)
    g = cd_gradient(x[:1], x[1:2])
    want = np.outer(x[1], x[1]) - np.outer(x[0], x[0])
    np.fill_diagonal(want, 0)
    assert np.allclose(g, want) and np.allclose(g, g.T)


def test_energy_gradient_finite_differences():
    gen = rng.generator(rng.key(6))
    x = gen.choice([-1.0, 1.0], size=5)
    J = gen.normal(size=(5, 5))
    g = energy_grad(x)
    h = 1e-6
    for i in range(5):
        for j in range(5):
            if i == j:
                continue
            Jp, Jm = J.copy(), J.copy()
            Jp[i, j] += h
            Jm[i, j] -= h
            num = (ising_energy(x, Jp) - ising_energy(x, Jm)) / (2 * h)
            assert abs(num - g[i, j]) <= 1e-6 * abs(g[i, j])


def test_proposal_k_zero_is_identity():
    env = envzoo.ising(2)
    x = all_configurations(4)[:5]
    xp, lr = back_and_forth_proposal(random_policy(env, 0), env, x, 0, rng.key(7))
    assert np.array_equal(xp, x) and np.all(lr == 0)


def test_proposal_k_d_draws_from_policy_marginal():
    env = envzoo.ising(2)
    policy = random_policy(env, 1)
    n = 40_000
    x = np.repeat(all_configurations(4)[3:4], n, axis=0)
    xp, _ = back_and_forth_proposal(policy, env, x, 4, rng.key(8))
    marginal = exact_policy_marginal(env, policy)
    emp = EmpiricalDistribution.from_keys(keys(xp))
    for k, p in zip(marginal.keys, marginal.probs):
        assert abs(emp.counts[k] / n - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-9


def test_mh_with_partial_proposal_targets_gibbs():
    # chains started at the Gibbs law must stay there under K=1 moves with a skewed policy
    J = 0.3 * torus_adjacency(2)
    env = IsingEnvironment(J)
    policy = random_policy(env, 2)
    exact = gibbs_exact_distribution(J)
    start = rng.generator(rng.key(19)).choice(len(exact.keys), size=4000, p=exact.probs)
    x = exact.objects[start].copy()
    collected = []
    for it in range(30):
        k = rng.fold_in(rng.key(9), it)
        kp, km = rng.split(k, 2)
        xp, lr = back_and_forth_proposal(policy, env, x, 1, kp)
        x, _ = mh_accept(x, xp, lr, J, km)
        collected.append(x.copy())
    emp = EmpiricalDistribution.from_keys(keys(np.concatenate(collected)))
    assert tv_distance(emp, exact) < 0.02


def test_mh_acceptance_rules_and_rate():
    J = 0.3 * torus_adjacency(2)
    xs = all_configurations(4)
    same, acc = mh_accept(xs, xs, np.full(16, -50.0), J, rng.key(10))
    assert acc.all()
    low = np.ones((1, 4), dtype=np.int8)
    high = np.array([[1, -1, -1, 1]], dtype=np.int8)
    assert ising_energy(low, J)[0] < ising_energy(high, J)[0]
    assert mh_accept(high, low, [0.0], J, rng.key(11))[1].all()
    n = 10_000
    x = np.repeat(low, n, axis=0)
    y = np.repeat(high, n, axis=0)
    a = float(np.exp(ising_energy(low, J)[0] - ising_energy(high, J)[0] + 0.2))
    _, acc = mh_accept(x, y, np.full(n, 0.2), J, rng.key(12))
    assert abs(acc.mean() - a) < 3 * np.sqrt(a * (1 - a) / n)


def test_neg_log_rmse():
    J = 0.2 * torus_adjacency(3)
    assert np.isclose(neg_log_rmse(J, J + 0.01), 4.605, atol=1e-3)
    assert neg_log_rmse(J, J) == float("inf")
    gen = rng.generator(rng.key(13))
    err = gen.normal(size=J.shape)
    assert np.isclose(neg_log_rmse(J, J + err) - neg_log_rmse(J, J + 2 * err), np.log(2))


def test_configurations_to_state_rejects_zeros():
    with pytest.raises(ValueError):
        configurations_to_state(np.zeros((1, 4)))


def test_coupling_checks():
    with pytest.raises(ValueError):
        IsingEnvironment(np.ones((4, 4)))
    with pytest.raises(ValueError):
        IsingEnvironment(np.triu(np.ones((4, 4)), 1))


def test_samples_file_round_trip(tmp_path):
    x = gibbs_data_sampler(0.2 * torus_adjacency(3), rng.key(14), 50, burn_in=5, thinning=1)
    p = save_samples(x, 3, 0.2, tmp_path / "s.txt")
    y, side, sigma = load_samples(p)
    assert np.array_equal(x, y) and side == 3 and sigma == 0.2
