import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tdbounds import problems
from tdbounds.engine import (
    NoiseModel,
    StepsizeSchedule,
    decompose_error,
    default_checkpoints,
    extract_noise,
    interpolate,
    ode_solution,
    run_trajectory,
    simulate_batch,
    td0_step,
    td_error,
    trial_rng,
)
from tdbounds.exceptions import (
    ContractError,
    DimensionError,
    DivergenceError,
    DomainError,
)
from tdbounds.mdp import Problem, Sample


def support(problem):
    s, nu = problem.spec, problem.nu
    for i in range(s.n_states):
        for j in range(s.n_states):
            w = nu[i] * s.transition[i, j]
            if w > 0:
                yield w, Sample(s.features[i], s.features[j], s.reward[i, j])


class TestSchedule:
    def test_values(self):
        sch = StepsizeSchedule(0.5)
        np.testing.assert_allclose(sch.alphas(3), [1.0, 2 ** -0.5, 3 ** -0.5])
        np.testing.assert_allclose(sch.times(3), np.concatenate([[0.0], np.cumsum(sch.alphas(3))]))

    @pytest.mark.parametrize("sigma", [0.0, -0.1, 1.5])
    def test_domain(self, sigma):
        with pytest.raises(DomainError):
            StepsizeSchedule(sigma)

    def test_default_checkpoints(self):
        c = default_checkpoints(100)
        assert c[0] == 0 and c[-1] == 100 and np.all(np.diff(c) > 0)
        assert {1, 2, 3}.issubset(set(c.tolist()))


class TestStep:
    def test_const_chain_example(self):
        smp = Sample(np.array([0.5]), np.array([0.5]), 1.0)
        assert td_error(np.array([0.0]), smp, 0.5) == 1.0
        np.testing.assert_allclose(td0_step(np.array([0.0]), smp, 1.0, 0.5), [0.5])
        # fixed point of the update
        np.testing.assert_allclose(td0_step(np.array([4.0]), smp, 0.3, 0.5), [4.0])

    def test_zero_step_is_identity(self):
        smp = Sample(np.array([0.1, -0.2]), np.array([0.3, 0.4]), -0.7)
        th = np.array([1.5, -2.5])
        np.testing.assert_array_equal(td0_step(th, smp, 0.0, 0.9), th)

    def test_dimension_and_domain(self):
        smp = Sample(np.array([0.5]), np.array([0.5]), 1.0)
        with pytest.raises(DimensionError):
            td0_step(np.zeros(2), smp, 0.1, 0.5)
        with pytest.raises(DomainError):
            td0_step(np.zeros(1), smp, -0.1, 0.5)


class TestNoise:
    @pytest.mark.parametrize("name", ["noisy_chain", "random_5x3"])
    def test_mean_zero_by_enumeration(self, name, request):
        prob = request.getfixturevalue(name)
        rng = np.random.default_rng(0)
        for _ in range(5):
            th = rng.normal(size=prob.dim) * 3
            mean = sum(w * extract_noise(smp, th, prob.system) for w, smp in support(prob))
            assert np.max(np.abs(mean)) <= 1e-12 * (1 + np.linalg.norm(th))

    def test_const_chain_noise_vanishes(self, const_chain):
        smp = next(support(const_chain))[1]
        for th in ([0.0], [4.0], [-7.0]):
            np.testing.assert_allclose(extract_noise(smp, np.array(th), const_chain.system), [0.0],
                                       atol=1e-15)

    def test_raw_system_rejected(self, counterexample):
        smp = Sample(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(ContractError):
            extract_noise(smp, np.zeros(2), counterexample.system)

    def test_linear_growth_bound(self, random_5x3):
        # |M| <= K (1 + |theta - theta*|) with K the sup of |M| at theta*
        # plus the operator norm of theta -> M(theta) - M(theta*)
        s = random_5x3.system
        k0 = max(np.linalg.norm(extract_noise(smp, s.theta_star, s)) for _, smp in support(random_5x3))
        k1 = 0.0
        for _, smp in support(random_5x3):
            g = np.outer(smp.phi, s.gamma * smp.phi_next - smp.phi) + s.a_matrix
            k1 = max(k1, np.linalg.norm(g, 2))
        k = max(k0, k1)
        rng = np.random.default_rng(1)
        for _ in range(200):
            th = s.theta_star + rng.normal(size=3) * rng.exponential(5)
            dist = np.linalg.norm(th - s.theta_star)
            for _, smp in support(random_5x3):
                assert np.linalg.norm(extract_noise(smp, th, s)) <= k * (1 + dist) * (1 + 1e-12)


class TestSimulation:
    def test_reconstruction(self, noisy_chain):
        rec = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [0.0], 2000,
                             seed=3, full=True)
        s = noisy_chain.system
        al = rec.schedule.alphas(rec.n_max)
        pred = rec.thetas[:-1] + al[:, None] * (
            s.b_vector - rec.thetas[:-1] @ s.a_matrix.T + rec.noise)
        np.testing.assert_allclose(rec.thetas[1:], pred, atol=1e-12)

    def test_noise_matches_extract(self, random_5x3):
        rec = run_trajectory(random_5x3, NoiseModel(), StepsizeSchedule(0.7), np.ones(3), 50,
                             seed=5, full=True)
        s = random_5x3.system
        # recover each sample from the increment and compare
        spec = random_5x3.spec
        for n in range(50):
            best = None
            for i in range(spec.n_states):
                for j in range(spec.n_states):
                    smp = Sample(spec.features[i], spec.features[j], spec.reward[i, j])
                    nxt = td0_step(rec.thetas[n], smp, rec.schedule.alpha(n), spec.gamma)
                    if np.allclose(nxt, rec.thetas[n + 1], atol=1e-13, rtol=0):
                        best = smp
            assert best is not None
            np.testing.assert_allclose(rec.noise[n], extract_noise(best, rec.thetas[n], s),
                                       atol=1e-12)

    def test_const_chain_monotone(self, const_chain):
        rec = run_trajectory(const_chain, NoiseModel(), StepsizeSchedule(1.0), [0.0], 10 ** 4,
                             seed=0, full=True)
        assert np.all(np.diff(rec.err_norms) < 0)
        assert np.max(np.abs(rec.noise)) <= 1e-15
        assert rec.err_norms[0] == 4.0

    def test_noiseless_matches_closed_product(self, const_chain):
        n = 500
        rec = run_trajectory(const_chain, NoiseModel.none(), StepsizeSchedule(0.6), [0.0], n,
                             checkpoints=[n])
        al = StepsizeSchedule(0.6).alphas(n)
        expect = 4.0 - 4.0 * np.prod(1 - 0.125 * al)
        np.testing.assert_allclose(rec.theta_at(n), [expect], rtol=1e-13)

    def test_counterexample_noiseless_limit(self, counterexample):
        rec = run_trajectory(counterexample, NoiseModel.none(), StepsizeSchedule(0.5), [0.0, 5.0],
                             10 ** 5)
        th = rec.theta_at(10 ** 5)
        assert th[1] == 5.0
        np.testing.assert_allclose(th, [-3.0, 5.0], atol=1e-10)

    def test_counterexample_bernoulli_freezes_coordinate(self, counterexample):
        noise = problems.counterexample_noise()
        rec = run_trajectory(counterexample, noise, StepsizeSchedule(0.5), [0.0, 5.0], 500,
                             seed=2, full=True)
        # the second row of A is zero, so coordinate 1 moves by noise alone
        ok = rec.thetas[:-1, 1] != 1.0
        dev = rec.thetas[:-1, 1][ok] - 1.0
        z = np.diff(rec.thetas[:, 1])[ok] / (rec.schedule.alphas(500)[ok] * dev)
        np.testing.assert_allclose(np.abs(z), 1.0, rtol=1e-9)

    def test_divergence(self):
        prob = Problem.raw([[-1.0]], [0.0])
        with pytest.raises(DivergenceError) as info:
            run_trajectory(prob, NoiseModel.none(), StepsizeSchedule(0.5), [1.0], 2000)
        assert 0 < info.value.step < 2000

    def test_batch_divergence_freezes_only_that_trial(self):
        prob = Problem.raw([[-1.0]], [0.0], theta_ref=[0.0])
        noise = NoiseModel.bernoulli_rank_one([1.0], 0, [0.0])
        res = simulate_batch(prob, noise, StepsizeSchedule(0.5), [1.0], 3000,
                             [trial_rng(0, i) for i in range(3)])
        assert np.all(res.diverged_at > 0)
        assert np.all(np.isfinite(res.thetas))

    def test_mdp_noise_needs_sampler(self, counterexample):
        with pytest.raises(ContractError):
            simulate_batch(counterexample, NoiseModel(), StepsizeSchedule(0.5), [0.0, 0.0], 10,
                           [trial_rng(0)])

    def test_windows(self, noisy_chain):
        rngs = [trial_rng(4, i) for i in range(6)]
        res = simulate_batch(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [3.0], 400, rngs,
                             record="norms", windows=[(10, 200, 0.5), (0, 400, 1e9)])
        np.testing.assert_array_equal(res.window_max[:, 0], res.full_err[:, 10:201].max(axis=1))
        for t in range(6):
            over = np.nonzero(res.full_err[t, 10:201] > 0.5)[0]
            assert res.window_first[t, 0] == (over[0] + 10 if over.size else -1)
        assert np.all(res.window_first[:, 1] == -1)

    def test_batch_row_independence(self, random_5x3):
        sch = StepsizeSchedule(0.6)
        together = simulate_batch(random_5x3, NoiseModel(), sch, np.zeros(3), 300,
                                  [trial_rng(8, i) for i in range(5)])
        for i in range(5):
            alone = simulate_batch(random_5x3, NoiseModel(), sch, np.zeros(3), 300,
                                   [trial_rng(8, i)])
            np.testing.assert_array_equal(alone.thetas[0], together.thetas[i])


class TestOde:
    def test_const_chain_example(self, const_chain):
        u = ode_solution(const_chain.system, 8.0, 0.0, [0.0])
        np.testing.assert_allclose(u, [4 - 4 * np.exp(-1)], rtol=1e-14)
        assert u[0] == pytest.approx(2.5285, abs=1e-4)

    def test_semigroup_and_start(self, random_5x3):
        s = random_5x3.system
        u0 = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(ode_solution(s, 1.0, 1.0, u0), u0, atol=1e-15)
        mid = ode_solution(s, 2.0, 0.5, u0)
        np.testing.assert_allclose(ode_solution(s, 3.5, 2.0, mid), ode_solution(s, 3.5, 0.5, u0),
                                   atol=1e-12)

    def test_rk4_oracle(self, random_5x3):
        s = random_5x3.system
        u0 = np.array([1.0, -2.0, 0.5])
        t = 2.0
        h = 1e-3
        x = u0.copy()
        f = lambda v: s.b_vector - s.a_matrix @ v
        for _ in range(int(t / h)):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        np.testing.assert_allclose(ode_solution(s, t, 0.0, u0), x, atol=1e-10)

    def test_time_order(self, const_chain):
        with pytest.raises(DomainError):
            ode_solution(const_chain.system, 1.0, 2.0, [0.0])


class TestInterpolate:
    @pytest.fixture
    def rec(self, noisy_chain):
        return run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [1.0], 20,
                              seed=1, full=True)

    def test_nodes_and_midpoint(self, rec):
        np.testing.assert_array_equal(interpolate(rec, rec.times[7]), rec.thetas[7])
        mid = 0.5 * (rec.times[3] + rec.times[4])
        np.testing.assert_allclose(interpolate(rec, mid), 0.5 * (rec.thetas[3] + rec.thetas[4]))

    def test_range(self, rec):
        with pytest.raises(ContractError):
            interpolate(rec, rec.times[-1] + 1e-9)

    def test_gap_between_checkpoints(self, noisy_chain):
        rec = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [1.0], 20,
                             seed=1, checkpoints=[0, 5, 20])
        with pytest.raises(ContractError):
            interpolate(rec, 0.5 * (rec.times[1] + rec.times[2]))


def riemann_decomposition(rec, a, ref, l1, l2, sub=400):
    """Fine midpoint-rule integrals of the two perturbation terms."""
    t = rec.times
    al = rec.schedule.alphas(rec.n_max)
    d = a.shape[0]
    e_disc = np.zeros(d)
    e_mart = np.zeros(d)
    for k in range(l1, l2):
        h = al[k] / sub
        for j in range(sub):
            tau = t[k] + (j + 0.5) * h
            e = scipy.linalg.expm(-a * (t[l2] - tau))
            frac = (tau - t[k]) / al[k]
            e_mart += h * e @ rec.noise[k]
            e_disc += h * frac * e @ (a @ (rec.thetas[k + 1] - rec.thetas[k]))
    return e_disc, e_mart


class TestDecomposition:
    @pytest.mark.parametrize("l1,l2", [(0, 1), (0, 40), (13, 27), (100, 400)])
    def test_residual(self, random_5x3, l1, l2):
        rec = run_trajectory(random_5x3, NoiseModel(), StepsizeSchedule(0.5), np.zeros(3), 400,
                             seed=7, full=True)
        dec = decompose_error(rec, random_5x3.system, random_5x3.system.theta_star, l1, l2)
        assert dec.residual_norm <= dec.tolerance
        assert dec.residual_norm <= 1e-12

    def test_single_step_noiseless_has_zero_martingale(self, const_chain):
        rec = run_trajectory(const_chain, NoiseModel(), StepsizeSchedule(1.0), [0.0], 3,
                             seed=0, full=True)
        dec = decompose_error(rec, const_chain.system, [4.0], 0, 1)
        assert np.all(dec.e_mart == 0)
        # one step: theta_1 - 4 = -4 (1 - a), ode part -4 e^{-a}
        a = 0.125
        np.testing.assert_allclose(dec.ode_term, [-4 * np.exp(-a)], rtol=1e-14)
        np.testing.assert_allclose(dec.e_disc, [-4 * (1 - a) + 4 * np.exp(-a)], atol=1e-14)

    def test_riemann_oracle(self, noisy_chain):
        rec = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [2.0], 30,
                             seed=4, full=True)
        s = noisy_chain.system
        dec = decompose_error(rec, s, s.theta_star, 5, 30)
        disc, mart = riemann_decomposition(rec, s.a_matrix, s.theta_star, 5, 30)
        np.testing.assert_allclose(dec.e_disc, disc, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(dec.e_mart, mart, rtol=1e-5, atol=1e-9)

    def test_long_horizon_refresh(self, noisy_chain):
        rec = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [2.0], 3000,
                             seed=9, full=True)
        dec = decompose_error(rec, noisy_chain.system, noisy_chain.system.theta_star, 0, 3000)
        assert dec.residual_norm <= dec.tolerance

    def test_contracts(self, noisy_chain):
        full = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [2.0], 10,
                              seed=1, full=True)
        part = run_trajectory(noisy_chain, NoiseModel(), StepsizeSchedule(0.5), [2.0], 10, seed=1)
        with pytest.raises(ContractError):
            decompose_error(part, noisy_chain.system, noisy_chain.system.theta_star, 0, 5)
        with pytest.raises(ContractError):
            decompose_error(full, noisy_chain.system, noisy_chain.system.theta_star, 5, 5)
        with pytest.raises(ContractError):
            decompose_error(full, noisy_chain.system, [0.0], 0, 5)

    @given(st.integers(0, 10 ** 6), st.floats(0.3, 1.0), st.integers(1, 3))
    def test_residual_property(self, seed, sigma, dim):
        prob = problems.random_mdp(3, dim, seed=seed % 50)
        rec = run_trajectory(prob, NoiseModel(), StepsizeSchedule(sigma), np.ones(dim), 60,
                             seed=seed, full=True)
        dec = decompose_error(rec, prob.system, prob.system.theta_star, 0, 60)
        assert dec.residual_norm <= dec.tolerance
