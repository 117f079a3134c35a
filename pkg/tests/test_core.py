import numpy as np
import pytest

from mfgtools.core import (
    SimplexVector,
    StateSpace,
    check_population_equilibrium,
    policy_averaged_kernel,
    random_profiles,
    reduce_pairwise_payoff,
    validate_scenario,
)
from mfgtools.errors import (
    EmptyActionSet,
    GeneratorRowSum,
    KernelNotStochastic,
    ShapeMismatch,
)


def scenario_dict(kernel_values, mode="discrete", states=("a", "b"), payoff=None):
    data = {
        "name": "t",
        "mode": mode,
        "space": {"states": list(states)},
        "horizon": {"stages": 3} if mode == "discrete" else {"T": 1.0},
        "initial": {"m0": [1.0] + [0.0] * (len(states) - 1)},
        "kernel": {"family": "table", "values": kernel_values},
        "payoff": payoff or {"family": "zero"},
    }
    return data


class TestSimplexVector:
    def test_valid(self):
        v = SimplexVector([0.25, 0.75])
        assert v[1] == 0.75

    def test_negative_clamp_on_read(self):
        v = SimplexVector([1.0 + 5e-13, -5e-13])
        assert v[1] == 0.0
        assert v.values.min() == 0.0

    def test_large_negative_rejected(self):
        with pytest.raises(ShapeMismatch):
            SimplexVector([1.1, -0.1])

    def test_bad_sum_rejected(self):
        with pytest.raises(ShapeMismatch):
            SimplexVector([0.5, 0.6])


class TestStateSpace:
    def test_empty_actions_rejected(self):
        with pytest.raises(EmptyActionSet):
            StateSpace(states=("a",), types=("default",), actions=(((),),))

    def test_build_variants(self):
        sp = StateSpace.build(["a", "b"], {"a": ["x"], "b": ["x", "y"]})
        assert sp.n_actions(0, 0) == 1
        assert sp.n_actions(0, 1) == 2
        assert sp.action_mask(0).tolist() == [[True, False], [True, True]]


class TestValidateScenario:
    def test_accepts_stochastic_matrix(self):
        # rows (0.5, 0.5) / (0, 1)
        validate_scenario(scenario_dict([[[0.5, 0.5]], [[0.0, 1.0]]]))

    def test_accepts_zero_row_sum_generator(self):
        validate_scenario(scenario_dict([[[-1.0, 1.0]], [[0.0, 0.0]]], mode="continuous"))

    def test_rejects_bad_generator_row(self):
        with pytest.raises(GeneratorRowSum):
            validate_scenario(scenario_dict([[[-1.0, 0.5]], [[0.0, 0.0]]], mode="continuous"))

    def test_rejects_nonstochastic_row(self):
        with pytest.raises(KernelNotStochastic):
            validate_scenario(scenario_dict([[[0.5, 0.4]], [[0.0, 1.0]]]))

    def test_probing_is_deterministic(self):
        seen = []

        def recording_kernel(ti, t, m):
            seen.append(np.array(m))
            return np.array([[[0.5, 0.5]], [[0.0, 1.0]]])[:, :, :]

        from mfgtools.core import PayoffSpec, ScenarioModel, TransitionKernelSpec, Horizon

        def build():
            seen.clear()
            model = ScenarioModel(
                space=StateSpace.build(["a", "b"]),
                kernel=TransitionKernelSpec(mode="discrete", func=recording_kernel),
                payoff=PayoffSpec(running=lambda ti, t, m: np.zeros((2, 1))),
                horizon=Horizon(stages=2),
                m0=np.array([[1.0, 0.0]]),
            )
            validate_scenario(model)
            return np.array(seen)

        a, b = build(), build()
        assert np.array_equal(a, b)
        assert a.shape[0] == 11  # m0 + 10 probes


class TestReducePairwise:
    def test_constant_integrand(self):
        pair = np.full((2, 2, 3), 4.5)
        for m in ([1, 0, 0], [0.2, 0.5, 0.3]):
            r = reduce_pairwise_payoff(pair, np.array(m, dtype=float))
            assert np.allclose(r, 4.5, atol=1e-15)

    def test_dirac_evaluation(self):
        rng = np.random.default_rng(3)
        pair = rng.normal(size=(2, 2, 3))
        m = np.array([0.0, 1.0, 0.0])
        assert np.allclose(reduce_pairwise_payoff(pair, m), pair[:, :, 1], atol=1e-15)

    def test_weighted_sum_by_hand(self):
        # opponent values 0 and 2 weighted (0.25, 0.75) -> 1.5
        pair = np.zeros((1, 1, 2))
        pair[..., 1] = 2.0
        r = reduce_pairwise_payoff(pair, np.array([0.25, 0.75]))
        assert r[0, 0] == pytest.approx(1.5, abs=1e-15)

    def test_exact_linearity(self):
        rng = np.random.default_rng(7)
        pair = rng.normal(size=(3, 2, 4))
        for _ in range(25):
            m1 = rng.dirichlet(np.ones(4))
            m2 = rng.dirichlet(np.ones(4))
            alpha = rng.random()
            mixed = reduce_pairwise_payoff(pair, alpha * m1 + (1 - alpha) * m2)
            parts = alpha * reduce_pairwise_payoff(pair, m1) + (1 - alpha) * reduce_pairwise_payoff(pair, m2)
            assert np.abs(mixed - parts).max() <= 1e-12


class TestPolicyAveragedKernel:
    def test_pure_policy_selects_row(self):
        rng = np.random.default_rng(11)
        q = rng.dirichlet(np.ones(3), size=(3, 2))
        u = np.zeros((3, 2))
        u[:, 1] = 1.0
        L = policy_averaged_kernel(q, u)
        assert np.array_equal(L, q[:, 1, :])

    def test_fifty_fifty_mix(self):
        q = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])
        u = np.full((2, 2), 0.5)
        L = policy_averaged_kernel(q, u)
        assert np.allclose(L, 0.5, atol=1e-15)

    def test_rows_stay_stochastic(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            q = rng.dirichlet(np.ones(4), size=(4, 3))
            u = rng.dirichlet(np.ones(3), size=4)
            L = policy_averaged_kernel(q, u)
            assert np.abs(L.sum(axis=1) - 1.0).max() <= 1e-12
            assert L.min() >= 0.0

    def test_rows_stay_zero_sum_in_rate_mode(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            q = rng.random(size=(3, 2, 3))
            for x in range(3):
                for a in range(2):
                    q[x, a, x] = 0.0
                    q[x, a, x] = -q[x, a].sum()
            u = rng.dirichlet(np.ones(2), size=3)
            L = policy_averaged_kernel(q, u)
            assert np.abs(L.sum(axis=1)).max() <= 1e-12


class TestEquilibriumCheck:
    def test_rps_uniform(self, rps):
        m = np.full(3, 1.0 / 3.0)
        rep = check_population_equilibrium(m, lambda mv: rps.payoff.population(0, mv[None, :]), tol=1e-9)
        assert rep.is_equilibrium
        assert rep.max_gap <= 1e-12

    def test_supported_state_not_maximal(self):
        rep = check_population_equilibrium(
            np.array([1.0, 0.0]), lambda m: np.array([0.0, 1.0]), tol=1e-9
        )
        assert not rep.is_equilibrium
        assert rep.violating_states == (0,)
        assert rep.max_gap == pytest.approx(1.0)

    def test_constant_payoff_any_profile(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            m = rng.dirichlet(np.ones(4))
            rep = check_population_equilibrium(m, lambda mv: np.full(4, 2.3), tol=1e-9)
            assert rep.is_equilibrium

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            m = rng.dirichlet(np.ones(3))
            r = rng.normal(size=3)
            c = rng.normal() * 10
            a = check_population_equilibrium(m, lambda mv: r, tol=1e-6)
            b = check_population_equilibrium(m, lambda mv: r + c, tol=1e-6)
            assert a.is_equilibrium == b.is_equilibrium
            assert a.max_gap == pytest.approx(b.max_gap, abs=1e-12)
            assert a.violating_states == b.violating_states


def test_random_profiles_are_simplex_points():
    space = StateSpace.build(["a", "b", "c"])
    pts = random_profiles(space, 10)
    assert pts.shape == (10, 1, 3)
    assert np.abs(pts.sum(axis=2) - 1.0).max() <= 1e-12
    assert pts.min() >= 0.0
