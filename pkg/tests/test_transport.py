import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kl, kl_projection_slsqp, plain_sinkhorn, random_zero_pattern_instance, temperature

from bitext_planner import (
    ConvergenceError,
    InfeasibleError,
    InputError,
    KernelSpec,
    MarginalTarget,
    SinkhornConfig,
    build_kernel,
    entropy,
    kl_divergence,
    parse_pair_counts,
    sinkhorn,
    solve_m2m,
    solve_proposed,
    solve_temperature,
    symmetrize,
    temperature_marginal,
    to_joint,
)
from bitext_planner.transport import plan_from_dict, plan_to_dict

# r_i proportional to p_i^(1/5) for p = [0.8, 0.15, 0.05], 50-digit mpmath oracle
T5_MARGINAL = [0.43671293339635599, 0.31246135250448209, 0.25082571409916192]
# 2x2 I-projection of [[.4,.1],[.1,.4]] onto r=c=[.7,.3]: smaller root of 15a^2 - 22a + 7.84
A_2X2 = (22 - np.sqrt(22**2 - 4 * 15 * 7.84)) / 30


class TestTemperature:
    def test_identity_at_one(self):
        p = np.array([0.8, 0.15, 0.05])
        np.testing.assert_array_equal(temperature_marginal(p, 1).r, p)

    def test_t5_oracle(self):
        r = temperature_marginal([0.8, 0.15, 0.05], 5).r
        np.testing.assert_allclose(r, T5_MARGINAL, atol=1e-12)

    def test_large_t_is_uniform(self):
        r = temperature_marginal([0.8, 0.15, 0.05], 1e6).r
        np.testing.assert_allclose(r, 1 / 3, atol=1e-4)

    def test_zero_stays_zero(self):
        r = temperature_marginal([0.5, 0.5, 0.0], 100).r
        assert r[2] == 0.0
        np.testing.assert_allclose(r[:2], 0.5)

    def test_tiny_temperature_does_not_overflow(self):
        r = temperature_marginal([0.6, 0.4], 1e-3).r
        assert np.all(np.isfinite(r))
        assert r[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("T", [0, -1])
    def test_bad_temperature(self, T):
        with pytest.raises(InputError):
            temperature_marginal([0.5, 0.5], T)

    def test_not_a_distribution(self):
        with pytest.raises(InputError):
            temperature_marginal([0.5, 0.6], 1)
        with pytest.raises(InputError):
            temperature_marginal([0.0, 0.0], 1)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(1e-6, 1.0), min_size=2, max_size=20),
        st.floats(0.1, 50.0),
    )
    def test_matches_direct_formula(self, w, T):
        p = np.array(w) / sum(w)
        r = temperature_marginal(p, T).r
        np.testing.assert_allclose(r, temperature(p, T), rtol=1e-10)
        assert abs(r.sum() - 1) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=10), st.floats(1.0, 20.0))
    def test_flattening(self, w, T):
        """Higher temperature never increases the spread max(r) / min(r)."""
        p = np.array(w) / sum(w)
        lo = temperature_marginal(p, T).r
        hi = temperature_marginal(p, T * 2).r
        assert hi.max() / hi.min() <= lo.max() / lo.min() * (1 + 1e-12)


class TestKernel:
    def test_ent_ot_on_joint(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t1\nb\tc\t1")))
        k = build_kernel(q, KernelSpec.ent_ot(1e-3))
        np.testing.assert_allclose(np.diag(k), 1e-300)
        assert k[0, 2] == pytest.approx(1e-3)
        assert k[0, 1] == pytest.approx(0.25 + 1e-3)

    def test_m2m_raw(self):
        q = np.array([[0.0, 0.4], [0.35, 0.25]])
        k = build_kernel(q, KernelSpec.m2m(0.5))
        np.testing.assert_allclose(k, np.exp(q / 0.2))

    @pytest.mark.parametrize("kind, value", [("ent-ot", 0), ("m2m", -1.0), ("m2m", float("nan")), ("x", 1)])
    def test_bad_spec(self, kind, value):
        with pytest.raises(InputError):
            KernelSpec(kind, value)


class TestSinkhorn:
    def test_uniform(self):
        target = MarginalTarget([0.5, 0.5], [0.5, 0.5])
        plan = sinkhorn(np.ones((2, 2)), target)
        np.testing.assert_allclose(plan.p_star, 0.25, atol=1e-15)

    def test_identity_kernel_is_diagonal(self):
        target = MarginalTarget([0.2, 0.3, 0.5], [0.2, 0.3, 0.5])
        plan = sinkhorn(np.eye(3), target)
        np.testing.assert_allclose(plan.p_star, np.diag([0.2, 0.3, 0.5]), atol=1e-15)

    def test_dead_row_is_infeasible(self):
        k = np.array([[0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(InfeasibleError, match="zero rows"):
            sinkhorn(k, MarginalTarget([0.5, 0.5], [0.5, 0.5]))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            sinkhorn(np.ones((2, 3)), MarginalTarget([0.5, 0.5], [0.5, 0.5]))

    def test_non_convergence_carries_diagnostic(self):
        # support pattern with no feasible plan: column 0 needs 0.9, only row 0 feeds it
        k = np.array([[1.0, 1.0], [0.0, 1.0]])
        target = MarginalTarget([0.5, 0.5], [0.9, 0.1])
        with pytest.raises(ConvergenceError) as info:
            sinkhorn(k, target, SinkhornConfig(max_iterations=200, newton_after=100))
        assert info.value.diagnostic["violation"] > 1e-3
        assert info.value.diagnostic["iterations"] == 200

    def test_log_domain_for_small_gamma(self):
        rng = np.random.default_rng(4)
        q = rng.random((30, 30))
        q /= q.sum()
        plan = solve_m2m(q, 1.0, gamma=1e-4)
        assert plan.log_domain
        assert plan.marginal_violation <= 1e-9

    def test_bad_config(self):
        with pytest.raises(InputError):
            SinkhornConfig(tolerance=0)
        with pytest.raises(InputError):
            SinkhornConfig(max_iterations=0)


class TestProposed:
    def test_2x2_oracle(self):
        q = np.array([[0.4, 0.1], [0.1, 0.4]])
        plan = solve_proposed(q, 1.0, p=[0.7, 0.3])
        a = A_2X2
        expected = np.array([[a, 0.7 - a], [0.7 - a, a - 0.4]])
        assert np.max(np.abs(plan.p_star - expected)) <= 1e-6
        assert plan.marginal_violation <= 1e-9

    def test_2x2_brute_force(self):
        """One-parameter scan over the polytope agrees with the quadratic root."""
        q = np.array([0.4, 0.1, 0.1, 0.4])
        a = np.linspace(0.4 + 1e-9, 0.7 - 1e-9, 3_000_001)
        cells = np.stack([a, 0.7 - a, 0.7 - a, a - 0.4])
        obj = np.sum(cells * np.log(cells / q[:, None]), axis=0)
        assert abs(a[np.argmin(obj)] - A_2X2) < 1e-6

    def test_fixed_point(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t3\nb\tc\t2\na\tc\t5")))
        plan = solve_proposed(q, 1.0, epsilon=1e-12)
        assert np.max(np.abs(plan.p_star - q.q)) <= 1e-8
        assert plan.objective_value == pytest.approx(0.0, abs=1e-9)

    def test_random_3x3_against_slsqp(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            q = rng.random((3, 3)) + 0.05
            q /= q.sum()
            plan = solve_proposed(q, 2.0)
            _, best = kl_projection_slsqp(q, plan.target.r, plan.target.c)
            assert abs(kl(plan.p_star, q) - best) <= 1e-4

    def test_beats_random_feasible_plans(self):
        rng = np.random.default_rng(3)
        for L in (2, 3, 4):
            q = rng.random((L, L)) + 0.01
            q /= q.sum()
            plan = solve_proposed(q, 2.0)
            ours = kl(plan.p_star, q)
            r, c = plan.target.r, plan.target.c
            for _ in range(200):
                other = plain_sinkhorn(rng.random((L, L)) ** 3 + 1e-3, r, c, iters=500)
                assert ours <= kl(other, q) + 1e-6

    def test_no_wastage_and_small_leak(self):
        rng = np.random.default_rng(8)
        q, _ = random_zero_pattern_instance(rng, 12, 2.0)
        plan = solve_proposed(q, 2.0)
        assert np.all(plan.p_star[q > 0] > 0)
        assert plan.p_star[q == 0].sum() < 1e-4

    def test_symmetry(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2\na\tc\t5\nc\td\t9\na\td\t1")))
        plan = solve_proposed(q, 5.0)
        assert np.max(np.abs(plan.p_star - plan.p_star.T)) <= 1e-8

    def test_count_scale_invariance(self):
        text = "a\tb\t30\nb\tc\t2\na\tc\t5\nc\td\t9"
        scaled = "\n".join(f"{line}000" for line in text.splitlines())
        p1 = solve_proposed(to_joint(parse_pair_counts(text)), 3.0)
        p2 = solve_proposed(to_joint(parse_pair_counts(scaled)), 3.0)
        np.testing.assert_array_equal(p1.p_star, p2.p_star)

    def test_diagonal_is_empty(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2\na\tc\t5")))
        plan = solve_proposed(q)
        assert np.all(np.diag(plan.p_star) == 0)

    def test_metadata(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2\na\tc\t5")))
        plan = solve_proposed(q)
        assert plan.kernel == KernelSpec.ent_ot(1e-9)
        assert plan.target.temperature == 5.0
        assert plan.method == "ent-ot"
        assert plan.directedness == "symmetrized"
        assert plan.objective_kind == "kl_to_smoothed_q"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 15), st.sampled_from([1.0, 2.0, 5.0]))
def test_marginals_met_on_random_instances(seed, L, T):
    rng = np.random.default_rng(seed)
    q, r = random_zero_pattern_instance(rng, L, T)
    plan = solve_proposed(q, T)
    assert plan.marginal_violation <= 1e-9
    np.testing.assert_allclose(plan.target.r, r, atol=1e-12)
    assert np.all(plan.p_star[q > 0] > 0)


class TestM2M:
    def test_argmax_assignment(self):
        q = np.array([[0.0, 0.4], [0.35, 0.25]])
        plan = solve_m2m(q, 1.0, gamma=0.01, p=[0.5, 0.5])
        # LP over P = [[a, .5-a], [.5-a, a]] maximizes <P, Q> at a = 0
        assert plan.p_star[0, 0] < 1e-3 and plan.p_star[1, 1] < 1e-3
        np.testing.assert_allclose(plan.p_star[[0, 1], [1, 0]], 0.5, atol=1e-3)
        proposed = solve_proposed(q, 1.0, p=[0.5, 0.5])
        assert np.sum(plan.p_star > 1e-6) < np.sum(proposed.p_star > 1e-6)

    def test_large_gamma_is_independent(self):
        q = np.array([[0.0, 0.4], [0.35, 0.25]])
        plan = solve_m2m(q, 1.0, gamma=1e6, p=[0.5, 0.5])
        np.testing.assert_allclose(plan.p_star, 0.25, atol=1e-6)

    def test_objective_is_inner_product(self):
        q = np.array([[0.0, 0.4], [0.35, 0.25]])
        plan = solve_m2m(q, 1.0, gamma=0.01, p=[0.5, 0.5])
        assert plan.objective_value == pytest.approx(np.sum(plan.p_star * q))


class TestTemperaturePlan:
    def test_outer_product(self):
        q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2\na\tc\t5")))
        plan = solve_temperature(q, 2.0)
        r = plan.target.r
        expected = np.outer(r, r)
        np.fill_diagonal(expected, 0)
        np.testing.assert_allclose(plan.p_star, expected / expected.sum(), atol=1e-15)
        assert plan.method == "temperature"


class TestDivergences:
    def test_kl_examples(self):
        q = np.full((2, 2), 0.25)
        assert kl_divergence(q, q) == 0
        assert kl_divergence([[0, 0.5], [0.5, 0]], q) == pytest.approx(np.log(2))
        assert kl_divergence([[0.5, 0.5], [0, 0]], [[0, 0.5], [0.5, 0]]) == np.inf

    def test_kl_shape(self):
        with pytest.raises(InputError):
            kl_divergence(np.full((2, 2), 0.25), np.full(4, 0.25))

    def test_entropy_examples(self):
        assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))
        assert entropy([[1.0, 0.0], [0.0, 0.0]]) == 0
        assert entropy([[0.5, 0.25], [0.25, 0]]) == pytest.approx(1.0397207708399179, abs=1e-15)


def test_plan_roundtrip():
    q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2\na\tc\t5")))
    plan = solve_m2m(q)
    doc = json.loads(json.dumps(plan_to_dict(plan)))
    again = plan_from_dict(doc)
    np.testing.assert_array_equal(again.p_star, plan.p_star)
    assert again.digest() == plan.digest()
    assert again.kernel == plan.kernel
    doc["entries"][0][2] *= 2
    with pytest.raises(InputError, match="digest"):
        plan_from_dict(doc)


def test_infinite_objective_serializes_as_null():
    q = to_joint(symmetrize(parse_pair_counts("a\tb\t30\nb\tc\t2")))
    plan = solve_temperature(q)
    doc = plan_to_dict(plan)
    assert doc["header"]["objective"] is None
    json.dumps(doc, allow_nan=False)
    assert np.isnan(plan_from_dict(doc).objective_value)
