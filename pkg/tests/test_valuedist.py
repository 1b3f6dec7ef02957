import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bestguess.valuedist import (
    DiscretizeFirstError,
    Dist1D,
    InfiniteRevenueError,
    JointValuation,
    ProductDist,
    a_c_ell,
    closed_form_revenue,
    discretize,
    fact7_b,
    fact7_b_exact,
    hat_of,
    lift_minus,
    lift_plus,
    order_statistics,
    r_of,
    second_highest,
    second_max_mean,
    shift,
    xi_of,
)

# grid-maximised x(1 - x^2) on [0, 1] at step 1e-6, frozen
R_HAT_U2 = 0.3849001794597505


@st.composite
def discrete_dists(draw, max_atoms=5):
    vals = draw(st.lists(st.integers(0, 20), min_size=1, max_size=max_atoms, unique=True))
    weights = draw(st.lists(st.integers(1, 9), min_size=len(vals), max_size=len(vals)))
    vals = sorted(vals)
    total = sum(weights)
    return Dist1D.discrete([(float(v), w / total) for v, w in zip(vals, weights)])


class TestMonopolyRevenue:
    def test_uniform(self):
        assert r_of(Dist1D.uniform()) == pytest.approx(0.25, abs=1e-12)

    def test_two_point(self, two_point):
        assert r_of(two_point) == 1.0

    def test_point_mass(self):
        assert r_of(Dist1D.point_mass(7.0)) == 7.0

    def test_exponential(self):
        assert r_of(Dist1D.exponential(2.0)) == pytest.approx(1 / (2 * math.e))

    def test_truncated_equal_revenue(self):
        assert r_of(Dist1D.equal_revenue(50.0)) == pytest.approx(1.0)

    def test_hat_uniform_two(self):
        grid = np.arange(0, 1 + 1e-6, 1e-6)
        assert np.max(grid * (1 - grid**2)) == pytest.approx(R_HAT_U2, abs=1e-12)
        assert r_of(hat_of(Dist1D.uniform(), 2)) == pytest.approx(R_HAT_U2, abs=1e-8)
        assert R_HAT_U2 == pytest.approx(2 / (3 * math.sqrt(3)), abs=1e-11)

    @pytest.mark.parametrize("n", [2, 3])
    def test_max_of_equal_revenue_supremum(self, n):
        # x (1 - (1 - 1/x)^n) increases to n
        assert r_of(hat_of(Dist1D.equal_revenue(), n)) == n

    def test_max_of_truncated_equal_revenue(self):
        h = 50.0
        assert r_of(hat_of(Dist1D.equal_revenue(h), 3)) == pytest.approx(h * (1 - (1 - 1 / h) ** 3), rel=1e-9)

    def test_far_tail_has_no_cancellation(self):
        H = hat_of(Dist1D.equal_revenue(), 2)
        x = 1e9
        assert float(H.sf(x)) == pytest.approx(2 / x - 1 / x**2, rel=1e-9)

    def test_still_increasing_raises(self, monkeypatch):
        F = hat_of(Dist1D.exponential(1.0), 2)
        monkeypatch.setattr(Dist1D, "sf_ge", lambda self, x: np.ones_like(np.asarray(x, dtype=float)))
        with pytest.raises(InfiniteRevenueError):
            r_of(F)


class TestHat:
    def test_identity(self):
        U = Dist1D.uniform()
        assert hat_of(U, 1) is U

    def test_two_point_square(self, two_point):
        H = hat_of(two_point, 2)
        np.testing.assert_allclose(H.values, [1, 2])
        np.testing.assert_allclose(H.probs, [0.25, 0.75])

    def test_bad_n(self, two_point):
        with pytest.raises(ValueError):
            hat_of(two_point, 0)

    @settings(max_examples=100, deadline=None)
    @given(discrete_dists(), st.integers(1, 5))
    def test_stochastic_dominance(self, F, n):
        H = hat_of(F, n)
        xs = np.linspace(-1, 21, 89)
        assert np.all(H.cdf(xs) <= F.cdf(xs) + 1e-12)


class TestTruncatedBenchmarks:
    def test_uniform_ell1(self):
        A, C = a_c_ell(Dist1D.uniform(), 1)
        assert A == pytest.approx(15 / 32, abs=1e-10)
        assert C == pytest.approx(1 / 32, abs=1e-10)

    def test_point_mass_ell3(self):
        A, C = a_c_ell(Dist1D.point_mass(1.0), 3)
        assert A == pytest.approx(2.0)
        assert C == pytest.approx(1.0)

    def test_bad_ell(self):
        with pytest.raises(ValueError):
            a_c_ell(Dist1D.uniform(), 0)

    @settings(max_examples=300, deadline=None)
    @given(discrete_dists(), st.integers(1, 20))
    def test_p2_sandwich(self, F, ell):
        r = r_of(F)
        A, C = a_c_ell(F, ell)
        assert A >= r + C - 1e-9
        assert A <= 2 * r + C + 1e-9

    def test_closed_form_point_mass(self):
        # m = 2, hat = point mass at 1, A_2 = 1 + 1
        assert closed_form_revenue(Dist1D.point_mass(1.0), 3, 6) == pytest.approx(12.0)

    def test_closed_form_uniform_single(self):
        assert closed_form_revenue(Dist1D.uniform(), 1, 1) == pytest.approx(15 / 32)

    def test_closed_form_n_equals_k(self, two_point):
        H = hat_of(two_point, 3)
        assert closed_form_revenue(two_point, 3, 3) == pytest.approx(3 * a_c_ell(H, 1)[0])


class TestLifts:
    def test_lift_minus(self, two_point):
        (d,) = lift_minus([two_point], [1.0]).items
        np.testing.assert_allclose(d.values, [0, 2])
        np.testing.assert_allclose(d.probs, [0.5, 0.5])

    def test_lift_plus(self, two_point):
        (d,) = lift_plus([two_point], [1.0]).items
        np.testing.assert_allclose(d.values, [1, 2])
        np.testing.assert_allclose(d.probs, [0.5, 0.5])

    def test_xi(self, two_point):
        np.testing.assert_allclose(xi_of([two_point, two_point], [1.0, 0.0]), [0.5, 1.0])

    def test_shift_negative_allowed(self, two_point):
        (d,) = shift([two_point], [1.5]).items
        np.testing.assert_allclose(d.values, [-0.5, 0.5])

    def test_continuous_rejected(self):
        with pytest.raises(DiscretizeFirstError):
            lift_plus([Dist1D.uniform()], [0.5])

    def test_bad_beta(self, two_point):
        with pytest.raises(ValueError):
            lift_plus([two_point], [-1.0])
        with pytest.raises(ValueError):
            lift_plus([two_point], [1.0, 2.0])

    @settings(max_examples=100, deadline=None)
    @given(discrete_dists(), st.integers(0, 20))
    def test_lift_keeps_upper_tail(self, F, b):
        (up,) = lift_plus([F], [float(b)]).items
        (lo,) = lift_minus([F], [float(b)]).items
        for x in F.values[F.values > b]:
            assert up.sf_ge(x) == pytest.approx(F.sf_ge(x))
            assert lo.sf_ge(x) == pytest.approx(F.sf_ge(x))
        assert up.sf(b) == pytest.approx(F.sf(b))


class TestOrderStatistics:
    def test_fixed_matrix(self, fixed_matrix):
        assert order_statistics(fixed_matrix).e_second_total == 3.0

    def test_uniform_min(self):
        assert second_max_mean(Dist1D.uniform(), 2) == pytest.approx(1 / 3, abs=1e-9)

    def test_two_point_enumerated(self, iid_two_point):
        # independent oracle: enumerate the four outcomes
        mats, probs = iid_two_point.support()
        brute = sum(p * sorted(m[:, 0])[0] for m, p in zip(mats, probs))
        assert brute == pytest.approx(1.25)
        assert order_statistics(iid_two_point).e_second_total == pytest.approx(1.25)

    def test_singleton_column(self):
        assert np.all(second_highest(np.ones((1, 3))) == 0)

    def test_ties_count_twice(self):
        assert second_highest(np.array([[2.0], [2.0], [1.0]]))[0] == 2.0

    def test_continuous_is_monte_carlo(self):
        FJ = JointValuation.iid(Dist1D.uniform(), 2, 1)
        os_ = order_statistics(FJ, n_samples=40_000, seed=3)
        assert os_.stderr is not None
        assert abs(os_.e_second_total - 1 / 3) < 4 * os_.stderr


class TestFact7:
    def test_small(self):
        assert fact7_b_exact(2, 2) == 0.75 and fact7_b(2, 2) == 0.75

    @pytest.mark.parametrize("n,k", [(10, 5), (3, 30), (7, 7), (100, 99)])
    def test_against_binomial(self, n, k):
        m = -(-k // n)
        assert fact7_b(n, k) == pytest.approx(stats.binom.sf(m - 1, k, 1 / n), rel=1e-10)

    def test_bounds(self):
        assert fact7_b(10, 5) >= 5 / (10 * math.e)
        assert fact7_b(3, 30) >= 1 / 14

    def test_bad_args(self):
        with pytest.raises(ValueError):
            fact7_b(0, 3)


class TestDist1D:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dist1D.discrete([(1.0, 0.5), (2.0, 0.4)])
        with pytest.raises(ValueError):
            Dist1D.discrete([(-1.0, 1.0)])
        with pytest.raises(ValueError):
            Dist1D.uniform(1.0, 0.5)
        with pytest.raises(ValueError):
            Dist1D.exponential(0.0)

    def test_duplicate_atoms_merge(self):
        d = Dist1D.discrete([(1.0, 0.25), (1.0, 0.25), (3.0, 0.5)])
        np.testing.assert_allclose(d.probs, [0.5, 0.5])

    @pytest.mark.parametrize("F", [Dist1D.uniform(0.5, 2.0), Dist1D.exponential(3.0), Dist1D.equal_revenue(10.0),
                                   Dist1D.discrete([(0.0, 0.2), (4.0, 0.8)]), Dist1D.point_mass(2.0)])
    def test_json_roundtrip(self, F):
        G = Dist1D.from_json(F.to_json())
        xs = np.linspace(0, 12, 50)
        np.testing.assert_allclose(G.cdf(xs), F.cdf(xs))

    def test_sampling_mean(self, rng):
        F = Dist1D.exponential(2.0)
        assert F.sample(rng, 200_000).mean() == pytest.approx(0.5, rel=0.02)

    def test_discretize_mean(self):
        D = discretize(Dist1D.uniform(), 200)
        assert D.is_discrete and D.mean() == pytest.approx(0.5, abs=1e-9)

    def test_discrete_ops_need_discrete(self):
        with pytest.raises(DiscretizeFirstError):
            Dist1D.uniform().values


class TestJointValuation:
    def test_iid_support(self, iid_two_point):
        mats, probs = iid_two_point.support()
        assert mats.shape == (4, 2, 1)
        assert probs.sum() == pytest.approx(1.0)

    def test_independence_flags(self, iid_two_point, fixed_matrix):
        assert iid_two_point.item_independent and iid_two_point.bidder_independent
        corr = JointValuation.from_table([[[1.0], [1.0]], [[2.0], [2.0]]], [0.5, 0.5])
        assert not corr.bidder_independent

    def test_conditional(self, two_point):
        FJ = JointValuation.from_grid([[two_point, two_point], [two_point, Dist1D.point_mass(3.0)]])
        L = FJ.conditional(0, np.array([[1.0, 3.0]]))
        pts, probs = L.support()
        assert pts.shape == (4, 2)

    def test_zero_probability_slice(self):
        FJ = JointValuation.from_table([[[1.0], [1.0]], [[2.0], [2.0]]], [0.5, 0.5])
        with pytest.raises(ValueError):
            FJ.conditional(0, np.array([[5.0]]))

    def test_json_roundtrip(self, two_point):
        FJ = JointValuation.from_grid([[two_point], [Dist1D.point_mass(3.0)]])
        G = JointValuation.from_json(FJ.to_json()) if hasattr(JointValuation, "from_json") else None
        from bestguess.io import joint_from_spec

        G = G or joint_from_spec(FJ.to_json())
        a, p = FJ.support()
        b, q = G.support()
        np.testing.assert_allclose(a, b)
        np.testing.assert_allclose(p, q)

    def test_negative_values_rejected(self):
        with pytest.raises(ValueError):
            JointValuation.from_table([[[-1.0]]], [1.0])

    def test_product_support(self, two_point):
        pts, probs = ProductDist((two_point, two_point)).support()
        assert pts.shape == (4, 2) and probs.sum() == pytest.approx(1.0)
