import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import digamma

from nfsim.beliefs import (
    BinGrid,
    Categorical,
    ConditionalTensor,
    DirichletCounts,
    discretize_gaussian,
    entropy,
    expected_log,
    kl_divergence,
    normalize,
    sample_index,
    softmax,
)
from nfsim.errors import DegenerateDistribution, InvalidInput, ShapeError


def positive_vectors(min_size=2, max_size=8):
    return st.lists(
        st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
        min_size=min_size,
        max_size=max_size,
    )


class TestCategorical:
    def test_rejects_negative(self):
        with pytest.raises(DegenerateDistribution):
            Categorical(np.array([0.5, 0.6, -0.1]))

    def test_rejects_unnormalized(self):
        with pytest.raises(DegenerateDistribution):
            Categorical(np.array([0.5, 0.6]))

    def test_accepts_within_tolerance(self):
        Categorical(np.array([0.5, 0.5 + 5e-10]))


class TestNormalize:
    def test_symmetry(self):
        assert np.array_equal(normalize([2, 2]).probs, [0.5, 0.5])

    def test_identity_case(self):
        assert np.array_equal(normalize([1, 0, 0]).probs, [1, 0, 0])

    def test_hand_arithmetic(self):
        assert np.allclose(normalize([1, 3]).probs, [0.25, 0.75], atol=0)

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateDistribution):
            normalize([0.0, 0.0])

    def test_negative_rejected(self):
        with pytest.raises(DegenerateDistribution):
            normalize([1.0, -0.5])

    @given(positive_vectors())
    def test_idempotent(self, raw):
        once = normalize(raw).probs
        twice = normalize(once).probs
        assert np.allclose(once, twice, atol=1e-15)
        assert abs(once.sum() - 1.0) < 1e-9


class TestSoftmax:
    def test_zero_precision_uniform(self):
        out = softmax([3.0, -1.0, 10.0], precision=0.0).probs
        assert np.allclose(out, 1 / 3, atol=0)

    def test_equal_logits_uniform(self):
        out = softmax([0.0, 0.0, 0.0], precision=16.0).probs
        assert np.allclose(out, 1 / 3, atol=0)

    def test_closed_form(self):
        out = softmax([0.0, np.log(3.0)], precision=1.0).probs
        assert np.allclose(out, [0.25, 0.75], atol=1e-15)

    def test_nan_rejected(self):
        with pytest.raises(InvalidInput):
            softmax([0.0, np.nan])

    def test_stable_for_large_logits(self):
        out = softmax([1e4, 1e4 - 1.0], precision=1.0).probs
        assert np.all(np.isfinite(out))


class TestKl:
    def test_identity(self):
        p = Categorical(np.array([0.3, 0.7]))
        assert kl_divergence(p, p) == 0.0

    def test_closed_form_ln2(self):
        p = Categorical(np.array([1.0, 0.0]))
        q = Categorical(np.array([0.5, 0.5]))
        assert abs(kl_divergence(p, q) - np.log(2)) < 1e-15

    def test_support_violation_sentinel(self):
        p = Categorical(np.array([0.5, 0.5]))
        q = Categorical(np.array([1.0, 0.0]))
        assert kl_divergence(p, q) == np.inf

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence(Categorical(np.array([1.0])), Categorical(np.array([0.5, 0.5])))

    @given(positive_vectors(min_size=3, max_size=3), positive_vectors(min_size=3, max_size=3))
    def test_nonnegative_and_zero_iff_equal(self, raw_p, raw_q):
        p, q = normalize(raw_p), normalize(raw_q)
        kl = kl_divergence(p, q)
        assert kl >= 0
        assert kl_divergence(p, p) < 1e-12
        if kl < 1e-12:
            assert np.allclose(p.probs, q.probs, atol=1e-5)


class TestDiscretizeGaussian:
    def test_tiny_sigma_one_hot(self):
        grid = BinGrid(np.array([0.0, 1.0, 2.0, 3.0]))
        out = discretize_gaussian(1.9, 1e-12, grid).probs
        assert np.array_equal(out, [0, 0, 1, 0])

    def test_huge_sigma_uniform(self):
        grid = BinGrid(np.linspace(-1, 1, 5))
        out = discretize_gaussian(0.3, 1e3 * 2.0, grid).probs
        assert np.allclose(out, 0.2, atol=1e-6)

    def test_center_peak_frozen_values(self):
        # computed with a 50-digit density evaluation of exp(-(c-2)^2 / (2*1.5^2))
        grid = BinGrid(np.arange(5.0))
        out = discretize_gaussian(2.0, 1.5, grid).probs
        expected = [
            0.12007838424321348,
            0.2338807565853503,
            0.29208171834287245,
            0.2338807565853503,
            0.12007838424321348,
        ]
        assert np.allclose(out, expected, atol=1e-15)

    def test_interval_rule_normalizes(self):
        grid = BinGrid(np.linspace(-1, 1, 5))
        out = discretize_gaussian(0.4, 0.5, grid, rule="interval").probs
        assert abs(out.sum() - 1.0) < 1e-12
        assert out.argmax() == grid.nearest(0.4)

    def test_sigma_zero_rejected(self):
        with pytest.raises(InvalidInput):
            discretize_gaussian(0.0, 0.0, BinGrid(np.arange(3.0)))

    @given(
        st.floats(min_value=-2.5, max_value=2.5),
        st.floats(min_value=0.05, max_value=5.0),
    )
    def test_reflection_symmetry(self, mean, sigma):
        grid = BinGrid(np.linspace(-2, 2, 7))
        mid = (grid.centers[0] + grid.centers[-1]) / 2.0
        fwd = discretize_gaussian(mean, sigma, grid).probs
        rev = discretize_gaussian(2 * mid - mean, sigma, grid).probs
        assert np.allclose(fwd, rev[::-1], atol=1e-12)


class TestExpectedLog:
    def test_symmetric_slice(self):
        counts = DirichletCounts(np.array([1.0, 1.0]))
        out = expected_log(counts)
        assert out[0] == out[1]

    def test_concentration_limit(self):
        counts = DirichletCounts(np.array([1.0, 3.0]) * 1e6)
        out = expected_log(counts)
        assert np.allclose(out, np.log([0.25, 0.75]), atol=1e-5)

    def test_digamma_frozen_pair(self):
        counts = DirichletCounts(np.array([1.0, 3.0]))
        out = expected_log(counts)
        # psi(1) - psi(4) and psi(3) - psi(4) from the digamma table
        assert np.allclose(out, [-1.8333333333333333, -0.33333333333333333], atol=1e-14)

    def test_point_method_matches_log_expectation(self):
        counts = DirichletCounts(np.array([[2.0, 1.0], [6.0, 1.0]]))
        out = expected_log(counts, method="point")
        assert np.allclose(out[:, 0], np.log([0.25, 0.75]), atol=1e-14)

    def test_conditional_layout(self):
        counts = DirichletCounts(np.ones((3, 2, 2)))
        out = expected_log(counts)
        assert out.shape == (3, 2, 2)
        assert np.allclose(out, digamma(1.0) - digamma(3.0))

    @given(positive_vectors(min_size=3, max_size=3), st.floats(min_value=0.1, max_value=10.0))
    def test_monotone_in_own_count(self, raw, bump):
        base = np.asarray(raw)
        grown = base.copy()
        grown[0] += bump
        before = expected_log(DirichletCounts(base))[0]
        after = expected_log(DirichletCounts(grown))[0]
        assert after > before


class TestConditionalTensor:
    def test_slices_validated(self):
        table = np.ones((2, 3)) * 0.5
        ConditionalTensor(table)
        table[0, 1] = 0.7
        with pytest.raises(DegenerateDistribution):
            ConditionalTensor(table)

    def test_expectation_of_counts_is_conditional(self):
        counts = DirichletCounts(np.random.default_rng(0).uniform(0.5, 3.0, size=(4, 2, 3)))
        tensor = counts.expectation()
        assert np.allclose(tensor.table.sum(axis=0), 1.0, atol=1e-12)


class TestBinGrid:
    def test_requires_increasing(self):
        with pytest.raises(InvalidInput):
            BinGrid(np.array([0.0, 0.0, 1.0]))

    def test_bin_width(self):
        assert BinGrid(np.linspace(-1, 1, 5)).bin_width == pytest.approx(0.5)

    def test_nearest(self):
        grid = BinGrid(np.linspace(0, 1, 5))
        assert grid.nearest(0.3) == 1


class TestSampleIndex:
    def test_matches_distribution(self):
        rng = np.random.default_rng(7)
        probs = np.array([0.1, 0.2, 0.7])
        draws = np.bincount([sample_index(rng, probs) for _ in range(20000)], minlength=3)
        assert np.allclose(draws / 20000, probs, atol=0.02)

    def test_never_out_of_range(self):
        rng = np.random.default_rng(1)
        probs = np.array([1.0, 0.0])
        assert all(sample_index(rng, probs) == 0 for _ in range(100))


def test_entropy_uniform():
    assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))
