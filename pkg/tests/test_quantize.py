import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sorbet.errors import DegenerateInputError, DomainError, ShapeError
from sorbet.numerics import FixedTensor
from sorbet.quantize import BinaryLinear, ElasticParams, binarize_weights, elastic_binarize, elastic_levels, pow2_scale

reals = arrays(np.float64, st.integers(1, 40), elements=st.floats(-20, 20))


def level_oracle(x: Fraction, beta: Fraction, k: int, top: int) -> int:
    v = (x - beta) / Fraction(2) ** k
    return min(max(math.floor(v + Fraction(1, 2)), 0), top)


class TestPow2Scale:
    @pytest.mark.parametrize("alpha, k", [(1.0, 0), (0.5, -1), (0.7, -1), (0.72, 0), (3.0, 2), (2.8, 1)])
    def test_examples(self, alpha, k):
        assert pow2_scale(alpha) == k

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            pow2_scale(bad)


class TestElastic:
    @pytest.mark.parametrize("x, beta, k, want", [
        (0.7, 0.0, 0, 1.0),
        (-5.0, 0.0, 0, 0.0),
        (0.8, 0.5, -1, 0.5),
    ])
    def test_binary_examples(self, x, beta, k, want):
        p = ElasticParams.from_exponent(k, beta, bits=1)
        assert elastic_binarize(FixedTensor.from_real([x]), p).to_real().tolist() == [want]

    def test_half_rounds_up(self):
        p = ElasticParams(1.0, bits=4)
        assert elastic_levels(FixedTensor.from_real([0.5, 1.5, 2.49]), p).tolist() == [1, 2, 2]

    @given(reals, st.floats(-2, 2), st.integers(-4, 3), st.sampled_from([1, 2, 4]))
    def test_levels_match_rational_oracle(self, x, beta, k, bits):
        p = ElasticParams.from_exponent(k, beta, bits)
        t = FixedTensor.from_real(x)
        b = Fraction(p.beta_mantissa(8), 256)
        want = [level_oracle(v, b, k, p.max_level) for v in t.to_fractions()]
        assert elastic_levels(t, p).tolist() == want

    @given(reals, st.integers(-4, 3), st.sampled_from([1, 4]))
    def test_output_set(self, x, k, bits):
        p = ElasticParams.from_exponent(k, 0.25, bits)
        out = elastic_binarize(FixedTensor.from_real(x), p).to_fractions()
        assert len(set(out.tolist())) <= 2 ** bits
        assert all((v / Fraction(2) ** k).denominator == 1 for v in out)

    @given(reals, st.integers(-4, 3))
    def test_monotone(self, x, k):
        p = ElasticParams.from_exponent(k, -0.5)
        xs = np.sort(x)
        out = elastic_binarize(FixedTensor.from_real(xs), p).mantissas
        assert np.all(np.diff(out) >= 0)

    def test_shift_vs_divide_disagreement_is_reported(self):
        rng = np.random.default_rng(0)
        alpha = 0.7
        p = ElasticParams(alpha, 0.0, bits=4)
        t = FixedTensor.from_real(rng.uniform(-1, 12, 20_000))
        by_shift = elastic_levels(t, p)
        by_div = np.clip(np.floor(t.to_real() / alpha + 0.5), 0, 15)
        rate = float(np.mean(by_shift != by_div))
        print(f"alpha={alpha}: shift/divide disagreement rate {rate:.4f}")
        assert 0.0 <= rate <= 1.0

    def test_bits_validation(self):
        with pytest.raises(ValueError):
            ElasticParams(1.0, bits=0)


class TestBinarizeWeights:
    @pytest.mark.parametrize("c", [0.25, 1.0, 8.0])
    def test_exact_for_power_of_two_magnitude(self, c):
        W = np.random.default_rng(1).choice([-c, c], size=(5, 4))
        bl = binarize_weights(W)
        np.testing.assert_array_equal(bl.dense(), W)

    def test_half(self):
        bl = binarize_weights([[0.5, -0.5]])
        assert bl.signs.tolist() == [[1, -1]] and bl.scale_exponent == -1
        np.testing.assert_array_equal(bl.dense(), [[0.5, -0.5]])

    @pytest.mark.parametrize("seed", range(20))
    def test_gaussian_minimises_error_over_neighbours(self, seed):
        W = np.random.default_rng(seed).normal(0, 10 ** np.random.default_rng(seed).uniform(-2, 1), (16, 8))
        bl = binarize_weights(W)
        err = lambda k: float(np.sum((W - np.sign(W) * 2.0 ** k) ** 2))
        k_star = round(math.log2(np.abs(W).mean()))
        assert err(bl.scale_exponent) <= min(err(k) for k in range(k_star - 2, k_star + 3)) + 1e-12

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-5, 5)))
    def test_sign_preserving(self, W):
        if not np.any(W):
            return
        bl = binarize_weights(W)
        assert np.all(bl.signs * W >= 0)
        assert np.all(bl.signs[W == 0] == 1)

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            binarize_weights(np.zeros((2, 2)))

    def test_bias(self):
        bl = binarize_weights(np.ones((2, 3)), bias=[0.5, 0, -1])
        assert bl.out_bias.mantissas.tolist() == [128, 0, -256]


class TestBinaryLinear:
    def test_validation(self):
        with pytest.raises(ValueError):
            BinaryLinear(np.array([[0, 1]]), 0)
        with pytest.raises(ShapeError):
            BinaryLinear(np.array([1, -1]), 0)
        with pytest.raises(ShapeError):
            BinaryLinear(np.ones((2, 2)), 0, FixedTensor.zeros((3,)))

    def test_with_scale(self):
        bl = BinaryLinear(np.ones((2, 2)), -1).with_scale(3)
        assert bl.scale_exponent == 2 and bl.in_features == bl.out_features == 2
