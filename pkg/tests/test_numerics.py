import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sorbet.errors import DomainError, FixedOverflowError, RangeError
from sorbet.numerics import (
    LUT_FALLBACKS,
    LUT_MAX_MANTISSA,
    FixedTensor,
    Pow2Exponent,
    nearest_pow2_exponent,
    pow2_exponent_array,
    pow2_floor_log2_clz,
    pow2_lut,
    pow2_lut_array,
    shift_div,
)

mantissas = arrays(np.int64, st.integers(1, 20), elements=st.integers(-(2**31), 2**31 - 1))


def oracle_exponent(x: Fraction, mode: str) -> int:
    """Independent reference: 60-digit log2, checked against exact powers."""
    with mpmath.workdps(60):
        lg = mpmath.log(mpmath.mpf(x.numerator) / x.denominator, 2)
        if mode == "ceil":
            k = int(mpmath.ceil(lg))
            # guard against log landing a hair off an exact power
            if Fraction(2) ** (k - 1) >= x:
                k -= 1
            return k
        return int(mpmath.floor(lg + mpmath.mpf("0.5")))


class TestFixedTensor:
    def test_real_value(self):
        t = FixedTensor(np.array([256, -128, 1]), frac_bits=8)
        np.testing.assert_array_equal(t.to_real(), [1.0, -0.5, 1 / 256])
        assert t.ulp == 2**-8

    def test_overflow_is_an_error(self):
        with pytest.raises(FixedOverflowError):
            FixedTensor(np.array([2**31]), width=32)
        with pytest.raises(FixedOverflowError):
            FixedTensor.from_real([1e9], frac_bits=8)

    def test_big_python_ints_are_range_checked(self):
        with pytest.raises(FixedOverflowError):
            FixedTensor(np.array([2**70], dtype=object), width=32)

    def test_non_integer_mantissa_rejected(self):
        with pytest.raises(TypeError):
            FixedTensor(np.array([0.5]))

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            FixedTensor.from_real([np.nan])

    def test_mantissas_are_read_only(self):
        t = FixedTensor(np.array([1, 2]))
        with pytest.raises(ValueError):
            t.mantissas[0] = 5

    def test_from_fractions_requires_grid(self):
        assert FixedTensor.from_fractions([Fraction(3, 4)], 2).mantissas.tolist() == [3]
        with pytest.raises(DomainError):
            FixedTensor.from_fractions([Fraction(1, 3)], 8)

    def test_regrid_floors(self):
        t = FixedTensor(np.array([7, -7]), frac_bits=2)
        assert t.regrid(1).mantissas.tolist() == [3, -4]
        assert t.regrid(4).mantissas.tolist() == [28, -28]

    def test_regrid_overflow(self):
        with pytest.raises(FixedOverflowError):
            FixedTensor(np.array([2**20]), 0).regrid(20)

    def test_zero_survives_wide_shift(self):
        assert FixedTensor.zeros((3,), 0).regrid(40).mantissas.tolist() == [0, 0, 0]

    @given(mantissas, st.integers(0, 20))
    def test_round_trip_through_fractions(self, m, f):
        t = FixedTensor(m, f)
        assert FixedTensor.from_fractions(t.to_fractions(), f) == t

    @given(mantissas, st.integers(0, 20))
    def test_round_trip_through_reals(self, m, f):
        t = FixedTensor(m, f)
        assert FixedTensor.from_real(t.to_real(), f) == t


class TestShiftDiv:
    def test_examples(self):
        assert shift_div(FixedTensor(np.array([16]), 0), 2).mantissas.tolist() == [4]
        assert shift_div(FixedTensor(np.array([-7]), 0), Pow2Exponent(1)).mantissas.tolist() == [-4]

    def test_random_tensor_k3(self):
        rng = np.random.default_rng(3)
        t = FixedTensor(rng.integers(-(2**20), 2**20, 500), 8)
        got = shift_div(t, 3).to_fractions()
        for v, g in zip(t.to_fractions(), got):
            # floor of the exact quotient, on the same grid
            assert g == Fraction(math.floor(v * 256 / 8), 256)

    @given(mantissas, st.integers(0, 70))
    def test_matches_floor_division(self, m, k):
        got = shift_div(FixedTensor(m, 0), k).mantissas
        assert got.tolist() == [int(v) // (1 << k) for v in m]

    def test_negative_k_shifts_left_with_overflow_check(self):
        assert shift_div(FixedTensor(np.array([3]), 0), -2).mantissas.tolist() == [12]
        with pytest.raises(FixedOverflowError):
            shift_div(FixedTensor(np.array([2**30]), 0), -2)


class TestNearestPow2:
    @pytest.mark.parametrize("x, mode, k", [
        (8, "ceil", 3), (5, "ceil", 3), (5, "round_nearest", 2), (1, "ceil", 0),
        (1, "round_nearest", 0), (Fraction(3, 4), "ceil", 0), (Fraction(3, 4), "round_nearest", 0),
        (Fraction(1, 3), "round_nearest", -2), (6, "round_nearest", 3),
    ])
    def test_examples(self, x, mode, k):
        assert nearest_pow2_exponent(x, mode).k == k

    def test_round_nearest_matches_high_precision_log(self):
        assert nearest_pow2_exponent(5, "round_nearest").k == round(float(mpmath.log(5, 2)))

    @pytest.mark.parametrize("mode", ["ceil", "round_nearest"])
    @given(m=st.integers(-200, 200))
    def test_exact_powers(self, mode, m):
        assert nearest_pow2_exponent(Fraction(2) ** m, mode).k == m

    @pytest.mark.parametrize("mode", ["ceil", "round_nearest"])
    @given(p=st.integers(1, 2**80), q=st.integers(1, 2**40))
    def test_against_log_oracle(self, mode, p, q):
        x = Fraction(p, q)
        assert nearest_pow2_exponent(x, mode).k == oracle_exponent(x, mode)

    def test_sqrt2_boundary(self):
        # just below / above sqrt(2) * 2**4
        lo = Fraction(math.isqrt(2 * 2**80), 2**36)
        assert nearest_pow2_exponent(lo, "round_nearest").k == 4
        assert nearest_pow2_exponent(lo + Fraction(1, 2**36), "round_nearest").k == 5

    def test_fixed_tensor_input(self):
        assert nearest_pow2_exponent(FixedTensor(np.array([40]), 3), "ceil").k == 3

    @pytest.mark.parametrize("bad", [0, -1, float("nan"), float("inf")])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            nearest_pow2_exponent(bad)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            nearest_pow2_exponent(3, "floor")

    def test_exponent_arithmetic(self):
        k = Pow2Exponent(3)
        assert int(k + 2) == 5 and int(k - Pow2Exponent(1)) == 2 and int(-k) == -3
        assert k.value == 8 and Pow2Exponent(-2).value == Fraction(1, 4)


class TestLut:
    @pytest.mark.parametrize("x, mode, k", [(8, "ceil", 3), (1, "ceil", 0), (1, "round_nearest", 0)])
    def test_examples(self, x, mode, k):
        assert pow2_lut(x, mode).k == k

    def test_frac_bits(self):
        assert pow2_lut(FixedTensor(np.array([3]), 2), "round_nearest").k == 0
        assert pow2_lut(96, "ceil", frac_bits=4).k == 3

    @pytest.mark.parametrize("mode", ["ceil", "round_nearest"])
    def test_agrees_with_log_path_on_random_inputs(self, mode):
        rng = np.random.default_rng(11)
        xs = rng.integers(1, LUT_MAX_MANTISSA + 1, 10_000)
        got = pow2_lut_array(xs, mode)
        want = [nearest_pow2_exponent(int(v), mode).k for v in xs]
        assert got.tolist() == want

    @pytest.mark.parametrize("mode", ["ceil", "round_nearest"])
    def test_agrees_on_every_boundary(self, mode):
        # around each power of two and each sqrt(2) threshold
        pts = set()
        for b in range(25):
            for c in (1 << b, math.isqrt(1 << (2 * b + 1))):
                pts.update(v for v in range(c - 2, c + 3) if 1 <= v <= LUT_MAX_MANTISSA)
        xs = np.array(sorted(pts))
        assert pow2_lut_array(xs, mode).tolist() == [nearest_pow2_exponent(int(v), mode).k for v in xs]

    @given(st.integers(1, LUT_MAX_MANTISSA))
    def test_clz_floor_log2(self, m):
        assert int(pow2_floor_log2_clz(np.array([m]))[0]) == m.bit_length() - 1

    def test_range(self):
        for bad in (0, LUT_MAX_MANTISSA + 1):
            with pytest.raises(RangeError):
                pow2_lut(bad)

    def test_fallback_counted(self):
        before = LUT_FALLBACKS.count
        out = pow2_lut_array(np.array([3, 2**40 + 1]), "ceil")
        assert out.tolist() == [2, 41]
        assert LUT_FALLBACKS.count == before + 1

    @pytest.mark.parametrize("mode", ["ceil", "round_nearest"])
    @given(st.integers(1, 2**60))
    def test_vectorised_log_path(self, mode, m):
        assert int(pow2_exponent_array(np.array([m]), mode)[0]) == nearest_pow2_exponent(m, mode).k
