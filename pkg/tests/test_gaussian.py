import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from macdisp.gaussian import (
    GaussianMac,
    QuadratureRule,
    closed_form_iv,
    convergence_table,
    gauss_rule,
    hermite_expectation,
    m_for_blocklength,
    normal_moment,
    quantized_iv,
    relative_entropy_gap,
    third_abs_moments,
)
from oracles import double_factorial_moment, fit_slope

UNIT = GaussianMac(1.0, 1.0)


def output_entropy_oracle(p1, p2, m):
    """``h(Y)`` of the quantized output mixture by adaptive quadrature."""
    rule = gauss_rule(m)
    mu = (math.sqrt(p1) * rule.nodes[:, None] + math.sqrt(p2) * rule.nodes[None, :]).ravel()
    wt = np.outer(rule.weights, rule.weights).ravel()

    def dens(y):
        return float(wt @ np.exp(-0.5 * (y - mu) ** 2)) / math.sqrt(2 * math.pi)

    def f(y):
        q = dens(y)
        return -q * math.log(q) if q > 0 else 0.0

    lo, hi = mu.min() - 12, mu.max() + 12
    val, _ = integrate.quad(f, lo, hi, limit=500, epsabs=1e-13, epsrel=1e-12, points=sorted(set(mu.round(6)))[:50])
    return val


# --------------------------------------------------------------------------
# Closed form


def test_closed_form_unit_powers():
    i, v = closed_form_iv(UNIT)
    np.testing.assert_allclose(i.as_array(), [0.346574, 0.346574, 0.549306], atol=1e-6)
    assert v.m[0, 0] == pytest.approx(0.375, abs=1e-12)
    assert v.m[0, 1] == pytest.approx(0.125, abs=1e-12)
    assert v.m[0, 2] == pytest.approx(1 / 3, abs=1e-12)
    assert v.m[2, 2] == pytest.approx(5 / 9, abs=1e-12)
    assert v.is_psd


def test_closed_form_zero_powers():
    i, v = closed_form_iv(GaussianMac(0.0, 0.0))
    assert np.all(i.as_array() == 0) and np.all(v.m == 0)


def test_invalid_powers():
    for p in (-1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            GaussianMac(p, 1.0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_closed_form_psd_and_symmetric(p1, p2):
    i, v = closed_form_iv(GaussianMac(p1, p2))
    np.testing.assert_array_equal(v.m, v.m.T)
    assert v.min_eig >= -1e-12
    assert i.r12 <= i.r1 + i.r2 + 1e-12 and i.r12 >= max(i.r1, i.r2) - 1e-12


# --------------------------------------------------------------------------
# Gauss rules


def test_rule_m1_and_m2():
    r1 = gauss_rule(1)
    assert r1.nodes.tolist() == [0.0] and r1.weights.tolist() == [1.0]
    r2 = gauss_rule(2)
    np.testing.assert_allclose(r2.nodes, [-1, 1], atol=1e-15)
    np.testing.assert_allclose(r2.weights, [0.5, 0.5], atol=1e-15)


def test_rule_m10_moments():
    rule = gauss_rule(10)
    for k in range(20):
        assert abs(rule.moment(k) - double_factorial_moment(k)) < 1e-9 * max(1.0, double_factorial_moment(k))


@pytest.mark.parametrize("m", range(1, 17))
def test_rule_moments_absolute(m):
    rule = gauss_rule(m)
    for k in range(2 * m):
        assert abs(float(rule.moment(k)) - normal_moment(k)) < 1e-9


@pytest.mark.parametrize("m", [3, 7, 16])
def test_rule_fails_beyond_degree(m):
    rule = gauss_rule(m)
    assert abs(float(rule.moment(2 * m)) - normal_moment(2 * m)) > 1e-3


def test_float_rule_close():
    # without refinement the Jacobi eigenvectors alone give double-precision rules
    for m in (5, 10, 16):
        plain, fine = gauss_rule(m, None), gauss_rule(m)
        assert plain.mp_nodes is None
        np.testing.assert_allclose(plain.nodes, fine.nodes, atol=1e-12)
        np.testing.assert_allclose(plain.weights, fine.weights, atol=1e-13)


def test_rule_invariants_and_errors():
    for m in range(1, 17):
        r = gauss_rule(m)
        assert np.all(r.weights > 0) and abs(r.weights.sum() - 1) < 1e-12
        assert np.all(np.diff(r.nodes) > 0)
        np.testing.assert_array_equal(r.nodes, -r.nodes[::-1])
    with pytest.raises(ValueError):
        gauss_rule(0)
    with pytest.raises(ValueError):
        QuadratureRule(2, np.array([-1.0, 1.0]), np.array([0.3, 0.7]))


def test_normal_moment_oracle():
    for k in range(25):
        assert normal_moment(k) == double_factorial_moment(k)


# --------------------------------------------------------------------------
# Hermite expectations


@pytest.mark.parametrize("m", [1, 2, 5, 9, 16])
def test_hermite_vanishes(m):
    for k in range(1, 2 * m):
        assert abs(hermite_expectation(m, k)) < 1e-9
    for k in range(1, 4 * m + 3, 2):
        assert abs(hermite_expectation(m, k, 1.0, 3.0)) < 1e-10


def test_hermite_constant_and_mismatch():
    assert hermite_expectation(4, 0) == 1.0
    # E[He_4] = E[S^4] - 3 with S = (X1 + X2)/sqrt(2) and E[Xi^4] = 1 on two points
    assert hermite_expectation(2, 4) == pytest.approx(-1.0, abs=1e-12)


def test_hermite_errors():
    with pytest.raises(ValueError):
        hermite_expectation(3, -1)
    with pytest.raises(ValueError):
        hermite_expectation(3, 2, 0.0, 0.0)


# --------------------------------------------------------------------------
# Quantized (I, V)


def test_single_point_inputs_carry_nothing():
    im, vm = quantized_iv(UNIT, 1)
    assert np.max(np.abs(im.as_array())) < 1e-12
    assert np.max(np.abs(vm.m)) < 1e-12


def test_sum_rate_against_entropy_oracle():
    m = 3
    im, _ = quantized_iv(UNIT, m)
    want = output_entropy_oracle(1.0, 1.0, m) - 0.5 * math.log(2 * math.pi * math.e)
    assert im.r12 == pytest.approx(want, abs=1e-9)


def test_information_error_decays_exponentially():
    i, _ = closed_form_iv(UNIT)
    ms = list(range(2, 11))
    errs = [np.max(np.abs(quantized_iv(UNIT, m)[0].as_array() - i.as_array())) for m in ms]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert np.polyfit(ms, np.log(errs), 1)[0] < 0


def test_dispersion_close_at_m12():
    _, v = closed_form_iv(UNIT)
    _, vm = quantized_iv(UNIT, 12)
    assert np.max(np.abs(vm.m - v.m)) < 0.01
    assert vm.is_psd


def test_monotone_in_first_power():
    prev = None
    for p1 in (0.25, 0.5, 1.0, 2.0, 4.0):
        im = quantized_iv(GaussianMac(p1, 1.0), 6)[0].as_array()
        if prev is not None:
            assert im[0] > prev[0] and im[2] > prev[2]
        prev = im


def test_third_moments_bounded():
    rows = np.array([third_abs_moments(UNIT, m) for m in range(4, 17)])
    assert np.all(rows > 0)
    assert np.all(rows.max(0) / rows.min(0) < 2)


# --------------------------------------------------------------------------
# Relative-entropy gap


def test_relative_entropy_gap_properties():
    ds = [relative_entropy_gap(UNIT, m) for m in (1, 2, 4, 8, 16)]
    assert all(d >= 0 for d in ds)
    assert all(b < a for a, b in zip(ds[:-1], ds[1:-1]))
    assert ds[-1] <= ds[-2] and ds[-1] < 1e-6


def divergence_oracle(p1, p2, m):
    rule = gauss_rule(m)
    mu = (math.sqrt(p1) * rule.nodes[:, None] + math.sqrt(p2) * rule.nodes[None, :]).ravel()
    wt = np.outer(rule.weights, rule.weights).ravel()
    var = 1 + p1 + p2

    def f(y):
        p = math.exp(-0.5 * y * y / var) / math.sqrt(2 * math.pi * var)
        q = float(wt @ np.exp(-0.5 * (y - mu) ** 2)) / math.sqrt(2 * math.pi)
        return p * math.log(p / q) if p > 0 else 0.0

    val, _ = integrate.quad(f, -15 * math.sqrt(var), 15 * math.sqrt(var), limit=500, epsabs=1e-14, epsrel=1e-12)
    return val


def test_relative_entropy_gap_single_point_closed_form():
    # constant inputs: D(N(0, 3) || N(0, 1)) = (3 - 1 - log 3) / 2
    assert relative_entropy_gap(UNIT, 1) == pytest.approx(0.5 * (2 - math.log(3)), abs=1e-12)


@pytest.mark.parametrize("m,p1,p2", [(2, 1.0, 1.0), (3, 1.0, 1.0), (4, 2.0, 0.5)])
def test_relative_entropy_gap_against_oracle(m, p1, p2):
    assert relative_entropy_gap(GaussianMac(p1, p2), m) == pytest.approx(divergence_oracle(p1, p2, m), abs=1e-9)


def test_convergence_table_rows():
    rows = convergence_table(UNIT, [1, 2, 3])
    assert [r["m"] for r in rows] == [1, 2, 3]
    assert rows[0]["I12_m"] == pytest.approx(0, abs=1e-12)
    assert rows[0]["D_m"] == pytest.approx(0.5 * (2 - math.log(3)), abs=1e-12)
    assert rows[2]["I_err_inf"] < rows[1]["I_err_inf"] < rows[0]["I_err_inf"]


def test_m_for_blocklength():
    assert m_for_blocklength(1) == 1
    assert m_for_blocklength(10_000) == 10
    assert m_for_blocklength(65_536) == 16
    with pytest.raises(ValueError):
        m_for_blocklength(0)
    slope = fit_slope([16, 256, 4096, 65536], [m_for_blocklength(n) for n in (16, 256, 4096, 65536)])
    assert slope == pytest.approx(0.25, abs=1e-9)
