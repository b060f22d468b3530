"""Gaussian quadrature rules, including breakpoint handling."""

import numpy as np
from scipy.stats import norm

from vampse.quadrature import gauss_hermite, normal_rule


def test_gauss_hermite_normal_moments():
    x, w = gauss_hermite(61)
    np.testing.assert_allclose(np.sum(w), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.sum(w * x * x), 1.0, atol=1e-13)
    np.testing.assert_allclose(np.sum(w * x ** 4), 3.0, atol=1e-12)


def test_normal_rule_plain_matches_gh():
    x, w = normal_rule(4.0)
    np.testing.assert_allclose(np.sum(w * x * x), 4.0, atol=1e-12)


def test_normal_rule_with_breakpoint_resolves_indicator():
    # P(Z > 0.3) for Z ~ N(0, 2.25): discontinuous integrand, exact with a panel cut
    var = 2.25
    x, w = normal_rule(var, breakpoints=(0.3,))
    got = np.sum(w * (x > 0.3))
    want = norm.sf(0.3, scale=np.sqrt(var))
    np.testing.assert_allclose(got, want, atol=1e-13)
    np.testing.assert_allclose(np.sum(w), 1.0, atol=1e-13)
    np.testing.assert_allclose(np.sum(w * x * x), var, atol=1e-11)


def test_normal_rule_half_line_mean():
    # E[Z 1{Z>0}] = sqrt(T / (2 pi))
    t = 0.1
    x, w = normal_rule(t, breakpoints=(0.0,))
    np.testing.assert_allclose(np.sum(w * x * (x > 0)), np.sqrt(t / (2 * np.pi)),
                               atol=1e-14)


def test_degenerate_variance():
    x, w = normal_rule(0.0)
    assert x.tolist() == [0.0] and w.tolist() == [1.0]
