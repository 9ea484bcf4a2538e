from math import factorial

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ddcre.quadrature import (derivative_matrices, line_rule, map_points, monomial_exponents,
                              monomials, triangle_rule)


def exact_monomial_integral(a, b):
    # integral of r^a s^b over the unit triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10))
def test_triangle_rule_is_exact_up_to_its_degree(a, b):
    pts, w = triangle_rule(a + b)
    val = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
    assert np.isclose(val, exact_monomial_integral(a, b), rtol=1e-12, atol=1e-15)


def test_triangle_rule_weights_and_points():
    for deg in range(0, 12):
        pts, w = triangle_rule(deg)
        assert np.isclose(w.sum(), 0.5)
        assert np.all(w > 0)
        assert np.all(pts >= 0) and np.all(pts.sum(axis=1) <= 1 + 1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 15))
def test_line_rule_exactness(n, k):
    t, w = line_rule(n)
    if k <= 2 * n - 1:
        assert np.isclose(np.sum(w * t ** k), 1.0 / (k + 1), rtol=1e-12)


def test_map_points_hits_vertices():
    coords = np.array([[[1.0, 2.0], [3.0, 2.5], [0.5, 4.0]]])
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(map_points(coords, ref)[0], coords[0])


def test_monomial_count_and_derivatives():
    for deg in range(0, 6):
        assert len(monomial_exponents(deg)) == (deg + 1) * (deg + 2) // 2
    deg = 4
    Dx, Dy = derivative_matrices(deg)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(len(monomial_exponents(deg)))
    x, y, h = 0.3, -0.2, 1e-6
    f = lambda xx, yy: monomials(np.array([xx]), np.array([yy]), deg)[0] @ c
    low = monomials(np.array([x]), np.array([y]), deg - 1)[0]
    assert np.isclose(low @ (Dx @ c), (f(x + h, y) - f(x - h, y)) / (2 * h), rtol=1e-6)
    assert np.isclose(low @ (Dy @ c), (f(x, y + h) - f(x, y - h)) / (2 * h), rtol=1e-6)
