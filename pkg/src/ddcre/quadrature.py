"""Quadrature rules and scaled monomial bases on triangles."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss product rule on the unit triangle.

    Returns ``(points, weights)`` with points in barycentric-free reference
    coordinates ``(r, s)`` of the triangle ``(0,0), (1,0), (0,1)`` and weights
    summing to 1/2.  Exact for polynomials of total degree ``degree``.
    """
    n = max(1, int(np.ceil((degree + 1) / 2)))
    # Gauss-Jacobi(alpha=1) absorbs the Duffy Jacobian (1 - u)
    xu, wu = roots_jacobi(n, 1.0, 0.0)
    xv, wv = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xu + 1.0)
    wu = wu / 4.0
    v = 0.5 * (xv + 1.0)
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    r = U.ravel()
    s = (V * (1.0 - U)).ravel()
    pts = np.column_stack([r, s])
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def line_rule(n):
    """Gauss-Legendre rule on [0, 1]; exact to degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def map_points(coords, ref_pts):
    """Map reference points onto each triangle.

    coords: (T, 3, 2) vertex coordinates; ref_pts: (Q, 2).
    Returns (T, Q, 2).
    """
    p0 = coords[:, 0, :]
    e1 = coords[:, 1, :] - p0
    e2 = coords[:, 2, :] - p0
    return (p0[:, None, :] + ref_pts[None, :, 0, None] * e1[:, None, :]
            + ref_pts[None, :, 1, None] * e2[:, None, :])


@lru_cache(maxsize=None)
def monomial_exponents(degree):
    """Exponent pairs (a, b) with a + b <= degree, graded order."""
    exps = [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]
    arr = np.array(exps, dtype=int)
    arr.setflags(write=False)
    return arr


def monomials(xi, eta, degree):
    """Values of the scaled monomials xi**a * eta**b, shape (..., nb)."""
    exps = monomial_exponents(degree)
    return xi[..., None] ** exps[:, 0] * eta[..., None] ** exps[:, 1]


def monomial_gradients(xi, eta, degree):
    """Derivatives with respect to xi and eta, each of shape (..., nb)."""
    exps = monomial_exponents(degree)
    a = exps[:, 0]
    b = exps[:, 1]
    am1 = np.maximum(a - 1, 0)
    bm1 = np.maximum(b - 1, 0)
    dxi = a * xi[..., None] ** am1 * eta[..., None] ** b
    deta = b * xi[..., None] ** a * eta[..., None] ** bm1
    return dxi, deta


def derivative_matrices(degree):
    """Coefficient maps for d/dxi and d/deta on the monomial basis.

    Both map degree-``degree`` coefficients onto degree-``degree - 1``
    coefficients, shape (nb_low, nb_high).
    """
    high = monomial_exponents(degree)
    low = monomial_exponents(max(degree - 1, 0))
    index = {tuple(e): k for k, e in enumerate(low)}
    Dx = np.zeros((len(low), len(high)))
    Dy = np.zeros((len(low), len(high)))
    for k, (a, b) in enumerate(high):
        if a > 0:
            Dx[index[(a - 1, b)], k] = a
        if b > 0:
            Dy[index[(a, b - 1)], k] = b
    return Dx, Dy
