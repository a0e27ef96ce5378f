"""Catalog of the structures exercised throughout the tests and demos."""

import numpy as np

from .poisson import make_constant, make_linear, make_polynomial


def zero2d():
    return make_constant(np.zeros((2, 2)), label="zero2d")


def moyal2d():
    """Canonical symplectic structure on R^2."""
    return make_constant([[0.0, 1.0], [-1.0, 0.0]], label="moyal2d")


def so3(sign=1):
    """Linear structure from the so(3) epsilon-tensor bracket."""
    c = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        c[i, j, k] = 1.0
        c[j, i, k] = -1.0
    return make_linear(c, sign=sign, label="so3")


def affine2(sign=1):
    """Two-dimensional affine algebra [e1, e2] = e2."""
    c = np.zeros((2, 2, 2))
    c[0, 1, 1] = 1.0
    c[1, 0, 1] = -1.0
    return make_linear(c, sign=sign, label="affine2")


def quad2d():
    """Quadratic structure pi^{12}(x) = x1 x2 on R^2."""
    return make_polynomial(2, {(0, 1): {(1, 1): 1.0}}, label="quad2d")


CATALOG = {
    "zero2d": zero2d,
    "moyal2d": moyal2d,
    "so3": so3,
    "affine2": affine2,
    "quad2d": quad2d,
}


def by_name(name):
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown builtin structure {name!r}; "
                       f"choices: {sorted(CATALOG)}") from None
