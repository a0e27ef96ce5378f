"""Sparse multivariate polynomials over exponent tables.

Polynomials are dicts mapping exponent tuples (length = number of
variables) to float coefficients.  Differentiation is exact term-by-term
arithmetic on the table; evaluation is vectorized over a leading batch
axis.  This representation backs the Poisson coefficient tables, the
polynomial vector fields of the tree calculus and the graph symbols.
"""

import numpy as np

Table = dict


def clean(table, tol=0.0):
    """Drop zero (or below-tolerance) coefficients."""
    return {a: c for a, c in table.items() if abs(c) > tol}


def add(t1, t2, s1=1.0, s2=1.0):
    out = {a: s1 * c for a, c in t1.items()}
    for a, c in t2.items():
        out[a] = out.get(a, 0.0) + s2 * c
    return clean(out)


def scale(table, s):
    return {a: s * c for a, c in table.items()}


def multiply(t1, t2):
    out = {}
    for a1, c1 in t1.items():
        for a2, c2 in t2.items():
            a = tuple(e1 + e2 for e1, e2 in zip(a1, a2))
            out[a] = out.get(a, 0.0) + c1 * c2
    return clean(out)


def derive(table, k):
    """Exact partial derivative with respect to variable ``k``."""
    out = {}
    for a, c in table.items():
        if a[k] == 0:
            continue
        b = list(a)
        b[k] -= 1
        out[tuple(b)] = out.get(tuple(b), 0.0) + c * a[k]
    return out


def derive_multi(table, multi):
    """Iterated partial derivative for a multi-index ``multi``."""
    for k, order in enumerate(multi):
        for _ in range(order):
            table = derive(table, k)
    return table


def evaluate(table, x):
    """Evaluate at ``x`` of shape (..., nvars); returns shape (...)."""
    x = np.asarray(x, dtype=float)
    if not table:
        return np.zeros(x.shape[:-1])
    exps = np.array(list(table.keys()), dtype=np.int64)       # (M, nvars)
    coeffs = np.array(list(table.values()), dtype=float)      # (M,)
    mono = np.prod(x[..., None, :] ** exps, axis=-1)          # (..., M)
    return mono @ coeffs


def degree(table):
    return max((sum(a) for a in table), default=0)


class MonomialBasis:
    """Dense compilation of a family of polynomials over a shared monomial
    basis, for fast batched evaluation.

    Parameters
    ----------
    tables : sequence of Table
        Polynomials over the same variable set.
    nvars : int
        Number of variables.
    """

    def __init__(self, tables, nvars):
        alphas = sorted({a for t in tables for a in t})
        if not alphas:
            alphas = [(0,) * nvars]
        self.nvars = nvars
        self.exponents = np.array(alphas, dtype=np.int64)            # (M, nvars)
        index = {a: m for m, a in enumerate(alphas)}
        coeffs = np.zeros((len(tables), len(alphas)))
        for r, t in enumerate(tables):
            for a, c in t.items():
                coeffs[r, index[a]] = c
        self.coeffs = coeffs                                          # (R, M)

    def monomials(self, x):
        x = np.asarray(x, dtype=float)
        return np.prod(x[..., None, :] ** self.exponents, axis=-1)   # (..., M)

    def evaluate(self, x):
        """Shape (..., nvars) -> (..., R)."""
        return self.monomials(x) @ self.coeffs.T
