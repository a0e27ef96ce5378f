"""Topological rooted trees, their combinatorial coefficients, and
elementary differentials / Butcher series for polynomial vector fields.

Trees are kept in a canonical recursive form (children ordered by size,
then recursive lexicographic key), so structural equality decides
topological equality.  Combinatorial coefficients are exact integers or
Fractions; floating point enters only when differentials are evaluated.
"""

from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import _poly

MAX_ORDER = 8


class RootedTree:
    """A topological rooted tree: an ordered multiset of subtrees.

    The constructor canonicalizes the child order, so two trees are
    equal iff they are isomorphic as rooted trees.  The serialization is
    nested brackets: the single vertex is "[]", the 2-chain "[[]]", the
    3-vertex star "[[],[]]".
    """

    __slots__ = ("children", "order", "_key", "_hash")

    def __init__(self, children=()):
        children = tuple(sorted(children, key=lambda t: t._key))
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "order", 1 + sum(c.order for c in children))
        object.__setattr__(self, "_key",
                           (self.order,) + tuple(c._key for c in children))
        object.__setattr__(self, "_hash", hash(self._key))

    def __setattr__(self, name, value):
        raise AttributeError("RootedTree is immutable")

    def __eq__(self, other):
        return isinstance(other, RootedTree) and self._key == other._key

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self._key < other._key

    def __len__(self):
        return self.order

    def __repr__(self):
        return f"RootedTree({self.serialize()!r})"

    def serialize(self):
        return "[" + ",".join(c.serialize() for c in self.children) + "]"

    @staticmethod
    def parse(text):
        text = text.replace(" ", "")
        pos = 0

        def read():
            nonlocal pos
            if pos >= len(text) or text[pos] != "[":
                raise ValueError(f"expected '[' at position {pos} in {text!r}")
            pos += 1
            children = []
            while text[pos] != "]":
                children.append(read())
                if text[pos] == ",":
                    pos += 1
            pos += 1
            return RootedTree(children)

        tree = read()
        if pos != len(text):
            raise ValueError(f"trailing characters in {text!r}")
        return tree


LEAF = RootedTree()


@lru_cache(maxsize=None)
def _forests(total, max_key):
    """Multisets of trees with orders summing to ``total``, listed as
    tuples in non-increasing key order with every key <= max_key."""
    if total == 0:
        return ((),)
    out = []
    for first_order in range(min(total, MAX_ORDER), 0, -1):
        for first in enumerate_trees(first_order):
            if first._key > max_key:
                continue
            for rest in _forests(total - first_order, first._key):
                out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def enumerate_trees(n):
    """All topological rooted trees with n vertices, each exactly once,
    in a deterministic order."""
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"n must be between 1 and {MAX_ORDER}")
    if n == 1:
        return (LEAF,)
    # (n,) dominates the key of every tree with fewer than n vertices
    return tuple(sorted(RootedTree(f) for f in _forests(n - 1, (n,))))


def sigma(t):
    """Symmetry coefficient: order of the automorphism group."""
    out = 1
    groups = {}
    for c in t.children:
        groups[c] = groups.get(c, 0) + 1
    for c, mult in groups.items():
        fact = 1
        for k in range(2, mult + 1):
            fact *= k
        out *= fact * sigma(c) ** mult
    return out


def tree_factorial(t):
    """t! = |t| t_1! ... t_k!; the single vertex gives 1."""
    out = t.order
    for c in t.children:
        out *= tree_factorial(c)
    return out


def aprime_coefficient(t):
    """Exact rational coefficient 1 / prod_i (t_i! (|t_i| + 1)) over the
    root's subtrees; 1 for the single vertex (empty product)."""
    out = Fraction(1)
    for c in t.children:
        out /= Fraction(tree_factorial(c) * (c.order + 1))
    return out


class PolyVectorField:
    """Vector field on R^m with exact polynomial components.

    ``components`` maps output indices to polynomial tables
    {exponent tuple: coefficient}; missing indices are zero.
    """

    def __init__(self, dim, components):
        self.dim = dim
        self.components = tuple(dict(components.get(i, {}))
                                for i in range(dim))

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([_poly.evaluate(t, x) for t in self.components],
                        axis=-1)

    def derivative_tensor(self, order, x):
        """Mixed partials d_{i_1} ... d_{i_order} X^u at x, with shape
        batch + (m,)*order + (m,), by exact formal differentiation."""
        x = np.asarray(x, dtype=float)
        m = self.dim
        out = np.zeros(x.shape[:-1] + (m,) * order + (m,))
        for idx in np.ndindex(*(m,) * order):
            multi = [0] * m
            for k in idx:
                multi[k] += 1
            for u in range(m):
                table = _poly.derive_multi(self.components[u], tuple(multi))
                if table:
                    out[(..., *idx, u)] = _poly.evaluate(table, x)
        return out


def spray_vector_field(P):
    """The parameter field pi^{ij}(x) p_j d/dx^i as a polynomial vector
    field on the 2d phase space (x, p); its p-components vanish."""
    d = P.dim
    comps = {}
    for i in range(d):
        table = {}
        for j in range(d):
            for alpha, c in P.component_table(i, j).items():
                ext = tuple(alpha) + tuple(1 if k == j else 0 for k in range(d))
                table[ext] = table.get(ext, 0.0) + c
        comps[i] = _poly.clean(table)
    return PolyVectorField(2 * d, comps)


def _contract_first(tensor, vec, batch_ndim):
    """Contract ``vec`` (batch + (m,)) against the first non-batch axis
    of ``tensor`` (batch + (m,)*r + trailing axes)."""
    mv = np.moveaxis(tensor, batch_ndim, -1)
    expand = mv.ndim - vec.ndim
    v = vec.reshape(vec.shape[:-1] + (1,) * expand + (vec.shape[-1],))
    return np.sum(mv * v, axis=-1)


def elementary_differential(X, t, x, _memo=None):
    """D_t X at x: children differentials contracted into the matching
    mixed partial of X.  Returns shape batch + (m,)."""
    if _memo is None:
        _memo = {}
    if t in _memo:
        return _memo[t]
    x = np.asarray(x, dtype=float)
    val = X.derivative_tensor(len(t.children), x)
    for c in t.children:
        child = elementary_differential(X, c, x, _memo)
        val = _contract_first(val, child, x.ndim - 1)
    _memo[t] = val
    return val


def f_symbol(H, X, t, x):
    """F^{H,X}_t at x: like the elementary differential but with the
    root factor built from the partials of the polynomial scalar H
    (a table over the same variables as X).  Returns shape batch."""
    x = np.asarray(x, dtype=float)
    m = X.dim
    k = len(t.children)
    out = np.zeros(x.shape[:-1] + (m,) * k)
    for idx in np.ndindex(*(m,) * k):
        multi = [0] * m
        for kk in idx:
            multi[kk] += 1
        table = _poly.derive_multi(dict(H), tuple(multi))
        if table:
            out[(..., *idx)] = _poly.evaluate(table, x)
    memo = {}
    for c in t.children:
        child = elementary_differential(X, c, x, memo)
        out = _contract_first(out, child, x.ndim - 1)
    return out


def iterated_lie_check(X, n, x, i):
    """(lhs, rhs) of the iterated-Lie-derivative identity: lhs applies
    L_X to the i-th coordinate n times by exact polynomial arithmetic;
    rhs sums |t|!/(t! sigma(t)) D^i_t X over all trees of order n."""
    if n > 5:
        raise ValueError("n must be at most 5")
    m = X.dim
    f = {tuple(1 if k == i else 0 for k in range(m)): 1.0}
    for _ in range(n):
        new = {}
        for k in range(m):
            dk = _poly.derive(f, k)
            if dk:
                new = _poly.add(new, _poly.multiply(X.components[k], dk))
        f = new
    lhs = _poly.evaluate(f, x)
    rhs = np.zeros_like(lhs)
    fact_n = 1
    for k in range(2, n + 1):
        fact_n *= k
    memo = {}
    for t in enumerate_trees(n):
        coeff = Fraction(fact_n, tree_factorial(t) * sigma(t))
        rhs = rhs + float(coeff) * elementary_differential(X, t, x, memo)[..., i]
    return lhs, rhs


def butcher_eval(a, X, x, eps, N):
    """Butcher series x + sum_{|t| <= N} eps^{|t|} a_t D_t X / sigma(t).

    ``a`` maps RootedTree -> float and must cover every tree of order
    <= N; a missing tree raises with its bracket serialization.
    """
    if N > MAX_ORDER:
        raise ValueError(f"N must be at most {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    out = np.array(x, copy=True)
    memo = {}
    for n in range(1, N + 1):
        for t in enumerate_trees(n):
            if t not in a:
                raise KeyError(
                    f"missing Butcher coefficient for tree {t.serialize()}")
            if a[t] == 0.0:
                continue
            out = out + (eps ** n) * (a[t] / sigma(t)) * \
                elementary_differential(X, t, x, memo)
    return out
