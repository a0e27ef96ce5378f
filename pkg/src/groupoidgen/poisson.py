"""Coordinate Poisson structures with exact polynomial coefficients.

A structure holds the coefficient table of ``pi^{ij}(x) = sum_a c^{ij}_a
x^a`` on an open box of R^d.  All differentiation is exact term-by-term
arithmetic on the table, so the elementary differentials and graph
symbols built on top of it never see finite-difference noise.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import _poly

MAX_DEGREE = 4
PROBE_POINTS = 32
PROBE_SEED = 7


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of a monomial in d variables."""

    exponents: tuple

    def __post_init__(self):
        if any(e < 0 for e in self.exponents):
            raise ValueError("multi-index exponents must be non-negative")

    @property
    def degree(self):
        return sum(self.exponents)


@dataclass(frozen=True)
class PoissonStructure:
    """Polynomial Poisson bivector on a coordinate space.

    Parameters
    ----------
    dim : int
        Dimension d of the base space.
    entries : tuple
        Normalized coefficient table: tuples ``(i, j, alpha, c)`` with
        ``i < j`` holding ``c^{ij}_alpha``; the ``(j, i)`` coefficients
        are implied by antisymmetry.
    kind : str
        One of ``constant``, ``linear``, ``polynomial``.
    label : str
        Free-form display name.
    """

    dim: int
    entries: tuple
    kind: str = "polynomial"
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind not in ("constant", "linear", "polynomial"):
            raise ValueError(f"unknown kind {self.kind!r}")
        for i, j, alpha, _ in self.entries:
            if i == j:
                raise ValueError("diagonal entries i == j are not allowed")
            if not (0 <= i < self.dim and 0 <= j < self.dim):
                raise ValueError("component index out of range")
            if len(alpha) != self.dim:
                raise ValueError("multi-index length must equal dim")
            if sum(alpha) > MAX_DEGREE:
                raise ValueError(
                    f"monomial degree {sum(alpha)} exceeds the supported "
                    f"maximum {MAX_DEGREE}"
                )

    # -- coefficient access -------------------------------------------------

    @property
    def coeffs(self):
        """Full antisymmetric table {(i, j, alpha): c} including j > i."""
        out = {}
        for i, j, alpha, c in self.entries:
            out[(i, j, alpha)] = out.get((i, j, alpha), 0.0) + c
            out[(j, i, alpha)] = out.get((j, i, alpha), 0.0) - c
        return out

    def component_table(self, i, j):
        """Polynomial table of pi^{ij}."""
        table = {}
        for a, b, alpha, c in self.entries:
            if (a, b) == (i, j):
                table[alpha] = table.get(alpha, 0.0) + c
            elif (b, a) == (i, j):
                table[alpha] = table.get(alpha, 0.0) - c
        return _poly.clean(table)

    @property
    def max_degree(self):
        return max((sum(alpha) for _, _, alpha, _ in self.entries), default=0)

    def scaled(self, t):
        """The structure t*pi (coefficient table scaled, kind preserved)."""
        entries = tuple((i, j, alpha, t * c) for i, j, alpha, c in self.entries)
        return PoissonStructure(self.dim, entries, self.kind,
                                label=f"{t}*{self.label}" if self.label else "")

    # -- compiled tensors ---------------------------------------------------

    def _compiled(self):
        """Dense (exponents, coeff tensor, derivative tensors) cache."""
        if "tensors" not in self._cache:
            d = self.dim
            alphas = sorted({alpha for _, _, alpha, _ in self.entries})
            if not alphas:
                alphas = [(0,) * d]
            index = {a: m for m, a in enumerate(alphas)}
            exps = np.array(alphas, dtype=np.int64)          # (M, d)
            coeff = np.zeros((d, d, len(alphas)))
            for i, j, alpha, c in self.entries:
                coeff[i, j, index[alpha]] += c
                coeff[j, i, index[alpha]] -= c
            # exact term-by-term derivative: d_k pi^{ij}
            dexps = []
            dfact = []
            for k in range(d):
                ek = exps.copy()
                fact = exps[:, k].astype(float)
                ek[:, k] = np.maximum(ek[:, k] - 1, 0)
                dexps.append(ek)
                dfact.append(fact)
            self._cache["tensors"] = (exps, coeff,
                                      np.array(dexps), np.array(dfact))
        return self._cache["tensors"]


# -- constructors -----------------------------------------------------------


def _entries_from_matrix_tables(dim, tables, kind, label):
    entries = []
    for i in range(dim):
        for j in range(i + 1, dim):
            for alpha, c in sorted(tables.get((i, j), {}).items()):
                if c != 0.0:
                    entries.append((i, j, tuple(alpha), float(c)))
    return PoissonStructure(dim, tuple(entries), kind, label)


def make_constant(matrix, label=""):
    """Constant Poisson structure from an antisymmetric d x d matrix.

    Raises
    ------
    ValueError
        If the matrix fails antisymmetry beyond 1e-12.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(matrix + matrix.T)) > 1e-12:
        raise ValueError("matrix is not antisymmetric within 1e-12")
    d = matrix.shape[0]
    zero = (0,) * d
    tables = {(i, j): {zero: matrix[i, j]} for i in range(d) for j in range(i + 1, d)}
    return _entries_from_matrix_tables(d, tables, "constant", label)


def make_linear(structure_constants, sign=1, label=""):
    """Linear Poisson structure pi^{ij}(x) = sign * c^k_{ij} x_k.

    ``structure_constants[i][j][k]`` holds c^k_{ij} of a Lie bracket
    [e_i, e_j] = c^k_{ij} e_k.  With ``sign=+1`` the result is minus the
    standard dual-space structure, the convention under which the
    generating function is the BCH series.

    Raises
    ------
    ValueError
        If c is not antisymmetric in (i, j) or the Lie Jacobi identity
        fails beyond 1e-10.
    """
    c = np.asarray(structure_constants, dtype=float)
    if c.ndim != 3 or len(set(c.shape)) != 1:
        raise ValueError("structure constants must be a d x d x d array")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    d = c.shape[0]
    if np.max(np.abs(c + np.swapaxes(c, 0, 1))) > 1e-12:
        raise ValueError("structure constants must be antisymmetric in (i, j)")
    # Jacobi for the bracket: sum_m c^m_{ij} c^n_{mk} + cyclic = 0
    jac = (np.einsum("ijm,mkn->ijkn", c, c)
           + np.einsum("jkm,min->ijkn", c, c)
           + np.einsum("kim,mjn->ijkn", c, c))
    if np.max(np.abs(jac)) > 1e-10:
        raise ValueError("structure constants violate the Jacobi identity")
    tables = {}
    for i in range(d):
        for j in range(i + 1, d):
            table = {}
            for k in range(d):
                if c[i, j, k] != 0.0:
                    alpha = tuple(1 if m == k else 0 for m in range(d))
                    table[alpha] = sign * c[i, j, k]
            tables[(i, j)] = table
    out = _entries_from_matrix_tables(d, tables, "linear", label)
    out._cache["structure_constants"] = c
    out._cache["sign"] = sign
    return out


def make_polynomial(dim, component_tables, label=""):
    """General polynomial structure from tables {(i, j): {alpha: c}} with
    i < j; antisymmetry is filled in automatically.  The Jacobi identity
    is verified on the probe grid."""
    out = _entries_from_matrix_tables(dim, component_tables, "polynomial", label)
    x = probe_grid(dim)
    res = jacobi_residual(out, x)
    scale_ = 1.0 + max((abs(c) for *_, c in out.entries), default=0.0)
    if np.max(res) > 1e-10 * scale_:
        raise ValueError(
            f"component tables violate the Jacobi identity "
            f"(max residual {np.max(res):.3e})"
        )
    return out


# -- evaluation -------------------------------------------------------------


def eval_pi(P, x):
    """Evaluate pi at ``x`` of shape (..., d); returns (..., d, d)."""
    x = np.asarray(x, dtype=float)
    exps, coeff, _, _ = P._compiled()
    mono = np.prod(x[..., None, :] ** exps, axis=-1)
    return np.einsum("...m,ijm->...ij", mono, coeff)


def eval_dpi(P, x):
    """Exact derivative d_k pi^{ij} at ``x``; returns (..., d, d, d) indexed
    as [k, i, j]."""
    x = np.asarray(x, dtype=float)
    exps, coeff, dexps, dfact = P._compiled()
    # dexps: (d, M, d) exponents of d_k monomials, dfact: (d, M) factors
    mono = np.prod(x[..., None, None, :] ** dexps, axis=-1) * dfact  # (..., d, M)
    return np.einsum("...km,ijm->...kij", mono, coeff)


def eval_pi_partial(P, x, multi):
    """Exact iterated partial derivative of pi for a multi-index."""
    x = np.asarray(x, dtype=float)
    d = P.dim
    out = np.zeros(x.shape[:-1] + (d, d))
    for i in range(d):
        for j in range(i + 1, d):
            table = _poly.derive_multi(P.component_table(i, j), multi)
            if table:
                v = _poly.evaluate(table, x)
                out[..., i, j] = v
                out[..., j, i] = -v
    return out


def jacobi_residual(P, x):
    """Max over (i, j, k) of |cyclic sum pi^{il} d_l pi^{jk}| at ``x``."""
    pi = eval_pi(P, x)
    dpi = eval_dpi(P, x)
    term = np.einsum("...il,...ljk->...ijk", pi, dpi)
    cyc = term + np.einsum("...ijk->...jki", term) + np.einsum("...ijk->...kij", term)
    return np.max(np.abs(cyc), axis=(-3, -2, -1))


def probe_grid(dim, n=PROBE_POINTS, seed=PROBE_SEED):
    """Fixed quasi-random diagnostic grid: n Halton points in [-1, 1]^dim."""
    sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    return 2.0 * sampler.random(n) - 1.0


# -- structure definition files --------------------------------------------


def save_structure(P, path):
    """Write the JSON structure-definition file."""
    doc = {
        "dim": P.dim,
        "kind": P.kind,
        "label": P.label,
        "entries": [
            {"i": i, "j": j, "alpha": list(alpha), "c": c}
            for i, j, alpha, c in P.entries
        ],
    }
    if "structure_constants" in P._cache:
        doc["structure_constants"] = P._cache["structure_constants"].tolist()
        doc["sign"] = P._cache["sign"]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_structure(path):
    """Read a JSON structure-definition file.

    Two schemas are accepted: an explicit ``entries`` list of
    ``{"i", "j", "alpha", "c"}`` records (antisymmetry may be stated
    either one-sided with i < j or two-sided, in which case consistency
    is checked), or a linear structure given by ``structure_constants``
    and ``sign``.
    """
    with open(path) as fh:
        doc = json.load(fh)
    label = doc.get("label", "")
    if "structure_constants" in doc:
        return make_linear(doc["structure_constants"], doc.get("sign", 1), label)
    dim = int(doc["dim"])
    kind = doc.get("kind", "polynomial")
    tables = {}
    for rec in doc.get("entries", []):
        i, j, c = int(rec["i"]), int(rec["j"]), float(rec["c"])
        alpha = tuple(int(e) for e in rec["alpha"])
        if i == j:
            raise ValueError("structure file contains a diagonal entry")
        key, val = ((i, j), c) if i < j else ((j, i), -c)
        table = tables.setdefault(key, {})
        if alpha in table and abs(table[alpha] - val) > 1e-12:
            raise ValueError(
                f"entries for ({i},{j}) alpha={alpha} violate antisymmetry"
            )
        table[alpha] = val
    if kind == "constant":
        d = dim
        mat = np.zeros((d, d))
        for (i, j), table in tables.items():
            mat[i, j] = table.get((0,) * d, 0.0)
            mat[j, i] = -mat[i, j]
        return make_constant(mat, label)
    out = _entries_from_matrix_tables(dim, tables, kind, label)
    if kind in ("polynomial", "linear"):
        x = probe_grid(dim)
        scale_ = 1.0 + max((abs(c) for *_, c in out.entries), default=0.0)
        if np.max(jacobi_residual(out, x)) > 1e-10 * scale_:
            raise ValueError("structure file violates the Jacobi identity")
    return out
