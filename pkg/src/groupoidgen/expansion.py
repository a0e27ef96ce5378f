"""Taylor coefficients of the generating-function family t -> S along
t*pi, the numerical BCH evaluator, and the linear-structure comparison.

The Taylor extraction is a least-squares polynomial fit over a symmetric
window of structure scales (t*pi stays Poisson for t < 0), which is
robust against solver noise and yields truncation diagnostics for free.
"""

from dataclasses import dataclass

import numpy as np

from .genfun import GenfunConfig, _S_batch, _check_germ
from .poisson import make_linear

_DEFAULT = GenfunConfig()


@dataclass(frozen=True)
class TaylorFit:
    """Fitted coefficients S_0..S_N of t -> S_{t pi} at one (p1, p2, x).

    ``diagnostics`` holds the two trailing fitted coefficients (orders
    N+1, N+2) as a truncation indicator; ``reliable`` is False when the
    fit residual exceeds the configured threshold.
    """

    coefficients: np.ndarray
    residual: float
    t_radius: float
    nodes: int
    diagnostics: np.ndarray
    reliable: bool


def taylor_coeffs_S(P, p1, p2, x, N, t_radius=0.3, config=None,
                    residual_threshold=1e-8):
    """Taylor coefficients of t -> S_{t pi}(p1, p2, x) around t = 0.

    Evaluates S on the scaled structure at 2N+4 Chebyshev nodes in
    [-t_radius, t_radius] and fits a degree N+2 polynomial by least
    squares; the first N+1 coefficients are returned, the last two serve
    as truncation diagnostics.
    """
    if N > 4:
        raise ValueError("N must be at most 4")
    cfg = config or _DEFAULT
    _check_germ(cfg, p1, p2)
    n_nodes = 2 * N + 4
    k = np.arange(n_nodes)
    ts = t_radius * np.cos((2 * k + 1) * np.pi / (2 * n_nodes))
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    x = np.asarray(x, dtype=float)
    P1 = np.broadcast_to(p1, (n_nodes,) + p1.shape)
    P2 = np.broadcast_to(p2, (n_nodes,) + p2.shape)
    X = np.broadcast_to(x, (n_nodes,) + x.shape)
    vals = _S_batch(P, P1, P2, X, scale=ts, config=cfg)
    vander = np.vander(ts, N + 3, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, vals, rcond=None)
    residual = float(np.max(np.abs(vander @ coef - vals)))
    return TaylorFit(coefficients=coef[:N + 1], residual=residual,
                     t_radius=t_radius, nodes=n_nodes,
                     diagnostics=coef[N + 1:],
                     reliable=residual <= residual_threshold)


def bch_numeric(structure_constants, p1, p2, K=12, steps=64):
    """Baker-Campbell-Hausdorff product by its flow characterization:
    integrate theta^R_{k(t)}(dk/dt) = p1 from k(0) = p2 to t = 1, with
    theta^R_p = sum_{j<=K} ad_p^j / (j+1)! inverted per step.

    Raises
    ------
    numpy.linalg.LinAlgError
        If theta^R becomes singular (outside the convergence domain).
    """
    c = np.asarray(structure_constants, dtype=float)
    if K < 8:
        raise ValueError("K must be at least 8")
    p1 = np.asarray(p1, dtype=float)
    d = len(p1)

    def theta_R(k):
        ad = np.einsum("i,ijk->kj", k, c)     # matrix of ad_k
        out = np.eye(d)
        term = np.eye(d)
        fact = 1.0
        for j in range(1, K + 1):
            term = term @ ad
            fact *= j + 1
            out = out + term / fact
        return out

    def rhs(k):
        return np.linalg.solve(theta_R(k), p1)

    k = np.array(p2, dtype=float, copy=True)
    h = 1.0 / steps
    for _ in range(steps):
        k1 = rhs(k)
        k2 = rhs(k + 0.5 * h * k1)
        k3 = rhs(k + 0.5 * h * k2)
        k4 = rhs(k + h * k3)
        k = k + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return k


def compare_linear_case(structure_constants, p1, p2, x, t=1.0, config=None,
                        K=12):
    """(S_numeric, S_bch, diff) for the linear structure with sign +1:
    the generating function on t*pi against (1/t) BCH(t p1, t p2) . x."""
    cfg = config or _DEFAULT
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    x = np.asarray(x, dtype=float)
    P = make_linear(structure_constants, sign=1)
    S_num = float(_S_batch(P, p1, p2, x, scale=t, config=cfg))
    bch = bch_numeric(structure_constants, t * p1, t * p2, K=K)
    S_bch = float(bch @ x) / t
    return S_num, S_bch, abs(S_num - S_bch)
