"""Groupoid triangles and the sigma-model action that reproduces the
generating function.

A triangle generated by (p1, p2, x) is the simplex map built from
right-invariant flows off the unit fiber over a base identity point y.
Points of the unit alpha-fiber are exactly (A(y, p), p) with A the
spray-flow average, so the map is

    ghat(t, s) = (A(y, w), w),   w = (1 - t) ptilde(s / (1 - t)),

and the scalar field X = (target) o ghat is a plain spray flow,
X(t, s) = phi^{1-t}_{pi, ptilde(sigma)}(y), because target values evolve
by the spray equation along each edge-generating Hamiltonian flow.

The modified action

    A' = int [eta ^ dX + (1/2) pi(X)(eta, eta)]
         + p1 . I1 + p2 . I2 - p3 . (I3 - x)

(I_k the unit-speed edge integrals of X) evaluates to the generating
function.  eta is recovered from pi(X) eta = dX by minimal-norm least
squares per tangent slot, which zeroes kernel components; on solution
fields those never enter the integrand, since both eta ^ dX and
pi(eta, eta) pair kernel vectors against the image of pi.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from . import genfun as _genfun
from . import realization
from ._variational import SprayOps, spray_averages, spray_flow
from .errors import NotASolutionError, OutsideLocalDomainError
from .flows import PhasePoint
from .genfun import GenfunConfig, GenfunPoint
from .poisson import eval_pi


@dataclass(frozen=True)
class TriangleConfig:
    n_samples: int = 16          # Chebyshev-Lobatto samples of ptilde
    steps_edge: int = 32         # RK4 steps of the edge covector ODE
    steps_spray: int = 64        # RK4 steps of spray flows / averages
    steps_inner: int = 16        # steps of the variational averages
    newton_tol: float = 1e-11
    newton_max_iters: int = 40
    jacobian_step: float = 1e-6
    germ_radius: float = realization.GERM_RADIUS
    genfun: GenfunConfig = field(default_factory=GenfunConfig)


_DEFAULT = TriangleConfig()


class PTildeCurve:
    """Edge covector curve sampled at Chebyshev-Lobatto nodes of [0, 1]
    with barycentric interpolation (componentwise)."""

    def __init__(self, nodes, values):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._interp = BarycentricInterpolator(self.nodes, self.values)

    def __call__(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return self._interp(s)


@dataclass(frozen=True)
class Triangle:
    """Triangle data: generator, base identity point y, sampled edge
    curve ptilde and the third covector p3 = d_x S."""

    generator: GenfunPoint
    y: np.ndarray
    p_tilde: PTildeCurve
    p3: np.ndarray
    config: TriangleConfig

    @property
    def p1(self):
        return self.generator.p1

    @property
    def p2(self):
        return self.generator.p2

    @property
    def x(self):
        return self.generator.x


def _edge_ode(ops, y, p1, p2, sample_times, cfg):
    """Covector curve of the upper edge: the fiber components of
    phi_s^{p1 beta} phi_1^{p2 beta}(y, 0).

    Along the p1(beta)-flow the alpha-value stays y, the beta-value b
    obeys the spray equation with parameter p1, and the fiber component
    obeys dp/ds = d_x(p1 beta) = DyA(b, -p)^{-T} p1 by implicit
    differentiation of the flow-average relation.  Returns p at the
    requested (sorted, positive) times.
    """
    b = spray_flow(ops, y, np.broadcast_to(p2, y.shape), 1.0,
                   steps=cfg.steps_spray)
    p = np.broadcast_to(p2, y.shape).copy()

    def rhs(b_, p_):
        M = spray_averages(ops, b_, -p_, steps=cfg.steps_inner,
                           need_M=True, need_avg=False)["M"]
        dp = _genfun._solve_T(M, np.broadcast_to(p1, p_.shape))
        db = ops.v(b_, np.broadcast_to(p1, b_.shape))
        return db, dp

    out = []
    t_prev = 0.0
    for t_next in sample_times:
        span = t_next - t_prev
        if span > 1e-14:
            m = max(1, int(np.ceil(cfg.steps_edge * span)))
            h = span / m
            for _ in range(m):
                k1 = rhs(b, p)
                k2 = rhs(b + 0.5 * h * k1[0], p + 0.5 * h * k1[1])
                k3 = rhs(b + 0.5 * h * k2[0], p + 0.5 * h * k2[1])
                k4 = rhs(b + h * k3[0], p + h * k3[1])
                b = b + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                p = p + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append(p.copy())
        t_prev = t_next
    return out


def _lobatto_nodes(n):
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(np.pi * k / (n - 1)))


def build_triangle(P, p1, p2, x, config=None, p3=None):
    """Construct the triangle generated by (p1, p2, x).

    The base point y solves q phi_1^{p1 beta} phi_1^{p2 beta}(y, 0) = x
    (damped-free Newton, initial guess y = x).  The edge curve ptilde(s)
    is pinned by phi_1^{ptilde(s) beta}(y, 0) = phi_s^{p1 beta}
    phi_1^{p2 beta}(y, 0); since unit-fiber points are (A(y, p), p), the
    implicit solve reduces exactly to reading off the fiber component of
    the right-hand side.  p3 defaults to the d_x S slot of the
    generating function.
    """
    cfg = config or _DEFAULT
    _genfun._check_germ(cfg, p1, p2)
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    x = np.asarray(x, dtype=float)
    d = P.dim
    ops = SprayOps(P)

    def endpoint(ys):
        p_end = _edge_ode(ops, ys, p1, p2, [1.0], cfg)[0]
        return spray_averages(ops, ys, p_end, steps=cfg.steps_spray)["avg"]

    y = np.array(x, copy=True)
    eye = np.eye(d)
    hj = cfg.jacobian_step
    rnorm = np.inf
    for _ in range(cfg.newton_max_iters):
        stack = np.stack([y] + [y + hj * eye[k] for k in range(d)])
        ends = endpoint(stack)
        G = ends[0] - x
        rnorm = float(np.max(np.abs(G)))
        if rnorm < cfg.newton_tol:
            break
        J = np.stack([(ends[1 + k] - ends[0]) / hj for k in range(d)], axis=-1)
        y = y - np.linalg.solve(J, G)
    else:
        raise OutsideLocalDomainError(
            f"triangle base-point solve did not converge ({rnorm:.3e})",
            residual=rnorm)

    nodes = _lobatto_nodes(cfg.n_samples)
    samples = _edge_ode(ops, y, p1, p2, nodes[1:], cfg)
    values = np.stack([p2] + samples)
    curve = PTildeCurve(nodes, values)
    if p3 is None:
        _, _, p3 = _genfun.dS(P, GenfunPoint(p1, p2, x), config=cfg.genfun)
    return Triangle(generator=GenfunPoint(p1, p2, x), y=y,
                    p_tilde=curve, p3=np.asarray(p3, dtype=float), config=cfg)


def _sigma_param(t, s):
    """s/(1-t) on the closed simplex, with the collapsed corner pinned
    to its limit value."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    denom = np.where(1.0 - t > 1e-13, 1.0 - t, 1.0)
    return np.clip(s / denom, 0.0, 1.0)


def ghat(P, T, t, s):
    """The triangle map at (t, s): (A(y, w), w) with w = (1 - t) ptilde(
    s / (1 - t)); broadcasts over arrays of parameters."""
    cfg = T.config
    ops = SprayOps(P)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    w = (1.0 - t)[..., None] * T.p_tilde(_sigma_param(t, s))
    y = np.broadcast_to(T.y, w.shape)
    q = spray_averages(ops, y, w, steps=cfg.steps_spray)["avg"]
    return q, w


def triangle_X(P, T, t, s):
    """Scalar field X = (target map) o ghat: one spray flow per node."""
    cfg = T.config
    ops = SprayOps(P)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    w = (1.0 - t)[..., None] * T.p_tilde(_sigma_param(t, s))
    y = np.broadcast_to(T.y, w.shape)
    return spray_flow(ops, y, w, 1.0, steps=cfg.steps_spray)


def _beta_pullback_curve(P, p0, z0, u_samples, cfg, steps_per_unit=32):
    """Hamiltonian flow of p0(beta) from z0 at the sample times,
    integrated independently of the triangle machinery: gradients by
    4th-order central differences through the Newton-defined realization
    (whole stencil in one batched solve per stage)."""
    d = P.dim
    x = np.array(z0[0], dtype=float, copy=True)
    p = np.array(z0[1], dtype=float, copy=True)
    newton = realization.NewtonConfig(tol=1e-12)

    def grad(x_, p_):
        z = np.concatenate([x_, p_])
        h = 1e-3 * (1.0 + np.linalg.norm(z))
        stencil = np.stack([z + c * h * np.eye(2 * d)[k]
                            for k in range(2 * d)
                            for c in _genfun.FD_OFFSETS])
        av = realization.alpha(P, stencil[:, :d], -stencil[:, d:],
                               config=newton,
                               germ_radius=cfg.germ_radius * 1.5)
        vals = (av @ p0).reshape(2 * d, 4)
        g = vals @ _genfun.FD_WEIGHTS / h
        return g[:d], g[d:]

    def f(x_, p_):
        gx, gp = grad(x_, p_)
        return -gp, gx

    out = []
    t_prev = 0.0
    for t_next in u_samples:
        span = t_next - t_prev
        if span > 1e-14:
            m = max(1, int(np.ceil(steps_per_unit * span)))
            h = span / m
            for _ in range(m):
                k1 = f(x, p)
                k2 = f(x + 0.5 * h * k1[0], p + 0.5 * h * k1[1])
                k3 = f(x + 0.5 * h * k2[0], p + 0.5 * h * k2[1])
                k4 = f(x + h * k3[0], p + h * k3[1])
                x = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                p = p + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append((x.copy(), p.copy()))
        t_prev = t_next
    return out


@dataclass(frozen=True)
class BoundaryReport:
    corner_r: float          # |r ghat(1, 0)|
    edge2: float             # ghat(1-u, 0) vs independent p2-flow
    edge1: float             # ghat(0, u) vs independent p1-flow
    edge3: float             # ghat(1-u, u) vs the p3-flow off the unit
    base_x: float            # |q ghat(0, 1) - x|

    @property
    def max_residual(self):
        return max(self.corner_r, self.edge2, self.edge1, self.edge3,
                   self.base_x)


def triangle_boundary_check(P, T, n_edge=16):
    """Residuals of the defining boundary conditions at n_edge samples.

    The two flow-generated edges are compared against independent
    finite-difference Hamiltonian integrations of the beta-pullback
    flows; the hypotenuse is compared against the unit-fiber p3-flow,
    which ties ptilde(1) to the d_x S covector.
    """
    cfg = T.config
    ops = SprayOps(P)
    u = np.linspace(0.0, 1.0, n_edge + 1)[1:]

    _, rg = ghat(P, T, np.array([1.0]), np.array([0.0]))
    corner_r = float(np.max(np.abs(rg)))

    # ghat(1-u, 0) vs the p2(beta)-flow from (y, 0), integrated generically
    q2, r2 = ghat(P, T, 1.0 - u, np.zeros_like(u))
    flow2 = _beta_pullback_curve(P, T.p2, (T.y, np.zeros_like(T.y)), u, cfg)
    edge2 = 0.0
    for (xf, pf), qq, rr in zip(flow2, q2, r2):
        edge2 = max(edge2, float(np.max(np.abs(qq - xf))),
                    float(np.max(np.abs(rr - pf))))

    # ghat(0, u) vs the p1(beta)-flow from ghat(0, 0)
    q0, r0 = ghat(P, T, np.array([0.0]), np.array([0.0]))
    flow1 = _beta_pullback_curve(P, T.p1, (q0[0], r0[0]), u, cfg)
    q1, r1 = ghat(P, T, np.zeros_like(u), u)
    edge1 = 0.0
    for (xf, pf), qq, rr in zip(flow1, q1, r1):
        edge1 = max(edge1, float(np.max(np.abs(qq - xf))),
                    float(np.max(np.abs(rr - pf))))

    # ghat(1-u, u) vs (A(y, u p3), u p3): ties the hypotenuse to d_x S
    q3, r3 = ghat(P, T, 1.0 - u, u)
    w3 = u[:, None] * T.p3
    ref_q3 = spray_averages(ops, np.broadcast_to(T.y, w3.shape), w3,
                            steps=cfg.steps_spray)["avg"]
    edge3 = float(max(np.max(np.abs(q3 - ref_q3)), np.max(np.abs(r3 - w3))))

    qx, _ = ghat(P, T, np.array([0.0]), np.array([1.0]))
    base_x = float(np.max(np.abs(qx[0] - T.x)))
    return BoundaryReport(corner_r=corner_r, edge2=edge2, edge1=edge1,
                          edge3=edge3, base_x=base_x)


@dataclass(frozen=True)
class PsmField:
    """Field data per grid cell of the simplex: grid holds the cell
    centroids (t, s), X the field there, dX and eta the two
    coordinate-slot components, lsq_residual the max pointwise defect of
    pi(X) eta = dX over cells and slots."""

    grid: np.ndarray        # (C, 2)
    X: np.ndarray           # (C, d)
    dX: np.ndarray          # (C, d, 2)
    eta: np.ndarray         # (C, d, 2)
    lsq_residual: float
    cell_area: float


def triangle_field(P, T, grid_n=32, residual_limit=1e-4):
    """Reconstruct (X, eta) on a triangular grid of the simplex.

    X comes from spray flows; per cell, dX holds the finite-difference
    slopes of the corner values, and each slot of eta solves
    pi(X)^T eta = dX by minimal-norm least squares with pi evaluated at
    that slot's edge midpoint (where the secant slope is second-order
    accurate), so the reported defect measures the cotangent-path
    property of the field rather than grid anisotropy.
    """
    if grid_n < 16:
        raise ValueError("grid_n must be at least 16")
    d = P.dim
    h = 1.0 / grid_n
    nodes = [(i, j) for i in range(grid_n + 1) for j in range(grid_n + 1 - i)]
    index = {n: k for k, n in enumerate(nodes)}
    tt = np.array([i * h for i, _ in nodes])
    ss = np.array([j * h for _, j in nodes])

    cells = []
    for i in range(grid_n):
        for j in range(grid_n - i):
            cells.append(((i, j), (i + 1, j), (i, j + 1), +1))
            if i + j <= grid_n - 2:
                cells.append(((i + 1, j), (i, j + 1), (i + 1, j + 1), -1))

    def corner_ts(c):
        return np.array([c[0] * h, c[1] * h])

    centroids = np.array([(corner_ts(a) + corner_ts(b) + corner_ts(c)) / 3.0
                          for a, b, c, _ in cells])
    mid_t = []
    mid_s = []
    for a, b, c, orient in cells:
        if orient > 0:
            mid_t.append((corner_ts(a) + corner_ts(b)) / 2.0)
            mid_s.append((corner_ts(a) + corner_ts(c)) / 2.0)
        else:
            mid_t.append((corner_ts(b) + corner_ts(c)) / 2.0)
            mid_s.append((corner_ts(a) + corner_ts(c)) / 2.0)
    mid_t = np.array(mid_t)
    mid_s = np.array(mid_s)

    Xn = triangle_X(P, T, tt, ss)
    Xc = triangle_X(P, T, centroids[:, 0], centroids[:, 1])
    Xmt = triangle_X(P, T, mid_t[:, 0], mid_t[:, 1])
    Xms = triangle_X(P, T, mid_s[:, 0], mid_s[:, 1])

    dX = np.empty((len(cells), d, 2))
    for k, (a, b, c, orient) in enumerate(cells):
        if orient > 0:   # lower cell (i,j), (i+1,j), (i,j+1)
            dX[k, :, 0] = (Xn[index[b]] - Xn[index[a]]) / h
            dX[k, :, 1] = (Xn[index[c]] - Xn[index[a]]) / h
        else:            # upper cell (i+1,j), (i,j+1), (i+1,j+1)
            dX[k, :, 0] = (Xn[index[c]] - Xn[index[b]]) / h
            dX[k, :, 1] = (Xn[index[c]] - Xn[index[a]]) / h

    Bt = np.swapaxes(eval_pi(P, Xmt), -1, -2)   # B[j, i] = pi^{ij}
    Bs = np.swapaxes(eval_pi(P, Xms), -1, -2)
    eta = np.empty_like(dX)
    eta[:, :, 0] = np.einsum("cij,cj->ci", np.linalg.pinv(Bt, rcond=1e-10),
                             dX[:, :, 0])
    eta[:, :, 1] = np.einsum("cij,cj->ci", np.linalg.pinv(Bs, rcond=1e-10),
                             dX[:, :, 1])
    defect = max(
        float(np.max(np.abs(np.einsum("cji,ci->cj", Bt, eta[:, :, 0])
                            - dX[:, :, 0]))),
        float(np.max(np.abs(np.einsum("cji,ci->cj", Bs, eta[:, :, 1])
                            - dX[:, :, 1]))))
    if defect > residual_limit:
        raise NotASolutionError(
            f"field defect {defect:.3e} exceeds {residual_limit:.1e}",
            residual=defect)
    return PsmField(grid=centroids, X=Xc, dX=dX, eta=eta,
                    lsq_residual=defect, cell_area=h * h / 2.0)


def _bulk_terms(P, field):
    pi_c = eval_pi(P, field.X)
    eta_t = field.eta[:, :, 0]
    eta_s = field.eta[:, :, 1]
    wedge = (np.einsum("cj,cj->c", eta_t, field.dX[:, :, 1])
             - np.einsum("cj,cj->c", eta_s, field.dX[:, :, 0]))
    quad = np.einsum("cj,cjk,ck->c", eta_t, pi_c, eta_s)
    return wedge, quad


def _edge_integrals(P, T, n_gauss=32):
    """Unit-speed edge integrals of X by Gauss-Legendre quadrature."""
    cfg = T.config
    ops = SprayOps(P)
    gl_nodes, gl_w = np.polynomial.legendre.leggauss(n_gauss)
    u = 0.5 * (gl_nodes + 1.0)
    w = 0.5 * gl_w
    X1 = triangle_X(P, T, np.zeros_like(u), u)           # ghat(0, u) edge
    ys = np.broadcast_to(T.y, (len(u),) + T.y.shape)
    X2 = spray_flow(ops, ys, u[:, None] * T.p2, 1.0, steps=cfg.steps_spray)
    X3 = spray_flow(ops, ys, u[:, None] * T.p3, 1.0, steps=cfg.steps_spray)
    I1 = np.einsum("u,ui->i", w, X1)
    I2 = np.einsum("u,ui->i", w, X2)
    I3 = np.einsum("u,ui->i", w, X3)
    return I1, I2, I3


def psm_action(P, T, grid_n=32):
    """The modified sigma-model action of the triangle field: composite
    midpoint quadrature of the 2-form on the coordinate frame per cell,
    plus the covector insertions against 32-point Gauss-Legendre edge
    integrals.  Assumes the triangle passed its boundary check."""
    fld = triangle_field(P, T, grid_n=grid_n)
    wedge, quad = _bulk_terms(P, fld)
    bulk = float(np.sum(wedge + quad) * fld.cell_area)
    I1, I2, I3 = _edge_integrals(P, T)
    boundary = float(T.p1 @ I1 + T.p2 @ I2 - T.p3 @ (I3 - T.x))
    return bulk + boundary


def bulk_two_ways(P, T, grid_n=32):
    """(direct bulk, -1/2 int pi(eta, eta)): equal on solution fields,
    since substituting dX = pi-sharp(eta) into eta ^ dX flips the sign
    of the quadratic term."""
    fld = triangle_field(P, T, grid_n=grid_n)
    wedge, quad = _bulk_terms(P, fld)
    direct = float(np.sum(wedge + quad) * fld.cell_area)
    half = float(np.sum(-quad) * fld.cell_area)
    return direct, half


def edge_elements(P, T):
    """Groupoid elements carried by the edges: g_k = (edge integral of X,
    p_k); composability and product reproduce the multiplication."""
    I1, I2, I3 = _edge_integrals(P, T)
    return (PhasePoint(I1, T.p1), PhasePoint(I2, T.p2), PhasePoint(I3, T.p3))


def field_to_csv(fld, path):
    """Emit the (t, s, X, eta) grid as CSV for external plotting."""
    d = fld.X.shape[1]
    header = (["t", "s"] + [f"X{i}" for i in range(d)]
              + [f"eta{i}_dt" for i in range(d)]
              + [f"eta{i}_ds" for i in range(d)])
    rows = np.hstack([fld.grid, fld.X, fld.eta[:, :, 0], fld.eta[:, :, 1]])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.15g}" for v in row) + "\n")
