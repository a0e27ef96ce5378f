"""Realization maps of the canonical local groupoid.

The source map alpha solves the implicit flow-average equation

    int_0^1 phi^u_{pi,p}(alpha(x, p)) du = x

by damped Newton iteration; the target is beta(x, p) = alpha(x, -p) and
the inversion is (x, p) -> (x, -p).  All germ-level statements are
exercised inside a configurable covector radius.
"""

from dataclasses import dataclass

import numpy as np

from . import _variational
from .errors import OutsideLocalDomainError
from .flows import DOMAIN_BOX, OdeConfig, PhasePoint
from .poisson import eval_pi

GERM_RADIUS = 0.5


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 50
    tol: float = 1e-11
    jacobian_step: float = 1e-6
    damping: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _check_radius(p, germ_radius):
    norms = np.sqrt(np.sum(np.asarray(p, dtype=float) ** 2, axis=-1))
    if np.any(norms > germ_radius):
        raise OutsideLocalDomainError(
            f"covector norm {np.max(norms):.3g} exceeds the germ radius "
            f"{germ_radius}", residual=float(np.max(norms)))


def alpha(P, x, p, config=None, ode=None, germ_radius=GERM_RADIUS):
    """Karasev realization alpha(x, p), batched over leading axes.

    Newton iteration on y |-> int_0^1 phi^u_{pi,p}(y) du - x with initial
    guess y = x, forward-difference Jacobian refreshed every iteration,
    and step halving on residual increase.

    Raises
    ------
    OutsideLocalDomainError
        If |p| exceeds the germ radius or the iteration fails to reach
        ``config.tol``.
    """
    config = config or NewtonConfig()
    ode = ode or OdeConfig()
    _check_radius(p, germ_radius)
    ops = _variational.SprayOps(P)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    x, p = np.broadcast_arrays(x, p)
    d = P.dim

    def favg(y, pb):
        return _variational.spray_averages(ops, y, pb, steps=ode.steps,
                                           box=ode.box)["avg"]

    y = np.array(x, copy=True)
    res = favg(y, p) - x
    rnorm = np.max(np.abs(res), axis=-1)
    if np.all(rnorm < config.tol):
        return y  # zero-iteration exit keeps alpha(x, 0) = x exact

    h = config.jacobian_step
    for _ in range(config.max_iters):
        active = rnorm >= config.tol
        if not np.any(active):
            break
        # forward-difference Jacobian, all columns in one batched call
        shifts = np.stack([y] + [y + h * np.eye(d)[k] for k in range(d)])
        avg = favg(shifts, np.broadcast_to(p, shifts.shape))
        F = avg[0] - x
        J = np.stack([(avg[1 + k] - avg[0]) / h for k in range(d)], axis=-1)
        delta = np.linalg.solve(J, F[..., None])[..., 0]
        step = np.where(active[..., None], config.damping, 0.0)
        for _ in range(6):
            y_try = y - step * delta
            res_try = favg(y_try, p) - x
            rnorm_try = np.max(np.abs(res_try), axis=-1)
            worse = active & (rnorm_try > rnorm)
            if not np.any(worse):
                break
            step = np.where(worse[..., None], 0.5 * step, step)
        y = y_try
        rnorm = np.where(active, rnorm_try, rnorm)
    if np.any(rnorm >= config.tol):
        raise OutsideLocalDomainError(
            "realization Newton iteration did not converge "
            f"(max residual {float(np.max(rnorm)):.3e})",
            residual=float(np.max(rnorm)))
    return y


def beta(P, x, p, config=None, ode=None, germ_radius=GERM_RADIUS):
    """Target map beta(x, p) = alpha(x, -p)."""
    return alpha(P, x, np.negative(p), config=config, ode=ode,
                 germ_radius=germ_radius)


def inversion(P, x, p):
    """Groupoid inversion (x, p) -> (x, -p)."""
    return PhasePoint(np.asarray(x, dtype=float), -np.asarray(p, dtype=float))


def realization_poisson_residual(P, x, p, f, g, config=None, ode=None,
                                 germ_radius=GERM_RADIUS, fd_step=1e-3):
    """|{f o alpha, g o alpha}_c - pi(alpha)(f, g)| for linear f, g.

    The canonical bracket uses 4th-order central differences of alpha in
    all 2d phase-space coordinates (batched into one solver call).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    d = P.dim
    z = np.concatenate([x, p], axis=-1)
    scale = 1.0 + np.sqrt(np.sum(z * z, axis=-1))
    h = fd_step * scale

    # stencil: per coordinate k of (x, p), offsets (-2h, -h, +h, +2h)
    stencil = []
    for k in range(2 * d):
        e = np.zeros(2 * d)
        e[k] = 1.0
        for c in (-2.0, -1.0, 1.0, 2.0):
            stencil.append(z + c * h[..., None] * e)
    zs = np.stack(stencil)                          # (8d, ..., 2d)
    av = alpha(P, zs[..., :d], zs[..., d:], config=config, ode=ode,
               germ_radius=germ_radius * 1.5)
    av = av.reshape((2 * d, 4) + x.shape)
    dalpha = (av[:, 0] - 8.0 * av[:, 1] + 8.0 * av[:, 2] - av[:, 3]) / (
        12.0 * h[..., None])                        # (2d, ..., d)
    dF = np.einsum("k...i,...i->k...", dalpha, f)   # gradient of f.alpha
    dG = np.einsum("k...i,...i->k...", dalpha, g)
    bracket = np.sum(dF[:d] * dG[d:] - dF[d:] * dG[:d], axis=0)
    a = alpha(P, x, p, config=config, ode=ode, germ_radius=germ_radius)
    target = np.einsum("...i,...ij,...j->...", f, eval_pi(P, a), g)
    return np.abs(bracket - target)
