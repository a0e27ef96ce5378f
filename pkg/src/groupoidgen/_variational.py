"""Batched spray-flow engine.

Everything here integrates the parameter ODE ``dx/du = pi(x) p`` (p held
fixed) with classical RK4, vectorized over an arbitrary leading batch
shape.  Besides the flow itself, the engine carries

* the running average ``A(y, p) = int_0^1 x(u) du`` whose inversion in y
  defines the realization map,
* the variational systems ``M = dx/dy`` and ``N = dx/dp`` and their
  running averages, i.e. the exact Jacobians ``D_y A`` and ``D_p A``.

Those Jacobians let implicit derivatives of the realization maps be
evaluated without differencing through Newton solves, which is what
keeps the generating-function pipeline fast enough for the acceptance
tolerances.
"""

import numpy as np

from .errors import DomainExitError


class SprayOps:
    """Vectorized Poisson-tensor evaluations for one structure.

    ``scale`` multiplies the whole coefficient table (used to realize
    t*pi families without rebuilding structures); it may be a scalar or
    an array broadcastable against the batch shape.
    """

    def __init__(self, P, scale=None):
        self.exps, self.coeff, self.dexps, self.dfact = P._compiled()
        self.dim = P.dim
        if scale is None:
            self.scale = None
        else:
            self.scale = np.asarray(scale, dtype=float)

    def pi(self, x):
        mono = np.prod(x[..., None, :] ** self.exps, axis=-1)
        out = np.einsum("...m,ijm->...ij", mono, self.coeff)
        if self.scale is not None:
            out = out * self.scale[..., None, None]
        return out

    def v(self, x, p):
        return np.einsum("...ij,...j->...i", self.pi(x), p)

    def dv(self, x, p):
        """DV[..., i, k] = d_{x^k} (pi^{ij}(x) p_j)."""
        mono = np.prod(x[..., None, None, :] ** self.dexps, axis=-1) * self.dfact
        dpi = np.einsum("...km,ijm->...kij", mono, self.coeff)
        out = np.einsum("...kij,...j->...ik", dpi, p)
        if self.scale is not None:
            out = out * self.scale[..., None, None]
        return out


def _box_exit_time(x, box, time):
    if box is not None and np.any(np.abs(x) > box):
        return time
    return None


def spray_flow(ops, y, p, u=1.0, steps=64, box=None):
    """phi^u_{pi,p}(y) for batched y, p of shape (..., d).

    ``u`` may be a scalar or batched; batched times are realized through
    the exact reparameterization phi^u_{pi,p} = phi^1_{pi,u*p}.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim > 0:
        p = u[..., None] * p
        u = 1.0
    x = np.array(y, dtype=float, copy=True)
    h = u / steps
    for n in range(steps):
        k1 = ops.v(x, p)
        k2 = ops.v(x + 0.5 * h * k1, p)
        k3 = ops.v(x + 0.5 * h * k2, p)
        k4 = ops.v(x + h * k3, p)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_exit = _box_exit_time(x, box, (n + 1) * h)
        if t_exit is not None:
            raise DomainExitError(
                f"spray trajectory left the domain box at u={t_exit:.6g}",
                exit_time=t_exit,
            )
    return x


def spray_averages(ops, y, p, steps=64, need_M=False, need_N=False,
                   need_avg=True, need_final=False, box=None):
    """Integrate the spray plus variational systems over u in [0, 1].

    Returns a dict with the requested entries:

    ``avg``   A(y, p) = int x du, shape (..., d)
    ``M``     D_y A, shape (..., d, d)
    ``N``     D_p A, shape (..., d, d)
    ``final`` x(1), shape (..., d)
    """
    x = np.array(y, dtype=float, copy=True)
    d = ops.dim
    bshape = x.shape[:-1]
    eye = np.broadcast_to(np.eye(d), bshape + (d, d))
    M = np.array(eye) if (need_M or need_N) else None
    N = np.zeros(bshape + (d, d)) if need_N else None
    ax = np.zeros_like(x) if need_avg else None
    aM = np.zeros(bshape + (d, d)) if need_M else None
    aN = np.zeros(bshape + (d, d)) if need_N else None

    def rhs(state):
        x_, M_, N_ = state
        pi = ops.pi(x_)
        dx = np.einsum("...ij,...j->...i", pi, p)
        dM = dN = None
        if M_ is not None:
            dv = ops.dv(x_, p)
            dM = np.einsum("...ik,...kl->...il", dv, M_)
            if N_ is not None:
                dN = np.einsum("...ik,...kl->...il", dv, N_) + pi
        return dx, dM, dN

    h = 1.0 / steps
    for n in range(steps):
        s0 = (x, M, N)
        k1 = rhs(s0)
        s2 = _shift(s0, k1, 0.5 * h)
        k2 = rhs(s2)
        s3 = _shift(s0, k2, 0.5 * h)
        k3 = rhs(s3)
        s4 = _shift(s0, k3, h)
        k4 = rhs(s4)
        # the averages are augmented state with derivative (x, M, N); their
        # RK4 increment reads the stage states of the base system
        if need_avg:
            ax = ax + (h / 6.0) * (s0[0] + 2.0 * s2[0] + 2.0 * s3[0] + s4[0])
        if need_M:
            aM = aM + (h / 6.0) * (s0[1] + 2.0 * s2[1] + 2.0 * s3[1] + s4[1])
        if need_N:
            aN = aN + (h / 6.0) * (s0[2] + 2.0 * s2[2] + 2.0 * s3[2] + s4[2])
        x = x + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        if M is not None:
            M = M + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if N is not None:
            N = N + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        t_exit = _box_exit_time(x, box, (n + 1) * h)
        if t_exit is not None:
            raise DomainExitError(
                f"spray trajectory left the domain box at u={t_exit:.6g}",
                exit_time=t_exit,
            )
    out = {}
    if need_avg:
        out["avg"] = ax
    if need_M:
        out["M"] = aM
    if need_N:
        out["N"] = aN
    if need_final:
        out["final"] = x
    return out


def _shift(state, k, c):
    return tuple(s if d is None else s + c * d for s, d in zip(state, k))
