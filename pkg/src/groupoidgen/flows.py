"""Fixed-step integration of the spray ODE and of Hamiltonian flows on
T*M, with optional running scalar integrals carried as augmented state.

Conventions: the symplectic form is dp ^ dx, so Hamiltonian trajectories
satisfy dx/du = -dH/dp, dp/du = +dH/dx.  With these signs the flow of
H(x, p) = p0 . x starting on the zero section has p(u) = u p0.
"""

from dataclasses import dataclass

import numpy as np

from . import _variational
from .errors import DomainExitError, IntegrationToleranceError

DOMAIN_BOX = 10.0


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, p) of T*M = M x M*."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase point entries must be finite")

    @property
    def dim(self):
        return self.x.shape[-1]


@dataclass(frozen=True)
class OdeConfig:
    steps: int = 64
    method: str = "rk4"           # "rk4" | "rk4_richardson"
    tol: float = 1e-10            # Richardson error-estimate threshold
    box: float = DOMAIN_BOX

    def __post_init__(self):
        if self.steps < 8:
            raise ValueError("steps must be at least 8")
        if self.method not in ("rk4", "rk4_richardson"):
            raise ValueError(f"unknown method {self.method!r}")


def spray_flow(P, p, x0, u, config=None, return_estimate=False):
    """Solution at time u of dx^i/du = pi^{ij}(x) p_j from x0.

    ``p`` and ``x0`` broadcast over a leading batch shape.  With method
    ``rk4_richardson`` the step-halving error estimate is checked
    against ``config.tol`` (and returned when ``return_estimate``).
    """
    config = config or OdeConfig()
    ops = _variational.SprayOps(P)
    p = np.asarray(p, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    x = _variational.spray_flow(ops, x0, p, u, config.steps, box=config.box)
    if config.method == "rk4_richardson" or return_estimate:
        coarse = _variational.spray_flow(ops, x0, p, u, config.steps // 2,
                                         box=config.box)
        estimate = float(np.max(np.abs(x - coarse))) / 15.0
        if config.method == "rk4_richardson" and estimate > config.tol:
            raise IntegrationToleranceError(
                f"Richardson estimate {estimate:.3e} exceeds tol {config.tol:.3e}",
                estimate=estimate,
            )
        if return_estimate:
            return x, estimate
    return x


def spray_flow_average(P, p, y, config=None):
    """int_0^1 phi^u_{pi,p}(y) du, the map whose inversion in y defines
    the realization.  The average rides along as augmented state."""
    config = config or OdeConfig()
    ops = _variational.SprayOps(P)
    out = _variational.spray_averages(
        ops, np.asarray(y, dtype=float), np.asarray(p, dtype=float),
        steps=config.steps, box=config.box)
    return out["avg"]


def _fd_gradient(H, x, p, order=4):
    """Central finite-difference gradient of a scalar field on T*M.

    Step 1e-4 * (1 + |z|) per coordinate; 4th order.  Broadcasts over
    batched (x, p).
    """
    z = np.concatenate([x, p], axis=-1)
    scale = 1.0 + np.sqrt(np.sum(z * z, axis=-1, keepdims=True))
    h = 1e-4 * scale
    d = x.shape[-1]
    grad = np.empty_like(z)
    for k in range(2 * d):
        e = np.zeros(2 * d)
        e[k] = 1.0
        hk = h * e
        zp, zm = z + hk, z - hk
        zpp, zmm = z + 2 * hk, z - 2 * hk
        vals = [H(w[..., :d], w[..., d:]) for w in (zmm, zm, zp, zpp)]
        grad[..., k] = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (
            12.0 * h[..., 0])
    return grad[..., :d], grad[..., d:]


def _ham_rhs(H, grad, x, p):
    dHdx, dHdp = grad(x, p) if grad is not None else _fd_gradient(H, x, p)
    return -dHdp, dHdx


def _ham_integrate(H, z0, u, config, grad=None, F=None):
    x = np.array(z0.x, dtype=float, copy=True)
    p = np.array(z0.p, dtype=float, copy=True)
    acc = 0.0
    h = u / config.steps
    for n in range(config.steps):
        kx1, kp1 = _ham_rhs(H, grad, x, p)
        kx2, kp2 = _ham_rhs(H, grad, x + 0.5 * h * kx1, p + 0.5 * h * kp1)
        kx3, kp3 = _ham_rhs(H, grad, x + 0.5 * h * kx2, p + 0.5 * h * kp2)
        kx4, kp4 = _ham_rhs(H, grad, x + h * kx3, p + h * kp3)
        if F is not None:
            acc = acc + (h / 6.0) * (
                F(x, p)
                + 2.0 * F(x + 0.5 * h * kx1, p + 0.5 * h * kp1)
                + 2.0 * F(x + 0.5 * h * kx2, p + 0.5 * h * kp2)
                + F(x + h * kx3, p + h * kp3))
        x = x + (h / 6.0) * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
        p = p + (h / 6.0) * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
        if np.any(np.abs(x) > config.box) or np.any(np.abs(p) > config.box):
            raise DomainExitError(
                f"hamiltonian trajectory left the domain box at u={(n + 1) * h:.6g}",
                exit_time=(n + 1) * h)
    return PhasePoint(x, p), acc


def ham_flow(H, z0, u, config=None, grad=None):
    """Hamiltonian flow of H on (T*M, dp^dx) from z0 for time u.

    ``H(x, p)`` is a scalar field; ``grad``, when given, must return
    ``(dH/dx, dH/dp)``.  Without it, gradients come from 4th-order
    central differences with step 1e-4 (1 + |z|), which keeps implicit
    (Newton-defined) pullbacks usable as Hamiltonians.
    """
    config = config or OdeConfig()
    z, _ = _ham_integrate(H, z0, u, config, grad=grad)
    return z


def ham_flow_with_integral(H, F, z0, u, config=None, grad=None):
    """As ham_flow, additionally returning int_0^u F(z(s)) ds carried as
    augmented quadrature state (same RK4 tableau)."""
    config = config or OdeConfig()
    return _ham_integrate(H, z0, u, config, grad=grad, F=F)
