"""Slow/fast ODE form of the 1D problem ``-(A(x, x/eps) u')' = f(x, u)``.

With the flux ``v = A u'`` the boundary value problem becomes an initial value
problem in ``x``. The fast phase ``x/eps`` is carried by a point ``Psi`` on the
unit circle rotating with angular speed ``2 pi / eps``:

    W' = G(W, Psi) = (v / A~(Psi; x), -f(x, u), 1),     W = (u, v, x)
    Psi' = F(Psi) / eps,                                 F(Psi) = 2 pi (-Psi_2, Psi_1)

``A~`` extends ``A(x, .)`` off the circle radially. All integrators here are
explicit; Seamless and FLAVORS only change how the fast clock is stepped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficient import ScaleSeparatedField

__all__ = [
    "TwoScaleSystem",
    "Trajectory",
    "ShootingResult",
    "IntegrationError",
    "reformulate",
    "integrate_euler",
    "integrate_seamless",
    "integrate_flavors",
    "shoot",
]

TWO_PI = 2.0 * math.pi


class IntegrationError(ArithmeticError):
    """Raised when a state becomes non-finite."""


@dataclass
class TwoScaleSystem:
    """Right-hand sides ``G`` and ``F`` of the slow/fast system."""

    A: ScaleSeparatedField
    f: Callable[[float, float], float]
    eps: float

    def __post_init__(self):
        if self.A.dim != 1:
            raise ValueError("the ODE reformulation is one-dimensional")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        func = self.A.func
        self._coef = lambda x, lam: float(np.asarray(func(np.array([[x]]), np.array([[lam]]))).reshape(-1)[0])

    def extended_coefficient(self, y: float, z: float, x: float) -> float:
        """``A(x, angle/2pi) * 2 r^2 / (1 + r^2)``; equals ``A`` on the unit circle."""
        r2 = y * y + z * z
        lam = (math.atan2(z, y) / TWO_PI) % 1.0
        return self._coef(x, lam) * 2.0 * r2 / (1.0 + r2)

    def G(self, W, Psi) -> np.ndarray:
        u, v, x = W
        a = self.extended_coefficient(Psi[0], Psi[1], x)
        return np.array([v / a, -self.f(x, u), 1.0])

    @staticmethod
    def F(Psi) -> np.ndarray:
        return TWO_PI * np.array([-Psi[1], Psi[0]])

    def with_eps(self, eps: float) -> "TwoScaleSystem":
        return TwoScaleSystem(self.A, self.f, eps)


def reformulate(A: ScaleSeparatedField, f: Callable[[float, float], float] | None,
                eps: float) -> TwoScaleSystem:
    """Build the slow/fast system; ``f=None`` means ``f = 0``."""
    if f is None:
        f = _zero
    return TwoScaleSystem(A, f, eps)


def _zero(x, u):
    return 0.0


@dataclass
class Trajectory:
    """States on the step grid: ``W[n] = (u, v, x)`` and ``Psi[n] = (y, z)``."""

    x: np.ndarray
    W: np.ndarray
    Psi: np.ndarray
    sensitivity: np.ndarray | None = None  # (n+1, 2): d(u, v)/d v0

    @property
    def u(self) -> np.ndarray:
        return self.W[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.W[:, 1]

    def radius_drift(self) -> np.ndarray:
        """``|Psi|^2 - 1`` along the trajectory."""
        return np.sum(self.Psi ** 2, axis=1) - 1.0

    def to_csv(self, path) -> None:
        data = np.column_stack([self.x, self.W[:, 0], self.W[:, 1], self.Psi])
        with open(path, "w") as fh:
            fh.write("x,u,v,y,z\n")
            for row in data:
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def _integrate(sys: TwoScaleSystem, substeps, n_steps: int, W0, Psi0,
               renormalize: bool = True, sensitivity: bool = False,
               dfdu: Callable | None = None) -> Trajectory:
    """Run ``n_steps`` macro steps, each a sequence of ``(h_slow, fast_rate)`` substeps.

    A substep advances ``W`` by ``h_slow * G`` and ``Psi`` by ``fast_rate * F``
    (forward Euler in both blocks, evaluated at the old state).
    """
    if n_steps < 1:
        raise ValueError("need at least one step")
    u, v, x = (float(w) for w in W0)
    y, z = (float(p) for p in Psi0)
    f = sys.f
    coef = sys.extended_coefficient
    Ws = np.empty((n_steps + 1, 3))
    Ps = np.empty((n_steps + 1, 2))
    Ws[0] = u, v, x
    Ps[0] = y, z
    S = None
    if sensitivity:
        su, sv = 0.0, 1.0
        S = np.empty((n_steps + 1, 2))
        S[0] = su, sv
    for n in range(1, n_steps + 1):
        for h, rate in substeps:
            a = coef(y, z, x)
            fu = f(x, u)
            if sensitivity:
                if dfdu is not None:
                    fuu = dfdu(x, u)
                else:
                    delta = 1e-6 * max(1.0, abs(u))
                    fuu = (f(x, u + delta) - f(x, u - delta)) / (2 * delta)
                su, sv = su + h * sv / a, sv - h * fuu * su
            u, v, x = u + h * (v / a), v - h * fu, x + h
            if rate != 0.0:
                y, z = y + rate * (-TWO_PI * z), z + rate * (TWO_PI * y)
                if renormalize:
                    r = math.hypot(y, z)
                    y, z = y / r, z / r
        if not (math.isfinite(u) and math.isfinite(v) and math.isfinite(y) and math.isfinite(z)):
            raise IntegrationError(f"non-finite state at step {n}")
        Ws[n] = u, v, x
        Ps[n] = y, z
        if sensitivity:
            S[n] = su, sv
    return Trajectory(Ws[:, 2].copy(), Ws, Ps, S)


def _initial_phase(Psi0):
    return (1.0, 0.0) if Psi0 is None else Psi0


def integrate_euler(sys: TwoScaleSystem, dx: float, n_steps: int, W0, Psi0=None,
                    renormalize: bool = True, force: bool = False,
                    sensitivity: bool = False, dfdu=None) -> Trajectory:
    """Forward Euler with one clock ``dx`` for both blocks.

    Refuses ``dx > eps/10`` unless ``force`` is set, since larger steps no
    longer resolve the fast rotation.
    """
    if not force and dx > sys.eps / 10:
        raise ValueError(f"step dx={dx:g} exceeds eps/10={sys.eps / 10:g}; pass force=True")
    return _integrate(sys, [(dx, dx / sys.eps)], n_steps, W0, _initial_phase(Psi0),
                      renormalize, sensitivity, dfdu)


def integrate_seamless(sys: TwoScaleSystem, dx: float, tau: float, n_steps: int, W0,
                       Psi0=None, renormalize: bool = True, force: bool = False,
                       sensitivity: bool = False, dfdu=None) -> Trajectory:
    """Slow block stepped with ``dx``, fast block with ``tau <= dx``.

    This is forward Euler on the same system with the enlarged scale
    ``eps * dx / tau``.
    """
    if not 0 < tau <= dx:
        raise ValueError(f"need 0 < tau <= dx, got tau={tau:g}, dx={dx:g}")
    eps_eff = sys.eps * (dx / tau)
    if not force and dx > eps_eff / 10:
        raise ValueError(f"fast step tau={tau:g} exceeds eps/10; pass force=True")
    return _integrate(sys, [(dx, dx / eps_eff)], n_steps, W0, _initial_phase(Psi0),
                      renormalize, sensitivity, dfdu)


def integrate_flavors(sys: TwoScaleSystem, dx: float, tau: float, n_steps: int, W0,
                      Psi0=None, renormalize: bool = True, sensitivity: bool = False,
                      dfdu=None) -> Trajectory:
    """Per macro step: ``tau`` with the fast field on, then ``dx - tau`` with it frozen."""
    if not 0 < tau <= dx:
        raise ValueError(f"need 0 < tau <= dx, got tau={tau:g}, dx={dx:g}")
    substeps = [(tau, tau / sys.eps)]
    if dx > tau:
        substeps.append((dx - tau, 0.0))
    return _integrate(sys, substeps, n_steps, W0, _initial_phase(Psi0), renormalize,
                      sensitivity, dfdu)


@dataclass
class ShootingResult:
    v0: float
    trajectory: Trajectory
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def shoot(A: ScaleSeparatedField, f, eps: float, target: float = 1.0,
          integrator: str = "euler", v0_init: float = 1.0, dx: float | None = None,
          tau: float | None = None, u0: float = 0.0, dfdu=None, tol: float = 1e-8,
          max_iter: int = 25, force: bool = False) -> ShootingResult:
    """Newton shooting on ``v0`` so that ``u(1) = target`` with ``u(0) = u0``.

    The derivative ``du(1)/dv0`` comes from the sensitivity recursion of the
    chosen integrator, so it is exact for the discrete map when ``f`` is
    linear in ``u``. ``dfdu`` defaults to a central difference in ``u``.
    """
    sys = reformulate(A, f, eps)
    if dx is None:
        dx = eps / 10 if integrator == "euler" else eps
    n_steps = int(round(1.0 / dx))
    dx = 1.0 / n_steps

    def run(v0):
        W0 = (u0, v0, 0.0)
        if integrator == "euler":
            return integrate_euler(sys, dx, n_steps, W0, force=force, sensitivity=True,
                                   dfdu=dfdu)
        if integrator == "seamless":
            return integrate_seamless(sys, dx, tau, n_steps, W0, force=force,
                                      sensitivity=True, dfdu=dfdu)
        if integrator == "flavors":
            return integrate_flavors(sys, dx, tau, n_steps, W0, sensitivity=True, dfdu=dfdu)
        raise ValueError(f"unknown integrator {integrator!r}")

    v0 = float(v0_init)
    best = None
    history = []
    for it in range(1, max_iter + 1):
        traj = run(v0)
        g = traj.u[-1] - target
        history.append((v0, g))
        if best is None or abs(g) < abs(best[1]):
            best = (v0, g, traj, it)
        if abs(g) <= tol:
            return ShootingResult(v0, traj, abs(g), it, True, history)
        slope = traj.sensitivity[-1, 0]
        if slope == 0 or not math.isfinite(slope):
            break
        v0 = v0 - g / slope
    v0b, gb, trajb, itb = best
    return ShootingResult(v0b, trajb, abs(gb), len(history), False, history)
