"""Classical fourth-order Runge-Kutta stepping."""
from __future__ import annotations

import numpy as np


class IntegrationError(FloatingPointError):
    pass


def _finite(x) -> bool:
    data = getattr(x, "data", x)
    return bool(np.all(np.isfinite(data)))


def rk4_step(f, z, t: float, dt: float):
    """One RK4 step of dz/dt = f(z, t); works on arrays or engine tensors."""
    if not dt > 0:
        raise ValueError(f"rk4_step: dt must be positive, got {dt}")
    k1 = f(z, t)
    k2 = f(z + k1 * (0.5 * dt), t + 0.5 * dt)
    k3 = f(z + k2 * (0.5 * dt), t + 0.5 * dt)
    k4 = f(z + k3 * dt, t + dt)
    for k in (k1, k2, k3, k4):
        if not _finite(k):
            raise IntegrationError(f"rk4_step: non-finite stage value at t={t!r}")
    return z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
