"""Ideal-gas relations and the analytic Euler flux and Jacobian.

Conservative states are ``Q = [rho, rho u, rho v, rho w, rho E]`` and
primitive states ``W = [rho, u, v, w, p]``; arrays carry the five
components on their last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GasModel:
    gamma: float = 1.4
    R: float = 287.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.R > 0.0:
            raise ValueError(f"gas constant must be positive, got {self.R}")

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))

    def to_dict(self):
        return {"gamma": self.gamma, "R": self.R}

    def pressure(self, Q):
        Q = np.asarray(Q, dtype=float)
        ke = 0.5 * np.sum(Q[..., 1:4] ** 2, axis=-1) / Q[..., 0]
        return (self.gamma - 1.0) * (Q[..., 4] - ke)

    def to_primitive(self, Q):
        Q = np.asarray(Q, dtype=float)
        W = np.empty_like(Q)
        W[..., 0] = Q[..., 0]
        W[..., 1:4] = Q[..., 1:4] / Q[..., 0:1]
        W[..., 4] = self.pressure(Q)
        return W

    def to_conservative(self, W):
        W = np.asarray(W, dtype=float)
        Q = np.empty_like(W)
        rho = W[..., 0]
        Q[..., 0] = rho
        Q[..., 1:4] = rho[..., None] * W[..., 1:4]
        Q[..., 4] = W[..., 4] / (self.gamma - 1.0) + 0.5 * rho * np.sum(W[..., 1:4] ** 2, axis=-1)
        return Q

    def sound_speed(self, W):
        W = np.asarray(W, dtype=float)
        return np.sqrt(self.gamma * W[..., 4] / W[..., 0])

    def enthalpy(self, W):
        """Total enthalpy ``H = E + p / rho``."""
        W = np.asarray(W, dtype=float)
        return (self.gamma / (self.gamma - 1.0)) * W[..., 4] / W[..., 0] \
            + 0.5 * np.sum(W[..., 1:4] ** 2, axis=-1)

    def temperature(self, W):
        W = np.asarray(W, dtype=float)
        return W[..., 4] / (W[..., 0] * self.R)

    def is_physical(self, W):
        W = np.asarray(W, dtype=float)
        return (W[..., 0] > 0) & (W[..., 4] > 0) & np.all(np.isfinite(W), axis=-1)


def euler_flux(W, n, gas: GasModel):
    """Convective flux ``F_c(Q) . n`` for primitive states ``W`` and (unit or area) vectors ``n``."""
    W = np.asarray(W, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), W.shape[:-1] + (3,))
    rho, u, p = W[..., 0], W[..., 1:4], W[..., 4]
    un = np.sum(u * n, axis=-1)
    F = np.empty(W.shape)
    F[..., 0] = rho * un
    F[..., 1:4] = rho[..., None] * u * un[..., None] + p[..., None] * n
    F[..., 4] = rho * gas.enthalpy(W) * un
    return F


def flux_jacobian(W, n, gas: GasModel):
    """Analytic ``d(F_c . n)/dQ`` evaluated at primitive states ``W``; shape ``(..., 5, 5)``."""
    W = np.asarray(W, dtype=float)
    shape = W.shape[:-1]
    n = np.broadcast_to(np.asarray(n, dtype=float), shape + (3,))
    g = gas.gamma
    u = W[..., 1:4]
    un = np.sum(u * n, axis=-1)
    phi2 = 0.5 * (g - 1.0) * np.sum(u * u, axis=-1)
    H = gas.enthalpy(W)
    J = np.zeros(shape + (5, 5))
    J[..., 0, 1:4] = n
    J[..., 1:4, 0] = n * phi2[..., None] - u * un[..., None]
    J[..., 1:4, 1:4] = (u[..., :, None] * n[..., None, :]
                        - (g - 1.0) * n[..., :, None] * u[..., None, :]
                        + un[..., None, None] * np.eye(3))
    J[..., 1:4, 4] = (g - 1.0) * n
    J[..., 4, 0] = un * (phi2 - H)
    J[..., 4, 1:4] = H[..., None] * n - (g - 1.0) * u * un[..., None]
    J[..., 4, 4] = g * un
    return J
