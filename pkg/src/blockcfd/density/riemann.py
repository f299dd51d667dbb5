"""Approximate Riemann solvers returning the numerical flux per unit face area.

All functions are vectorized over faces: ``WL``/``WR`` are primitive states
of shape ``(..., 5)`` and ``n`` unit normals pointing from left to right.
"""

from __future__ import annotations

import numpy as np

from .gas import GasModel, euler_flux

ENTROPY_FIX = 0.1
FLUXES = ("roe", "hllc", "rusanov")


def roe_average(WL, WR, gas: GasModel):
    """Roe-averaged velocity, total enthalpy and sound speed."""
    sl = np.sqrt(WL[..., 0])
    sr = np.sqrt(WR[..., 0])
    wl = (sl / (sl + sr))[..., None]
    u = wl * WL[..., 1:4] + (1.0 - wl) * WR[..., 1:4]
    H = wl[..., 0] * gas.enthalpy(WL) + (1.0 - wl[..., 0]) * gas.enthalpy(WR)
    c2 = (gas.gamma - 1.0) * (H - 0.5 * np.sum(u * u, axis=-1))
    return sl * sr, u, H, np.sqrt(np.maximum(c2, 1e-300))


def spectral_radius(WL, WR, n, gas: GasModel):
    """``|u~ . n| + c~`` at the Roe-averaged state (per unit area)."""
    _, u, _, c = roe_average(WL, WR, gas)
    return np.abs(np.sum(u * n, axis=-1)) + c


def _harten(lam, delta):
    a = np.abs(lam)
    return np.where(a < delta, (lam * lam + delta * delta) / (2.0 * delta), a)


def roe_flux(WL, WR, n, gas: GasModel):
    """Roe flux with a Harten entropy fix on the acoustic waves (``delta = 0.1 (|u.n| + c)``)."""
    WL = np.asarray(WL, dtype=float)
    WR = np.asarray(WR, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), WL.shape[:-1] + (3,))
    rho, u, H, c = roe_average(WL, WR, gas)
    un = np.sum(u * n, axis=-1)
    delta = ENTROPY_FIX * (np.abs(un) + c)
    l1 = _harten(un - c, delta)
    l5 = _harten(un + c, delta)
    l2 = np.abs(un)

    drho = WR[..., 0] - WL[..., 0]
    du = WR[..., 1:4] - WL[..., 1:4]
    dp = WR[..., 4] - WL[..., 4]
    dun = np.sum(du * n, axis=-1)
    c2 = c * c

    a1 = l1 * (dp - rho * c * dun) / (2.0 * c2)
    a5 = l5 * (dp + rho * c * dun) / (2.0 * c2)
    a2 = l2 * (drho - dp / c2)
    a3 = l2 * rho

    D = np.empty(WL.shape)
    D[..., 0] = a1 + a5 + a2
    D[..., 1:4] = (a1[..., None] * (u - c[..., None] * n) + a5[..., None] * (u + c[..., None] * n)
                   + a2[..., None] * u + a3[..., None] * (du - dun[..., None] * n))
    D[..., 4] = (a1 * (H - un * c) + a5 * (H + un * c) + a2 * 0.5 * np.sum(u * u, axis=-1)
                 + a3 * (np.sum(u * du, axis=-1) - un * dun))
    return 0.5 * (euler_flux(WL, n, gas) + euler_flux(WR, n, gas) - D)


def hllc_flux(WL, WR, n, gas: GasModel):
    """HLLC flux with Einfeldt wave-speed estimates built on Roe averages."""
    WL = np.asarray(WL, dtype=float)
    WR = np.asarray(WR, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), WL.shape[:-1] + (3,))
    _, u, _, c = roe_average(WL, WR, gas)
    un_roe = np.sum(u * n, axis=-1)
    rl, rr = WL[..., 0], WR[..., 0]
    pl, pr = WL[..., 4], WR[..., 4]
    ul = np.sum(WL[..., 1:4] * n, axis=-1)
    ur = np.sum(WR[..., 1:4] * n, axis=-1)
    sl = np.minimum(ul - gas.sound_speed(WL), un_roe - c)
    sr = np.maximum(ur + gas.sound_speed(WR), un_roe + c)
    sstar = ((pr - pl + rl * ul * (sl - ul) - rr * ur * (sr - ur))
             / (rl * (sl - ul) - rr * (sr - ur)))

    def star(W, s, uk):
        rho, p = W[..., 0], W[..., 4]
        Q = gas.to_conservative(W)
        fac = rho * (s - uk) / (s - sstar)
        Qs = np.empty(W.shape)
        Qs[..., 0] = fac
        Qs[..., 1:4] = fac[..., None] * (W[..., 1:4] + (sstar - uk)[..., None] * n)
        Qs[..., 4] = fac * (Q[..., 4] / rho + (sstar - uk) * (sstar + p / (rho * (s - uk))))
        return Q, Qs

    FL = euler_flux(WL, n, gas)
    FR = euler_flux(WR, n, gas)
    QL, QsL = star(WL, sl, ul)
    QR, QsR = star(WR, sr, ur)
    FsL = FL + sl[..., None] * (QsL - QL)
    FsR = FR + sr[..., None] * (QsR - QR)
    out = np.where((sl >= 0)[..., None], FL,
                   np.where((sstar >= 0)[..., None], FsL,
                            np.where((sr > 0)[..., None], FsR, FR)))
    return out


def rusanov_flux(WL, WR, n, gas: GasModel, lam=None):
    """Scalar-dissipation flux ``(F_L + F_R)/2 - lam (Q_R - Q_L)/2``.

    ``lam`` defaults to the Roe-averaged spectral radius; passing it
    explicitly freezes it (the linearization used for the implicit matrix).
    """
    WL = np.asarray(WL, dtype=float)
    WR = np.asarray(WR, dtype=float)
    if lam is None:
        lam = spectral_radius(WL, WR, n, gas)
    dq = gas.to_conservative(WR) - gas.to_conservative(WL)
    return 0.5 * (euler_flux(WL, n, gas) + euler_flux(WR, n, gas)) - 0.5 * np.asarray(lam)[..., None] * dq


def numerical_flux(name, WL, WR, n, gas: GasModel):
    if name == "roe":
        return roe_flux(WL, WR, n, gas)
    if name == "hllc":
        return hllc_flux(WL, WR, n, gas)
    if name == "rusanov":
        return rusanov_flux(WL, WR, n, gas)
    raise ValueError(f"unknown flux {name!r}; expected one of {FLUXES}")
