"""Scalar 1-D Roe and HLLC fluxes written directly from the textbook formulas."""

import numpy as np


def _euler(r, u, p, g):
    E = p / (g - 1) + 0.5 * r * u * u
    return np.array([r * u, r * u * u + p, u * (E + p)])


def _roe_mean(left, right, g):
    rl, ul, pl = left
    rr, ur, pr = right
    hl = g / (g - 1) * pl / rl + 0.5 * ul * ul
    hr = g / (g - 1) * pr / rr + 0.5 * ur * ur
    s = np.sqrt(rl) / (np.sqrt(rl) + np.sqrt(rr))
    u = s * ul + (1 - s) * ur
    h = s * hl + (1 - s) * hr
    return np.sqrt(rl * rr), u, h, np.sqrt((g - 1) * (h - 0.5 * u * u))


def roe(left, right, g=1.4):
    """Roe flux without entropy fix (the fix is inactive away from sonic points)."""
    rho, u, h, c = _roe_mean(left, right, g)
    dr, du, dp = (right[k] - left[k] for k in range(3))
    alphas = ((dp - rho * c * du) / (2 * c * c), dr - dp / (c * c), (dp + rho * c * du) / (2 * c * c))
    waves = (u - c, u, u + c)
    vecs = (np.array([1, u - c, h - u * c]), np.array([1, u, 0.5 * u * u]), np.array([1, u + c, h + u * c]))
    diss = sum(abs(w) * a * v for w, a, v in zip(waves, alphas, vecs))
    return 0.5 * (_euler(*left, g) + _euler(*right, g)) - 0.5 * diss


def hllc(left, right, g=1.4):
    """HLLC with Einfeldt wave speeds from the Roe mean."""
    rl, ul, pl = left
    rr, ur, pr = right
    _, u, _, c = _roe_mean(left, right, g)
    sl = min(ul - np.sqrt(g * pl / rl), u - c)
    sr = max(ur + np.sqrt(g * pr / rr), u + c)
    ss = (pr - pl + rl * ul * (sl - ul) - rr * ur * (sr - ur)) / (rl * (sl - ul) - rr * (sr - ur))

    def star(r, uk, p, s):
        E = p / (g - 1) + 0.5 * r * uk * uk
        f = r * (s - uk) / (s - ss)
        return np.array([r, r * uk, E]), f * np.array([1, ss, E / r + (ss - uk) * (ss + p / (r * (s - uk)))])

    if sl >= 0:
        return _euler(*left, g)
    if sr <= 0:
        return _euler(*right, g)
    if ss >= 0:
        q, qs = star(*left, sl)
        return _euler(*left, g) + sl * (qs - q)
    q, qs = star(*right, sr)
    return _euler(*right, g) + sr * (qs - q)
