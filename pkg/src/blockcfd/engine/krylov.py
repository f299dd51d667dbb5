"""Right-preconditioned restarted GMRES and BiCGStab on flat vectors.

The solvers only see callables (``matvec``, ``psolve``, ``dot``), so the same
code runs on a serial block CSR matrix, on LDU storage, or on a set of
simulated ranks whose inner products are all-reduced.

Convergence is always decided on the true residual ``||b - A x||_2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import BreakdownError

BICGSTAB_BREAKDOWN = 1e-30


@dataclass
class KrylovResult:
    iterations: int = 0
    initial_residual: float = 0.0
    final_residual: float = 0.0
    converged: bool = False
    history: list = field(default_factory=list)
    breakdown: bool = False


def _norm(dot, v):
    return math.sqrt(max(float(dot(v, v)), 0.0))


def _identity(v):
    return v


def gmres(matvec, b, x0, psolve=None, rel_tol=1e-6, abs_tol=1e-30, max_iters=500,
          restart=30, dot=np.dot):
    """Restarted GMRES(m) with modified Gram-Schmidt and Givens rotations.

    Returns ``(x, KrylovResult)``. ``history`` holds the residual norm
    estimate after every inner iteration (true residual at index 0); within
    one restart cycle these estimates are non-increasing.
    """
    psolve = psolve or _identity
    x = np.array(x0, dtype=float, copy=True)
    r = b - matvec(x)
    beta = _norm(dot, r)
    res = KrylovResult(initial_residual=beta, final_residual=beta, history=[beta])
    target = max(rel_tol * beta, abs_tol)
    if beta <= target:
        res.converged = True
        return x, res

    m = max(1, int(restart))
    while res.iterations < max_iters:
        V = [r / beta]
        Z = []
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        k = 0
        happy = False
        for j in range(m):
            z = psolve(V[j])
            w = matvec(z)
            Z.append(z)
            res.iterations += 1
            wnorm0 = _norm(dot, w)
            for i in range(j + 1):
                H[i, j] = dot(w, V[i])
                w = w - H[i, j] * V[i]
            H[j + 1, j] = _norm(dot, w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            hjj, hj1 = H[j, j], H[j + 1, j]
            denom = math.hypot(hjj, hj1)
            happy = hj1 <= 1e-14 * max(wnorm0, denom)
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = hjj / denom, hj1 / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            res.history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or happy or res.iterations >= max_iters:
                break
            V.append(w / hj1)
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            if H[i, i] == 0.0:
                y[i] = 0.0
                continue
            y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:k]) / H[i, i]
        for i in range(k):
            x = x + y[i] * Z[i]
        r = b - matvec(x)
        beta = _norm(dot, r)
        res.final_residual = beta
        if beta <= target:
            res.converged = True
            return x, res
        if happy and k == 1:
            res.breakdown = True
            raise BreakdownError(
                f"GMRES breakdown after {res.iterations} iterations with residual {beta:.3e} "
                f"above target {target:.3e}")
        if beta == 0.0:
            break
    return x, res


def bicgstab(matvec, b, x0, psolve=None, rel_tol=1e-6, abs_tol=1e-30, max_iters=500, dot=np.dot):
    """Right-preconditioned BiCGStab. One iteration = two matrix-vector products."""
    psolve = psolve or _identity
    x = np.array(x0, dtype=float, copy=True)
    r = b - matvec(x)
    beta = _norm(dot, r)
    res = KrylovResult(initial_residual=beta, final_residual=beta, history=[beta])
    target = max(rel_tol * beta, abs_tol)
    if beta <= target:
        res.converged = True
        return x, res

    def breakdown(what, value):
        true = _norm(dot, b - matvec(x))
        res.final_residual = true
        res.breakdown = True
        if true <= target:
            res.converged = True
            return x, res
        raise BreakdownError(
            f"BiCGStab breakdown ({what} = {value:.3e}) after {res.iterations} iterations, "
            f"residual {true:.3e} above target {target:.3e}")

    rhat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(r)
    p = np.zeros_like(r)
    fresh = True
    while res.iterations < max_iters:
        rho = float(dot(rhat, r))
        if abs(rho) < BICGSTAB_BREAKDOWN:
            return breakdown("rho", rho)
        if fresh:
            p = r.copy()
            fresh = False
        else:
            p = r + (rho / rho_old) * (alpha / omega) * (p - omega * v)
        phat = psolve(p)
        v = matvec(phat)
        denom = float(dot(rhat, v))
        if abs(denom) < BICGSTAB_BREAKDOWN:
            return breakdown("rhat.v", denom)
        alpha = rho / denom
        s = r - alpha * v
        res.iterations += 1
        snorm = _norm(dot, s)
        if snorm <= target:
            x = x + alpha * phat
            true = _norm(dot, b - matvec(x))
            res.history.append(true)
            res.final_residual = true
            if true <= target:
                res.converged = True
                return x, res
            r = b - matvec(x)
            rhat = r.copy()
            fresh = True
            continue
        shat = psolve(s)
        t = matvec(shat)
        tt = float(dot(t, t))
        omega = float(dot(t, s)) / tt if tt > 0 else 0.0
        if abs(omega) < BICGSTAB_BREAKDOWN:
            x = x + alpha * phat
            return breakdown("omega", omega)
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rho_old = rho
        rnorm = _norm(dot, r)
        res.history.append(rnorm)
        if rnorm <= target:
            true = _norm(dot, b - matvec(x))
            res.final_residual = true
            if true <= target:
                res.converged = True
                return x, res
            r = b - matvec(x)
            rhat = r.copy()
            fresh = True
    res.final_residual = _norm(dot, b - matvec(x))
    res.converged = res.final_residual <= target
    return x, res
