"""Finite-volume helpers shared by both solvers: face sums and least-squares gradients."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def scatter_add(index, values, n):
    """``out[index[k]] += values[k]`` for 1-D or 2-D ``values``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n)
    out = np.empty((n,) + values.shape[1:])
    flat = values.reshape(len(values), -1)
    out2 = out.reshape(n, -1)
    for k in range(flat.shape[1]):
        out2[:, k] = np.bincount(index, weights=flat[:, k], minlength=n)
    return out


def face_divergence(mesh: Mesh, internal, boundary=None):
    """Net outflow per cell from per-face quantities defined along the owner->neighbour normal.

    ``internal`` has one entry per internal face; ``boundary`` maps patch
    names to per-face outward quantities.
    """
    n = mesh.n_cells
    out = scatter_add(mesh.owner, internal, n) - scatter_add(mesh.neighbour, internal, n)
    for patch in mesh.patches:
        if boundary and patch.name in boundary:
            out += scatter_add(patch.cells, boundary[patch.name], n)
    return out


class LeastSquaresGradient:
    """Weighted least-squares cell gradients from internal neighbours (weights ``1/|d|^2``).

    The normal matrix is pseudo-inverted, so directions without neighbours
    (the extrusion direction of 2-D meshes) get a zero gradient component.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        d = np.asarray(mesh.deltas)
        w = 1.0 / np.einsum("fi,fi->f", d, d)
        self.wd = w[:, None] * d
        outer = w[:, None, None] * d[:, :, None] * d[:, None, :]
        G = scatter_add(mesh.owner, outer, mesh.n_cells) + scatter_add(mesh.neighbour, outer, mesh.n_cells)
        self.Ginv = np.linalg.pinv(G, rcond=1e-12, hermitian=True)

    def __call__(self, phi):
        """Gradient of a cell field ``phi`` of shape ``(n,)`` or ``(n, k)``; returns ``(n, 3)`` or ``(n, k, 3)``."""
        phi = np.asarray(phi, dtype=float)
        m = self.mesh
        diff = phi[m.neighbour] - phi[m.owner]
        if phi.ndim == 1:
            contrib = self.wd * diff[:, None]
            rhs = scatter_add(m.owner, contrib, m.n_cells) + scatter_add(m.neighbour, contrib, m.n_cells)
            return np.einsum("cij,cj->ci", self.Ginv, rhs)
        contrib = diff[:, :, None] * self.wd[:, None, :]
        rhs = scatter_add(m.owner, contrib, m.n_cells) + scatter_add(m.neighbour, contrib, m.n_cells)
        return np.einsum("cij,ckj->cki", self.Ginv, rhs)


def interpolate(mesh: Mesh, phi):
    """Linear face interpolation with the owner weight ``f_x``."""
    w = np.asarray(mesh.weights)
    phi = np.asarray(phi)
    w = w.reshape((-1,) + (1,) * (phi.ndim - 1))
    return w * phi[mesh.owner] + (1.0 - w) * phi[mesh.neighbour]
