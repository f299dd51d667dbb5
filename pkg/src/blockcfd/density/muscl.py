"""Piecewise-linear (MUSCL) reconstruction of primitive variables to faces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fv import LeastSquaresGradient
from ..mesh import Mesh

LIMITERS = ("none", "BarthJespersen")


@dataclass
class FaceStates:
    """Left (owner side) and right (neighbour side) primitive states per internal face.

    ``boundary[name]`` holds the interior-side state at each face of a patch.
    ``fallbacks`` counts faces reverted to first order because a
    reconstructed density or pressure was not positive.
    """

    left: np.ndarray
    right: np.ndarray
    boundary: dict = field(default_factory=dict)
    fallbacks: int = 0


def neighbour_bounds(mesh: Mesh, phi):
    """Min and max of ``phi`` over each cell and its internal neighbours."""
    lo = np.array(phi, dtype=float, copy=True)
    hi = lo.copy()
    o, nb = mesh.owner, mesh.neighbour
    np.minimum.at(lo, o, phi[nb])
    np.minimum.at(lo, nb, phi[o])
    np.maximum.at(hi, o, phi[nb])
    np.maximum.at(hi, nb, phi[o])
    return lo, hi


def barth_jespersen(mesh: Mesh, phi, grad):
    """Per-cell, per-variable limiter in ``[0, 1]`` keeping face values inside neighbour bounds."""
    phi = np.asarray(phi, dtype=float)
    lo, hi = neighbour_bounds(mesh, phi)
    psi = np.ones_like(phi)
    centroids = np.asarray(mesh.cell_centroids)

    def limit(cells, xf):
        d2 = np.einsum("fki,fi->fk", grad[cells], xf - centroids[cells])
        up = (hi[cells] - phi[cells]) / np.where(d2 > 0, d2, 1.0)
        dn = (lo[cells] - phi[cells]) / np.where(d2 < 0, d2, 1.0)
        val = np.where(d2 > 1e-300, np.minimum(1.0, up),
                       np.where(d2 < -1e-300, np.minimum(1.0, dn), 1.0))
        np.minimum.at(psi, cells, val)

    xf = np.asarray(mesh.face_centres)
    limit(mesh.owner, xf)
    limit(mesh.neighbour, xf)
    for p in mesh.patches:
        limit(p.cells, np.asarray(mesh.boundary_centres[p.name]))
    return np.clip(psi, 0.0, 1.0)


def muscl_reconstruct(W, mesh: Mesh, limiter="BarthJespersen", first_order=False,
                      gradient: LeastSquaresGradient | None = None) -> FaceStates:
    """Reconstruct primitive states ``W`` (shape ``(n, k)``) to both sides of every face.

    ``limiter='none'`` gives unlimited linear reconstruction;
    ``first_order=True`` copies cell values.
    """
    W = np.asarray(W, dtype=float)
    if limiter not in LIMITERS:
        raise ValueError(f"limiter must be one of {LIMITERS}, got {limiter!r}")
    o, nb = mesh.owner, mesh.neighbour
    if first_order:
        return FaceStates(W[o].copy(), W[nb].copy(),
                          {p.name: W[p.cells].copy() for p in mesh.patches})
    gradient = gradient or LeastSquaresGradient(mesh)
    grad = gradient(W)
    if limiter == "BarthJespersen":
        grad = grad * barth_jespersen(mesh, W, grad)[:, :, None]
    c = np.asarray(mesh.cell_centroids)
    xf = np.asarray(mesh.face_centres)
    left = W[o] + np.einsum("fki,fi->fk", grad[o], xf - c[o])
    right = W[nb] + np.einsum("fki,fi->fk", grad[nb], xf - c[nb])
    bad = ~(_positive(left) & _positive(right))
    fallbacks = int(bad.sum())
    if fallbacks:
        left[bad] = W[o[bad]]
        right[bad] = W[nb[bad]]
    boundary = {}
    for p in mesh.patches:
        xb = np.asarray(mesh.boundary_centres[p.name])
        val = W[p.cells] + np.einsum("fki,fi->fk", grad[p.cells], xb - c[p.cells])
        badb = ~_positive(val)
        if badb.any():
            val[badb] = W[p.cells[badb]]
            fallbacks += int(badb.sum())
        boundary[p.name] = val
    return FaceStates(left, right, boundary, fallbacks)


def _positive(W):
    if W.shape[-1] != 5:
        return np.ones(W.shape[0], dtype=bool)
    return (W[:, 0] > 0) & (W[:, 4] > 0)
