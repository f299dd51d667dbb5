"""Coupled pressure-velocity solver for steady incompressible flow (block size 4).

Each cell carries ``[u_x, u_y, u_z, p]`` with ``p`` the kinematic pressure.
For an internal face with area vector ``S`` (owner ``P`` to neighbour
``N``), owner weight ``f``, old volumetric flux ``phi`` and
``c = (D_f S).n / (n.d)``:

=====================  ==========================  ==========================
block                  owner row                   neighbour row
=====================  ==========================  ==========================
``a^uu`` diag          ``max(phi,0) + nu|S|/d``    ``max(-phi,0) + nu|S|/d``
``a^uu`` off-diag      ``min(phi,0) - nu|S|/d``    ``min(-phi,0) - nu|S|/d``
``a^up = a^pu`` diag   ``f S``                     ``-(1-f) S``
``a^up = a^pu`` off    ``(1-f) S``                 ``-f S``
``a^pp`` diag          ``c``                       ``c``
``a^pp`` off-diag      ``-c``                      ``-c``
=====================  ==========================  ==========================

The continuity row is the Rhie-Chow face flux summed over the cell; the
interpolated-gradient part of the correction is explicit (old pressure)
and goes to the right-hand side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..block_matrix import BlockLduMatrix, scalar, vector
from ..engine.pipeline import SolvePipeline, SolverConfig
from ..errors import ConfigError, MeshValidationError
from ..fv import LeastSquaresGradient, face_divergence, interpolate, scatter_add
from ..mesh import Mesh
from ..timing import Timer

FIXED_VELOCITY = ("wall", "inlet", "farfield")
FIXED_PRESSURE = ("outlet",)
SLIP = ("slip", "symmetry")
SCHEMES = ("upwind", "linearUpwind")
COMPONENTS = ("Ux", "Uy", "Uz", "p")
VECTOR_NORM_FLOOR = 1e-6


def pressure_variables():
    return [vector("U"), scalar("p")]


@dataclass
class PatchCondition:
    kind: str
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pressure: float = 0.0


def make_patch_conditions(mesh: Mesh, spec=None):
    """``{patch: {"kind", "u", "p"}}`` overrides on top of the mesh patch kinds."""
    spec = spec or {}
    unknown = set(spec) - {p.name for p in mesh.patches}
    if unknown:
        raise ConfigError(f"boundary map names unknown patches {sorted(unknown)}")
    out = {}
    for p in mesh.patches:
        entry = spec.get(p.name, {})
        kind = entry.get("kind", p.kind)
        if kind not in FIXED_VELOCITY + FIXED_PRESSURE + SLIP:
            raise ConfigError(f"patch {p.name!r}: unsupported kind {kind!r}")
        u = np.zeros(3)
        given = np.asarray(entry.get("u", [0.0, 0.0, 0.0]), dtype=float)
        u[:len(given)] = given
        out[p.name] = PatchCondition(kind, u, float(entry.get("p", 0.0)))
    return out


@dataclass
class IncompressibleState:
    """Cell velocity and pressure plus the face fluxes of the last iteration."""

    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    boundary_phi: dict = field(default_factory=dict)

    @classmethod
    def quiescent(cls, mesh: Mesh, conditions=None, p=0.0):
        st = cls(np.zeros((mesh.n_cells, 3)), np.full(mesh.n_cells, float(p)), np.zeros(mesh.n_faces))
        st.boundary_phi = boundary_fluxes(mesh, conditions or {}, st.u)
        return st

    def copy(self):
        return IncompressibleState(self.u.copy(), self.p.copy(), self.phi.copy(),
                                   {k: v.copy() for k, v in self.boundary_phi.items()})

    def as_block(self):
        return np.column_stack([self.u, self.p])


def _patch_geometry(mesh: Mesh, patch):
    S = np.asarray(patch.area_vectors)
    mag = np.linalg.norm(S, axis=1)
    n = S / mag[:, None]
    dn = np.einsum("fi,fi->f", np.asarray(mesh.boundary_centres[patch.name])
                   - np.asarray(mesh.cell_centroids)[patch.cells], n)
    return S, mag, n, dn


def boundary_fluxes(mesh: Mesh, conditions, u):
    """Outward volumetric flux on every boundary face."""
    out = {}
    for p in mesh.patches:
        bc = conditions.get(p.name)
        S = np.asarray(p.area_vectors)
        if bc is None or bc.kind in SLIP:
            out[p.name] = np.zeros(p.n_faces)
        elif bc.kind in FIXED_VELOCITY:
            out[p.name] = S @ bc.velocity
        else:
            out[p.name] = np.einsum("fi,fi->f", S, u[p.cells])
    return out


def _face_geometry(mesh: Mesh):
    S = np.asarray(mesh.area_vectors)
    mag = np.asarray(mesh.face_areas)
    n = np.asarray(mesh.face_normals)
    nd = np.einsum("fi,fi->f", n, np.asarray(mesh.deltas))
    bad = np.flatnonzero(np.abs(nd) < 1e-14)
    if bad.size:
        raise MeshValidationError(f"face {bad[0]}: degenerate geometry, |n.d| = {abs(nd[bad[0]]):.3e}")
    return S, mag, n, nd


def momentum_diagonal_operator(A: BlockLduMatrix, mesh: Mesh):
    """``D = V (a_ii^uu)^-1`` per cell, shape ``(n, 3, 3)``."""
    auu = A.sub_blocks(A.view("U", "U"), "diag")
    return np.asarray(mesh.cell_volumes)[:, None, None] * np.linalg.inv(auu)


def rhie_chow_flux(mesh: Mesh, u, p, grad_p, D):
    """``phi_f = S.[u_f - D_f (grad p_f - interp(grad p))]`` with the compact face gradient."""
    S, mag, n, nd = _face_geometry(mesh)
    Df = interpolate(mesh, D)
    DS = np.einsum("fij,fj->fi", Df, S)
    c = np.einsum("fi,fi->f", DS, n) / nd
    uf = interpolate(mesh, u)
    gf = interpolate(mesh, grad_p)
    return (np.einsum("fi,fi->f", S, uf) - c * (p[mesh.neighbour] - p[mesh.owner])
            + np.einsum("fi,fi->f", DS, gf))


def divergence_check(mesh: Mesh, phi, boundary_phi=None):
    """Signed sum of outgoing fluxes per cell."""
    return face_divergence(mesh, phi, boundary_phi)


def normalized_residuals(A: BlockLduMatrix, b, x):
    """Per-variable normalized residual ``sum|b - Ax| / (sum|Ax - A xbar| + sum|b - A xbar|)``."""
    Ax = A.matvec(x)
    xbar = np.broadcast_to(x.mean(axis=0), x.shape)
    Axbar = A.matvec(np.ascontiguousarray(xbar))
    num = np.abs(b - Ax).sum(axis=0)
    den = np.abs(Ax - Axbar).sum(axis=0) + np.abs(b - Axbar).sum(axis=0)
    # velocity components share one scale so a component that is zero up to roundoff
    # (symmetric flows) does not report a residual of order one
    den[:3] = np.maximum(den[:3], VECTOR_NORM_FLOOR * den[:3].max())
    return num / (den + 1e-20)


@dataclass
class CoupledSystem:
    A: BlockLduMatrix
    b: np.ndarray
    D: np.ndarray
    grad_p: np.ndarray


class PressureDiscretization:
    """Assembles the 4x4 block system and evaluates fluxes on one mesh."""

    def __init__(self, mesh: Mesh, nu, conditions=None, scheme="upwind", reference_cell=0,
                 reference_pressure=0.0, relax=None):
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        if nu <= 0:
            raise ConfigError(f"viscosity must be positive, got {nu}")
        self.mesh = mesh
        self.nu = float(nu)
        self.conditions = conditions if conditions is not None else make_patch_conditions(mesh)
        self.scheme = scheme
        self.relax = relax
        self.gradient = LeastSquaresGradient(mesh)
        self.timer = Timer()
        pinned = not any(bc.kind in FIXED_PRESSURE for bc in self.conditions.values())
        self.reference_cell = reference_cell if pinned else None
        self.reference_pressure = float(reference_pressure)
        self.geometry = _face_geometry(mesh)

    # -- momentum ---------------------------------------------------------------
    def _momentum(self, A, b, state: IncompressibleState):
        m = self.mesh
        S, mag, n, nd = self.geometry
        phi = state.phi
        diff = self.nu * mag / nd
        eye = np.eye(3)
        uu = A.view("U", "U")
        A.sub_blocks(uu, "diag")[:] += (scatter_add(m.owner, np.maximum(phi, 0) + diff, m.n_cells)
                                       + scatter_add(m.neighbour, np.maximum(-phi, 0) + diff, m.n_cells)
                                       )[:, None, None] * eye
        A.sub_blocks(uu, "upper")[:] += (np.minimum(phi, 0) - diff)[:, None, None] * eye
        A.sub_blocks(uu, "lower")[:] += (np.minimum(-phi, 0) - diff)[:, None, None] * eye

        if self.scheme == "linearUpwind":
            grad_u = self.gradient(state.u)
            xf = np.asarray(m.face_centres)
            c = np.asarray(m.cell_centroids)
            up = np.where(phi >= 0, m.owner, m.neighbour)
            corr = np.einsum("fki,fi->fk", grad_u[up], xf - c[up])
            flux = phi[:, None] * corr
            b[:, :3] -= scatter_add(m.owner, flux, m.n_cells)
            b[:, :3] += scatter_add(m.neighbour, flux, m.n_cells)

        for p in m.patches:
            bc = self.conditions[p.name]
            Sb, magb, nb, dn = _patch_geometry(m, p)
            cells = p.cells
            if bc.kind in FIXED_VELOCITY:
                coef = self.nu * magb / dn
                phib = Sb @ bc.velocity
                A.add_diag(cells, np.pad((coef + np.maximum(phib, 0))[:, None, None] * eye,
                                         ((0, 0), (0, 1), (0, 1))))
                b[:, :3] += scatter_add(cells, (coef - np.minimum(phib, 0))[:, None] * bc.velocity,
                                        m.n_cells)
            elif bc.kind in SLIP:
                coef = self.nu * magb / dn
                blk = coef[:, None, None] * nb[:, :, None] * nb[:, None, :]
                A.add_diag(cells, np.pad(blk, ((0, 0), (0, 1), (0, 1))))
            else:  # outlet: zero-gradient velocity, outflow convected implicitly
                phib = state.boundary_phi.get(p.name, np.zeros(p.n_faces))
                A.add_diag(cells, np.pad(np.maximum(phib, 0)[:, None, None] * eye,
                                         ((0, 0), (0, 1), (0, 1))))

        if self.relax is not None:
            auu = A.sub_blocks(uu, "diag")
            extra = (1.0 - self.relax) / self.relax * auu.copy()
            auu += extra
            b[:, :3] += np.einsum("cij,cj->ci", extra, state.u)

    # -- pressure-velocity coupling ---------------------------------------------
    def _coupling(self, A, b, state):
        m = self.mesh
        S, mag, n, nd = self.geometry
        f = np.asarray(m.weights)[:, None]
        up, pu = A.view("U", "p"), A.view("p", "U")
        diag_owner = f * S
        diag_nb = -(1.0 - f) * S
        upper = (1.0 - f) * S
        lower = -f * S
        A.sub_blocks(up, "diag")[:] += (scatter_add(m.owner, diag_owner, m.n_cells)
                                       + scatter_add(m.neighbour, diag_nb, m.n_cells))[:, :, None]
        A.sub_blocks(up, "upper")[:] += upper[:, :, None]
        A.sub_blocks(up, "lower")[:] += lower[:, :, None]
        A.sub_blocks(pu, "diag")[:] += (scatter_add(m.owner, diag_owner, m.n_cells)
                                       + scatter_add(m.neighbour, diag_nb, m.n_cells))[:, None, :]
        A.sub_blocks(pu, "upper")[:] += upper[:, None, :]
        A.sub_blocks(pu, "lower")[:] += lower[:, None, :]

        for p in m.patches:
            bc = self.conditions[p.name]
            Sb = np.asarray(p.area_vectors)
            cells = p.cells
            blk = np.zeros((p.n_faces, 4, 4))
            if bc.kind in FIXED_PRESSURE:
                blk[:, 3, :3] = Sb  # continuity sees the cell velocity
                A.add_diag(cells, blk)
                b[:, :3] -= scatter_add(cells, bc.pressure * Sb, m.n_cells)
            else:
                blk[:, :3, 3] = Sb  # zero-gradient pressure on the boundary
                A.add_diag(cells, blk)
                if bc.kind in FIXED_VELOCITY:
                    b[:, 3] -= scatter_add(cells, Sb @ bc.velocity, m.n_cells)

    def _pressure(self, A, b, state, D, grad_p):
        m = self.mesh
        S, mag, n, nd = self.geometry
        Df = interpolate(m, D)
        DS = np.einsum("fij,fj->fi", Df, S)
        c = np.einsum("fi,fi->f", DS, n) / nd
        pp = A.view("p", "p")
        A.sub_blocks(pp, "diag")[:, 0, 0] += scatter_add(m.owner, c, m.n_cells) \
            + scatter_add(m.neighbour, c, m.n_cells)
        A.sub_blocks(pp, "upper")[:, 0, 0] -= c
        A.sub_blocks(pp, "lower")[:, 0, 0] -= c
        explicit = np.einsum("fi,fi->f", DS, interpolate(m, grad_p))
        b[:, 3] -= scatter_add(m.owner, explicit, m.n_cells)
        b[:, 3] += scatter_add(m.neighbour, explicit, m.n_cells)

        for p in m.patches:
            bc = self.conditions[p.name]
            if bc.kind not in FIXED_PRESSURE:
                continue
            Sb, magb, nb, dn = _patch_geometry(m, p)
            DSb = np.einsum("fij,fj->fi", D[p.cells], Sb)
            cb = np.einsum("fi,fi->f", DSb, nb) / dn
            blk = np.zeros((p.n_faces, 4, 4))
            blk[:, 3, 3] = cb
            A.add_diag(p.cells, blk)
            b[:, 3] += scatter_add(p.cells, cb * bc.pressure
                                   - np.einsum("fi,fi->f", DSb, grad_p[p.cells]), m.n_cells)

        if self.reference_cell is not None:
            diag_pp = A.sub_blocks(pp, "diag")[:, 0, 0]
            cref = float(np.mean(diag_pp))
            A.diag[self.reference_cell, 3, 3] += cref
            b[self.reference_cell, 3] += cref * self.reference_pressure

    def assemble(self, state: IncompressibleState) -> CoupledSystem:
        """Build the coupled matrix and right-hand side around ``state``."""
        with self.timer.section("gradient"):
            grad_p = self.gradient(state.p)
        with self.timer.section("jacobianAssembly"):
            A = BlockLduMatrix(self.mesh, pressure_variables())
            b = A.new_vector()
            self._momentum(A, b, state)
            D = momentum_diagonal_operator(A, self.mesh)
            self._coupling(A, b, state)
            self._pressure(A, b, state, D, grad_p)
        return CoupledSystem(A, b, D, grad_p)

    def update_fluxes(self, state: IncompressibleState, D):
        """Recompute Rhie-Chow internal fluxes and boundary fluxes in place."""
        with self.timer.section("fluxes"):
            grad_p = self.gradient(state.p)
            state.phi = rhie_chow_flux(self.mesh, state.u, state.p, grad_p, D)
            state.boundary_phi = boundary_fluxes(self.mesh, self.conditions, state.u)
            for p in self.mesh.patches:
                bc = self.conditions[p.name]
                if bc.kind in FIXED_PRESSURE:
                    Sb, magb, nb, dn = _patch_geometry(self.mesh, p)
                    DSb = np.einsum("fij,fj->fi", D[p.cells], Sb)
                    cb = np.einsum("fi,fi->f", DSb, nb) / dn
                    state.boundary_phi[p.name] = (state.boundary_phi[p.name]
                                                  - cb * (bc.pressure - state.p[p.cells])
                                                  + np.einsum("fi,fi->f", DSb, grad_p[p.cells]))
        return state

    def residuals(self, state: IncompressibleState):
        """Normalized residuals ``[Ux, Uy, Uz, p]`` of the coupled system at ``state``."""
        sys_ = self.assemble(state)
        return normalized_residuals(sys_.A, sys_.b, state.as_block())

    def wall_force(self, state: IncompressibleState, patch):
        """Viscous plus pressure force exerted by the fluid on a patch."""
        p = self.mesh.patch(patch)
        bc = self.conditions[p.name]
        Sb, magb, nb, dn = _patch_geometry(self.mesh, p)
        shear = self.nu * (magb / dn)[:, None] * (state.u[p.cells] - bc.velocity)
        if bc.kind in SLIP:
            shear = np.zeros_like(shear)
        pres = state.p[p.cells][:, None] * Sb
        return np.sum(shear + pres, axis=0)


@dataclass
class IterationResult:
    residuals: np.ndarray
    report: object
    timings: dict


def coupled_iterate(state: IncompressibleState, disc: PressureDiscretization,
                    solve_cfg: SolverConfig | None = None, backend="engine", pipeline=None):
    """Assemble, solve the coupled system, update ``u`` and ``p``, refresh fluxes.

    Returns ``(new_state, IterationResult)``; the residuals are the
    normalized initial residuals of the assembled system.
    """
    pipeline = pipeline or SolvePipeline()
    disc.timer.reset()
    sys_ = disc.assemble(state)
    x0 = state.as_block()
    res = normalized_residuals(sys_.A, sys_.b, x0)
    x, report = pipeline.solve(sys_.A, sys_.b, x0, backend, solve_cfg or SolverConfig())
    t0 = time.perf_counter()
    new = IncompressibleState(np.ascontiguousarray(x[:, :3]), np.ascontiguousarray(x[:, 3]),
                              state.phi, state.boundary_phi)
    disc.timer.add("update", time.perf_counter() - t0)
    disc.update_fluxes(new, sys_.D)
    return new, IterationResult(res, report, disc.timer.snapshot())
