"""Residual and approximate-Jacobian assembly for the implicit Euler solver.

The residual is ``R(Q) = -sum_faces F . S`` (net inflow), so that
``V dQ/dtau = R``. The implicit matrix is ``V/dtau I - dR/dQ`` with
``-dR/dQ`` approximated face by face: for a face with unit normal ``n``
from owner ``P`` to neighbour ``N`` and spectral radius ``lam``::

    A_PP += S/2 ( J(Q_P, n) + lam I)      A_PN += S/2 ( J(Q_N, n) - lam I)
    A_NN += S/2 (-J(Q_N, n) + lam I)      A_NP += S/2 (-J(Q_P, n) - lam I)

the neighbour row being the owner formula with ``n -> -n``. Boundary faces
use a ghost state ``Q_g(Q_P)``; their exact chain-rule derivative folds
into ``A_PP`` only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..block_matrix import BlockLduMatrix, scalar, vector
from ..errors import ConfigError, NonPhysicalStateError
from ..fv import LeastSquaresGradient, scatter_add
from ..mesh import Mesh
from ..timing import Timer
from .gas import GasModel, flux_jacobian
from .muscl import muscl_reconstruct
from .riemann import FLUXES, numerical_flux, rusanov_flux, spectral_radius

MIRROR_KINDS = ("wall", "slip", "symmetry")
FIXED_KINDS = ("farfield", "inlet")
VARIABLES = ("rho", "rhoUx", "rhoUy", "rhoUz", "rhoE")


def density_variables():
    """Block layout ``[rho, rhoU, rhoE]`` in conservative order."""
    return [scalar("rho"), vector("rhoU"), scalar("rhoE")]


@dataclass
class BoundaryCondition:
    """Weak boundary treatment of one patch.

    ``state`` is the primitive ghost state for farfield/inlet patches and
    ``pressure`` the fixed static pressure of an outlet.
    """

    kind: str
    state: np.ndarray | None = None
    pressure: float | None = None

    def ghost(self, W, n, gas: GasModel):
        """Ghost primitive states for interior states ``W`` at faces with unit normals ``n``."""
        if self.kind in MIRROR_KINDS:
            Wg = W.copy()
            un = np.sum(W[:, 1:4] * n, axis=1)
            Wg[:, 1:4] = W[:, 1:4] - 2.0 * un[:, None] * n
            return Wg
        if self.kind in FIXED_KINDS:
            return np.broadcast_to(self.state, W.shape).copy()
        Wg = W.copy()
        Wg[:, 4] = self.pressure
        return Wg

    def ghost_derivative(self, W, n, gas: GasModel):
        """``dQ_g/dQ`` per face, shape ``(m, 5, 5)``."""
        m = len(W)
        G = np.zeros((m, 5, 5))
        if self.kind in MIRROR_KINDS:
            G[:, 0, 0] = 1.0
            G[:, 4, 4] = 1.0
            G[:, 1:4, 1:4] = np.eye(3) - 2.0 * n[:, :, None] * n[:, None, :]
        elif self.kind == "outlet":
            u = W[:, 1:4]
            G[:, 0, 0] = 1.0
            G[:, 1:4, 1:4] = np.eye(3)
            G[:, 4, 0] = -0.5 * np.sum(u * u, axis=1)
            G[:, 4, 1:4] = u
        return G


def make_boundaries(mesh: Mesh, gas: GasModel, spec=None, freestream=None):
    """Boundary conditions for every patch from an optional ``{name: {...}}`` map.

    Entries may override ``kind`` and give ``state`` (``{"rho", "u", "p"}``)
    or ``p`` for outlets. Farfield and inlet patches default to the
    freestream state.
    """
    spec = spec or {}
    unknown = set(spec) - {p.name for p in mesh.patches}
    if unknown:
        raise ConfigError(f"boundary map names unknown patches {sorted(unknown)}")
    out = {}
    for p in mesh.patches:
        entry = dict(spec.get(p.name, {}))
        kind = entry.get("kind", p.kind)
        state = entry.get("state", freestream)
        bc = BoundaryCondition(kind)
        if kind in FIXED_KINDS:
            if state is None:
                raise ConfigError(f"patch {p.name!r} ({kind}) needs a state")
            bc.state = primitive_from_dict(state)
        elif kind == "outlet":
            if "p" in entry:
                bc.pressure = float(entry["p"])
            elif state is not None:
                bc.pressure = float(primitive_from_dict(state)[4])
            else:
                raise ConfigError(f"outlet patch {p.name!r} needs a pressure")
        elif kind not in MIRROR_KINDS:
            raise ConfigError(f"patch {p.name!r}: unsupported kind {kind!r}")
        out[p.name] = bc
    return out


def primitive_from_dict(state):
    """``{"rho", "u", "p"}`` (or a length-5 sequence) to a primitive vector."""
    if isinstance(state, dict):
        u = list(state.get("u", [0.0, 0.0, 0.0]))
        u = (u + [0.0, 0.0, 0.0])[:3]
        return np.array([state["rho"], *u, state["p"]], dtype=float)
    return np.asarray(state, dtype=float).reshape(5)


@dataclass
class DensityDiscretization:
    """Everything needed to evaluate ``R(Q)`` and its approximate Jacobian on a mesh."""

    mesh: Mesh
    gas: GasModel = field(default_factory=GasModel)
    flux: str = "roe"
    limiter: str = "BarthJespersen"
    first_order: bool = False
    boundaries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.flux not in FLUXES:
            raise ConfigError(f"flux must be one of {FLUXES}, got {self.flux!r}")
        missing = {p.name for p in self.mesh.patches} - set(self.boundaries)
        if missing:
            raise ConfigError(f"no boundary condition for patches {sorted(missing)}")
        self.gradient = LeastSquaresGradient(self.mesh)
        self.last_fallbacks = 0
        self.timer = Timer()

    # -- residual -----------------------------------------------------------------
    def primitives(self, Q):
        W = self.gas.to_primitive(Q)
        bad = np.flatnonzero(~self.gas.is_physical(W))
        if bad.size:
            c = int(bad[0])
            raise NonPhysicalStateError(
                f"cell {c}: non-physical state rho={W[c, 0]:.4g}, p={W[c, 4]:.4g}")
        return W

    def face_fluxes(self, Q, lam=None):
        """Numerical flux per unit area on internal faces and per patch.

        With ``lam`` (a dict of frozen spectral radii as returned by
        ``spectral_radii``) the Rusanov flux uses those values.
        """
        m, gas = self.mesh, self.gas
        W = self.primitives(Q)
        with self.timer.section("gradient"):
            fs = muscl_reconstruct(W, m, self.limiter, self.first_order, self.gradient)
        self.last_fallbacks = fs.fallbacks
        with self.timer.section("fluxes"):
            n = np.asarray(m.face_normals)
            if lam is not None:
                internal = rusanov_flux(fs.left, fs.right, n, gas, lam["internal"])
            else:
                internal = numerical_flux(self.flux, fs.left, fs.right, n, gas)
            boundary = {}
            for p in m.patches:
                nb = p.area_vectors / np.linalg.norm(p.area_vectors, axis=1)[:, None]
                Wi = fs.boundary[p.name]
                Wg = self.boundaries[p.name].ghost(Wi, nb, gas)
                if lam is not None:
                    boundary[p.name] = rusanov_flux(Wi, Wg, nb, gas, lam[p.name])
                else:
                    boundary[p.name] = numerical_flux(self.flux, Wi, Wg, nb, gas)
        return internal, boundary

    def residual(self, Q, lam=None):
        """``R(Q) = -sum_faces F . S``; shape ``(n_cells, 5)``."""
        m = self.mesh
        internal, boundary = self.face_fluxes(Q, lam)
        fS = internal * np.asarray(m.face_areas)[:, None]
        R = scatter_add(m.neighbour, fS, m.n_cells) - scatter_add(m.owner, fS, m.n_cells)
        for p in m.patches:
            area = np.linalg.norm(p.area_vectors, axis=1)
            R -= scatter_add(p.cells, boundary[p.name] * area[:, None], m.n_cells)
        return R

    def spectral_radii(self, Q):
        """Spectral radius ``|u~.n| + c~`` per face from cell states (internal and per patch)."""
        m, gas = self.mesh, self.gas
        W = self.primitives(Q)
        out = {"internal": spectral_radius(W[m.owner], W[m.neighbour], np.asarray(m.face_normals), gas)}
        for p in m.patches:
            nb = p.area_vectors / np.linalg.norm(p.area_vectors, axis=1)[:, None]
            Wi = W[p.cells]
            out[p.name] = spectral_radius(Wi, self.boundaries[p.name].ghost(Wi, nb, gas), nb, gas)
        return out

    def local_time_step(self, Q, cfl, lam=None):
        """``dtau_i = CFL V_i / sum_f lam_f S_f``."""
        m = self.mesh
        lam = lam or self.spectral_radii(Q)
        area = np.asarray(m.face_areas)
        acc = scatter_add(m.owner, lam["internal"] * area, m.n_cells) \
            + scatter_add(m.neighbour, lam["internal"] * area, m.n_cells)
        for p in m.patches:
            acc += scatter_add(p.cells, lam[p.name] * np.linalg.norm(p.area_vectors, axis=1), m.n_cells)
        return cfl * np.asarray(m.cell_volumes) / acc

    # -- Jacobian -----------------------------------------------------------------
    def jacobian(self, Q, lam=None) -> BlockLduMatrix:
        """Approximate ``-dR/dQ`` (no pseudo-time term) as a 5x5 block LDU matrix."""
        m, gas = self.mesh, self.gas
        W = self.primitives(Q)
        lam = lam or self.spectral_radii(Q)
        A = BlockLduMatrix(m, density_variables(), vector_first=False)
        n = np.asarray(m.face_normals)
        half_s = 0.5 * np.asarray(m.face_areas)[:, None, None]
        JP = flux_jacobian(W[m.owner], n, gas)
        JN = flux_jacobian(W[m.neighbour], n, gas)
        lamI = lam["internal"][:, None, None] * np.eye(5)
        A.diag += scatter_add(m.owner, half_s * (JP + lamI), m.n_cells)
        A.diag += scatter_add(m.neighbour, half_s * (-JN + lamI), m.n_cells)
        A.upper[:] = half_s * (JN - lamI)
        A.lower[:] = half_s * (-JP - lamI)
        for p in m.patches:
            bc = self.boundaries[p.name]
            area = np.linalg.norm(p.area_vectors, axis=1)
            nb = p.area_vectors / area[:, None]
            Wi = W[p.cells]
            Wg = bc.ghost(Wi, nb, gas)
            G = bc.ghost_derivative(Wi, nb, gas)
            Ji = flux_jacobian(Wi, nb, gas)
            Jg = flux_jacobian(Wg, nb, gas)
            lb = lam[p.name][:, None, None]
            eye = np.eye(5)
            blk = 0.5 * (Ji + lb * eye + np.einsum("fij,fjk->fik", Jg - lb * eye, G))
            A.diag += scatter_add(p.cells, area[:, None, None] * blk, m.n_cells)
        if not A.is_finite():
            raise NonPhysicalStateError("non-finite Jacobian entries")
        return A

    def assemble(self, Q, cfl):
        """Implicit matrix ``V/dtau I - dR/dQ``, right-hand side ``R(Q)`` and ``dtau``."""
        with self.timer.section("jacobianAssembly"):
            lam = self.spectral_radii(Q)
            A = self.jacobian(Q, lam)
            dtau = self.local_time_step(Q, cfl, lam)
            A.diag += (np.asarray(self.mesh.cell_volumes) / dtau)[:, None, None] * np.eye(5)
        R = self.residual(Q)
        return A, R, dtau

    # -- post-processing ---------------------------------------------------------
    def pressure_force(self, Q, patch):
        """Pressure force ``sum p S`` on a patch using first-order (cell) pressures."""
        p = self.mesh.patch(patch)
        pres = self.gas.pressure(Q[p.cells])
        return np.sum(pres[:, None] * p.area_vectors, axis=0)


def assemble_jacobian(Q, disc: DensityDiscretization, cfl):
    """Assemble ``[V/dtau I - dR/dQ]`` and ``R(Q)``; thin wrapper over ``DensityDiscretization.assemble``."""
    return disc.assemble(Q, cfl)
