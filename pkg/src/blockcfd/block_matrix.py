"""Face-addressed block LDU matrices for implicitly coupled systems.

A coupled system ``A_ii U_i + sum_N A_ij U_j = b_i`` is stored as one dense
``n x n`` block per cell (``diag``) and two per internal face: ``upper``
(owner row, neighbour column) and ``lower`` (neighbour row, owner column).
Each block is further split into sub-blocks by variable, e.g. for the
incompressible ``[u, p]`` system the ``(u, u)`` 3x3, ``(u, p)`` 3x1,
``(p, u)`` 1x3 and ``(p, p)`` 1x1 parts.

Block vectors are plain ``(n_cells, n)`` float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .mesh import Mesh

PARTS = ("diag", "upper", "lower")


@dataclass(frozen=True)
class Variable:
    """A named unknown; ``size`` is 1 for scalars and 3 for vectors."""

    name: str
    size: int = 1

    def __post_init__(self):
        if self.size not in (1, 3):
            raise ValueError(f"variable {self.name!r}: size must be 1 or 3, got {self.size}")


def scalar(name):
    return Variable(name, 1)


def vector(name):
    return Variable(name, 3)


@dataclass(frozen=True)
class SubBlockView:
    row_var: Variable
    col_var: Variable
    row_start: int
    col_start: int

    @property
    def rows(self):
        return slice(self.row_start, self.row_start + self.row_var.size)

    @property
    def cols(self):
        return slice(self.col_start, self.col_start + self.col_var.size)

    def check(self, n):
        if self.row_start < 0 or self.col_start < 0 \
                or self.row_start + self.row_var.size > n or self.col_start + self.col_var.size > n:
            raise ValueError(f"sub-block view {self} does not fit an {n}x{n} block")


def order_variables(variables: Sequence[Variable], vector_first=True):
    """Layout of variables inside a block: vectors first (declaration order), then scalars."""
    variables = list(variables)
    if not variables:
        raise ValueError("at least one variable is required")
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate variable names in {names}")
    if vector_first:
        variables = [v for v in variables if v.size == 3] + [v for v in variables if v.size == 1]
    return variables


class LduAddressing:
    """Per-cell neighbour lists sorted by column, built from owner/neighbour arrays.

    ``ent_side`` is 0 for lower entries (column = owner) and 1 for upper
    entries (column = neighbour).
    """

    def __init__(self, n_cells, owner, neighbour):
        m = len(owner)
        faces = np.arange(m, dtype=np.int64)
        rows = np.concatenate([neighbour, owner])
        cols = np.concatenate([owner, neighbour])
        order = np.lexsort((cols, rows))
        self.n_cells = n_cells
        self.owner = np.ascontiguousarray(owner, dtype=np.int64)
        self.neighbour = np.ascontiguousarray(neighbour, dtype=np.int64)
        self.ent_face = np.concatenate([faces, faces])[order]
        self.ent_side = np.concatenate([np.zeros(m, np.int64), np.ones(m, np.int64)])[order]
        self.ent_col = cols[order]
        self.cell_ptr = np.zeros(n_cells + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_cells), out=self.cell_ptr[1:])


class BlockLduMatrix:
    """Coupled block matrix in face-addressed LDU storage.

    Parameters
    ----------
    mesh : Mesh
    variables : sequence of Variable
    vector_first : bool
        Reorder variables so vectors precede scalars. Pass False to keep the
        declaration order (the density solver's ``[rho, rhoU, rhoE]``).
    """

    def __init__(self, mesh: Mesh, variables: Sequence[Variable], vector_first=True):
        self.mesh = mesh
        self.variables = tuple(order_variables(variables, vector_first))
        self.offsets = {}
        start = 0
        for v in self.variables:
            self.offsets[v.name] = start
            start += v.size
        self.n = start
        nc, nf = mesh.n_cells, mesh.n_faces
        self.diag = np.zeros((nc, self.n, self.n))
        self.upper = np.zeros((nf, self.n, self.n))
        self.lower = np.zeros((nf, self.n, self.n))
        self.addressing = LduAddressing(nc, mesh.owner, mesh.neighbour)

    block_size = property(lambda self: self.n)
    n_cells = property(lambda self: self.mesh.n_cells)
    n_faces = property(lambda self: self.mesh.n_faces)

    def variable(self, name) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def view(self, row_name, col_name) -> SubBlockView:
        return SubBlockView(self.variable(row_name), self.variable(col_name),
                            self.offsets[row_name], self.offsets[col_name])

    def views(self):
        return [self.view(r.name, c.name) for r in self.variables for c in self.variables]

    def _part(self, part):
        if part not in PARTS:
            raise ValueError(f"part must be one of {PARTS}, got {part!r}")
        return getattr(self, part)

    def sub_block(self, view: SubBlockView, index, part="diag"):
        """Writable slice of one block restricted to a sub-block view."""
        view.check(self.n)
        arr = self._part(part)
        if not 0 <= index < len(arr):
            raise ValueError(f"{part} index {index} out of range [0, {len(arr)})")
        return arr[index, view.rows, view.cols]

    def sub_blocks(self, view: SubBlockView, part="diag"):
        """Writable slice of every block of ``part`` restricted to ``view``."""
        view.check(self.n)
        return self._part(part)[:, view.rows, view.cols]

    def add_face_contribution(self, face, owner_diag, neighbour_diag, upper, lower):
        if not 0 <= face < self.n_faces:
            raise ValueError(f"face index {face} out of range [0, {self.n_faces})")
        o, nb = self.mesh.owner[face], self.mesh.neighbour[face]
        for blk in (owner_diag, neighbour_diag, upper, lower):
            if np.shape(blk) != (self.n, self.n):
                raise ValueError(f"expected {self.n}x{self.n} blocks, got {np.shape(blk)}")
        self.diag[o] += owner_diag
        self.diag[nb] += neighbour_diag
        self.upper[face] += upper
        self.lower[face] += lower

    def add_diag(self, cells, blocks):
        """Accumulate blocks onto diagonal entries; repeated cells add up."""
        np.add.at(self.diag, np.asarray(cells), blocks)

    def zero(self):
        self.diag[:] = 0.0
        self.upper[:] = 0.0
        self.lower[:] = 0.0

    def copy(self):
        out = BlockLduMatrix.__new__(BlockLduMatrix)
        out.__dict__.update(self.__dict__)
        out.diag = self.diag.copy()
        out.upper = self.upper.copy()
        out.lower = self.lower.copy()
        return out

    def is_finite(self):
        return bool(np.isfinite(self.diag).all() and np.isfinite(self.upper).all()
                    and np.isfinite(self.lower).all())

    def new_vector(self):
        return np.zeros((self.n_cells, self.n))

    def matvec(self, x):
        return block_matvec(self, x)

    def to_dense(self):
        n, nc = self.n, self.n_cells
        dense = np.zeros((nc * n, nc * n))
        for i in range(nc):
            dense[i * n:(i + 1) * n, i * n:(i + 1) * n] += self.diag[i]
        for f, (o, nb) in enumerate(zip(self.mesh.owner, self.mesh.neighbour)):
            dense[o * n:(o + 1) * n, nb * n:(nb + 1) * n] += self.upper[f]
            dense[nb * n:(nb + 1) * n, o * n:(o + 1) * n] += self.lower[f]
        return dense

    def dump(self, stream):
        """Write ``row col  b00 b01 ...`` per block, rows/cols in scalar coordinates."""
        n = self.n
        entries = [(i, i, self.diag[i]) for i in range(self.n_cells)]
        for f, (o, nb) in enumerate(zip(self.mesh.owner, self.mesh.neighbour)):
            entries.append((o, nb, self.upper[f]))
            entries.append((nb, o, self.lower[f]))
        entries.sort(key=lambda e: (e[0], e[1]))
        for r, c, blk in entries:
            stream.write(f"{r * n} {c * n}  " + " ".join(repr(float(v)) for v in blk.ravel()) + "\n")


def new_block_ldu(mesh: Mesh, variables: Sequence[Variable], vector_first=True) -> BlockLduMatrix:
    return BlockLduMatrix(mesh, variables, vector_first)


def as_block_vector(x, n_cells, n):
    x = np.asarray(x, dtype=float)
    if x.size != n_cells * n:
        raise ValueError(f"block vector has {x.size} entries, expected {n_cells} x {n}")
    return np.ascontiguousarray(x.reshape(n_cells, n))


def block_matvec(A: BlockLduMatrix, x) -> np.ndarray:
    """``y_i = A_ii x_i + sum_j A_ij x_j`` using the face addressing."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_cells, A.n):
        raise ValueError(f"vector shape {x.shape} does not match matrix ({A.n_cells}, {A.n})")
    y = np.empty_like(x)
    ad = A.addressing
    kernels.ldu_matvec(A.diag, A.upper, A.lower, ad.owner, ad.neighbour, ad.cell_ptr,
                       ad.ent_face, ad.ent_side, np.ascontiguousarray(x), y)
    return y
