"""Minimal finite-volume mesh with OpenFOAM-style owner/neighbour addressing.

Internal faces always satisfy ``owner < neighbour`` and their area vector
points from owner to neighbour. Boundary faces are grouped in patches and
carry the outward area vector of their cell. Meshes are immutable once
built; every array is marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import MeshParseError, MeshValidationError

PATCH_KINDS = ("wall", "inlet", "outlet", "farfield", "slip", "symmetry")

_CLOSURE_TOL = 1e-12


class InternalFace(NamedTuple):
    owner: int
    neighbour: int
    area_vector: np.ndarray
    weight: float


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoundaryPatch:
    """A named set of boundary faces, each given by its cell and outward area vector."""

    name: str
    kind: str
    cells: np.ndarray
    area_vectors: np.ndarray

    def __post_init__(self):
        if self.kind not in PATCH_KINDS:
            raise MeshValidationError(f"patch {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "cells", _frozen(np.reshape(self.cells, -1), np.int64))
        object.__setattr__(self, "area_vectors", _frozen(np.reshape(self.area_vectors, (-1, 3))))
        if len(self.cells) != len(self.area_vectors):
            raise MeshValidationError(f"patch {self.name!r}: cells/area vectors length mismatch")

    @property
    def n_faces(self):
        return len(self.cells)

    @property
    def face_list(self):
        return list(zip(self.cells.tolist(), self.area_vectors))


class Mesh:
    """Cells, internal faces and boundary patches of a finite-volume mesh.

    Parameters
    ----------
    cell_volumes : (n,) array
    cell_centroids : (n, 3) array
    owner, neighbour : (m,) int arrays, ``owner < neighbour``
    area_vectors : (m, 3) array, pointing from owner to neighbour
    weights : (m,) array
        Linear interpolation weight of the owner value, ``0 < f_x < 1``.
    patches : iterable of BoundaryPatch
    """

    def __init__(self, cell_volumes, cell_centroids, owner, neighbour, area_vectors,
                 weights, patches: Iterable[BoundaryPatch] = ()):
        self.cell_volumes = _frozen(cell_volumes)
        self.cell_centroids = _frozen(np.reshape(cell_centroids, (-1, 3)))
        self.owner = _frozen(owner, np.int64)
        self.neighbour = _frozen(neighbour, np.int64)
        self.area_vectors = _frozen(np.reshape(area_vectors, (-1, 3)))
        self.weights = _frozen(weights)
        self.patches = tuple(patches)
        self.validate()
        self._derive()

    # -- invariants -------------------------------------------------------
    def validate(self):
        n = len(self.cell_volumes)
        m = len(self.owner)
        if len(self.cell_centroids) != n:
            raise MeshValidationError("cell centroid count differs from cell count")
        if not (len(self.neighbour) == m == len(self.area_vectors) == len(self.weights)):
            raise MeshValidationError("face arrays have inconsistent lengths")
        bad = np.flatnonzero(~(self.cell_volumes > 0))
        if bad.size:
            raise MeshValidationError(f"cell {bad[0]}: non-positive volume {self.cell_volumes[bad[0]]}")
        for name, arr in (("owner", self.owner), ("neighbour", self.neighbour)):
            bad = np.flatnonzero((arr < 0) | (arr >= n))
            if bad.size:
                raise MeshValidationError(f"face {bad[0]}: {name} {arr[bad[0]]} out of range [0, {n})")
        bad = np.flatnonzero(self.owner == self.neighbour)
        if bad.size:
            raise MeshValidationError(f"face {bad[0]}: owner equals neighbour ({self.owner[bad[0]]})")
        bad = np.flatnonzero(self.owner > self.neighbour)
        if bad.size:
            raise MeshValidationError(f"face {bad[0]}: owner {self.owner[bad[0]]} > neighbour {self.neighbour[bad[0]]}")
        bad = np.flatnonzero(~((self.weights > 0) & (self.weights < 1)))
        if bad.size:
            raise MeshValidationError(f"face {bad[0]}: interpolation weight {self.weights[bad[0]]} outside (0, 1)")
        seen = set()
        for patch in self.patches:
            if patch.n_faces and (patch.cells.min() < 0 or patch.cells.max() >= n):
                raise MeshValidationError(f"patch {patch.name!r}: cell index out of range")
            for c, s in zip(patch.cells.tolist(), patch.area_vectors):
                key = (c, *s.tolist())
                if key in seen:
                    raise MeshValidationError(f"boundary face of cell {c} listed in more than one patch")
                seen.add(key)
        total, mag = self._closure_sums()
        defect = np.linalg.norm(total, axis=1)
        bad = np.flatnonzero(defect > _CLOSURE_TOL * mag)
        if bad.size:
            c = bad[0]
            raise MeshValidationError(
                f"cell {c}: face area vectors do not close (|sum| = {defect[c]:.3e})")

    def _closure_sums(self):
        n = len(self.cell_volumes)
        total = np.zeros((n, 3))
        mag = np.zeros(n)
        amag = np.linalg.norm(self.area_vectors, axis=1)
        np.add.at(total, self.owner, self.area_vectors)
        np.add.at(total, self.neighbour, -self.area_vectors)
        np.add.at(mag, self.owner, amag)
        np.add.at(mag, self.neighbour, amag)
        for patch in self.patches:
            np.add.at(total, patch.cells, patch.area_vectors)
            np.add.at(mag, patch.cells, np.linalg.norm(patch.area_vectors, axis=1))
        return total, mag

    def closure_defects(self):
        """Per-cell signed sum of outward area vectors, shape (n, 3)."""
        return self._closure_sums()[0]

    # -- derived geometry -------------------------------------------------
    def _derive(self):
        c = self.cell_centroids
        self.face_areas = _frozen(np.linalg.norm(self.area_vectors, axis=1))
        self.face_normals = _frozen(self.area_vectors / self.face_areas[:, None])
        self.deltas = _frozen(c[self.neighbour] - c[self.owner])
        w = self.weights[:, None]
        # exact for the orthogonal meshes this package targets
        self.face_centres = _frozen(w * c[self.owner] + (1.0 - w) * c[self.neighbour])
        self.boundary_centres = {}
        for p in self.patches:
            area = np.linalg.norm(p.area_vectors, axis=1)
            half = self.cell_volumes[p.cells] / (2.0 * area)
            self.boundary_centres[p.name] = _frozen(
                c[p.cells] + half[:, None] * p.area_vectors / area[:, None])

    @property
    def n_cells(self):
        return len(self.cell_volumes)

    @property
    def n_faces(self):
        return len(self.owner)

    @property
    def n_boundary_faces(self):
        return sum(p.n_faces for p in self.patches)

    @property
    def faces(self):
        return [InternalFace(int(o), int(n), s, float(w)) for o, n, s, w in
                zip(self.owner, self.neighbour, self.area_vectors, self.weights)]

    def patch(self, name) -> BoundaryPatch:
        for p in self.patches:
            if p.name == name:
                return p
        raise KeyError(name)

    def is_upper_triangular_order(self):
        key = self.owner * (self.n_cells + 1) + self.neighbour
        return bool(np.all(np.diff(key) > 0))

    def same_topology(self, other: "Mesh"):
        return (self.n_cells == other.n_cells and self.n_faces == other.n_faces
                and np.array_equal(self.owner, other.owner)
                and np.array_equal(self.neighbour, other.neighbour))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        if not self.same_topology(other) or len(self.patches) != len(other.patches):
            return False
        arrays = ("cell_volumes", "cell_centroids", "area_vectors", "weights")
        if not all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays):
            return False
        for p, q in zip(self.patches, other.patches):
            if (p.name, p.kind) != (q.name, q.kind) or not np.array_equal(p.cells, q.cells) \
                    or not np.array_equal(p.area_vectors, q.area_vectors):
                return False
        return True

    __hash__ = None

    def __repr__(self):
        return (f"Mesh(n_cells={self.n_cells}, n_faces={self.n_faces}, "
                f"patches={[p.name for p in self.patches]})")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def generate_structured_2d(nx, ny, lengths, patch_kinds: Mapping[str, str] | None = None) -> Mesh:
    """Uniform quad mesh of ``nx * ny`` cells, extruded one cell deep.

    Cell ``(i, j)`` has index ``i + nx * j``. ``lengths`` is ``[Lx, Ly]`` or
    ``[Lx, Ly, Lz]`` (depth defaults to 1 m). The front and back faces are not
    stored; the four side patches are ``left``, ``right``, ``bottom`` and
    ``top``, all walls unless ``patch_kinds`` says otherwise.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    lengths = [float(v) for v in lengths]
    if len(lengths) == 2:
        lengths.append(1.0)
    if len(lengths) != 3 or min(lengths) <= 0:
        raise ValueError(f"lengths must be two or three positive values, got {lengths}")
    nx, ny = int(nx), int(ny)
    lx, ly, lz = lengths
    dx, dy = lx / nx, ly / ny
    kinds = {"left": "wall", "right": "wall", "bottom": "wall", "top": "wall"}
    kinds.update(patch_kinds or {})

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    n = nx * ny
    centroids = np.column_stack([(i + 0.5) * dx, (j + 0.5) * dy, np.full(n, 0.5 * lz)])
    volumes = np.full(n, dx * dy * lz)

    owner, neighbour, svec = [], [], []
    sx = np.array([dy * lz, 0.0, 0.0])
    sy = np.array([0.0, dx * lz, 0.0])
    for c in range(n):
        ci, cj = c % nx, c // nx
        if ci < nx - 1:
            owner.append(c); neighbour.append(c + 1); svec.append(sx)
        if cj < ny - 1:
            owner.append(c); neighbour.append(c + nx); svec.append(sy)
    m = len(owner)
    svec = np.array(svec).reshape(m, 3)

    cells = np.arange(n)
    left = cells[i == 0]
    right = cells[i == nx - 1]
    bottom = cells[j == 0]
    top = cells[j == ny - 1]
    patches = [
        BoundaryPatch("left", kinds["left"], left, np.tile(-sx, (len(left), 1))),
        BoundaryPatch("right", kinds["right"], right, np.tile(sx, (len(right), 1))),
        BoundaryPatch("bottom", kinds["bottom"], bottom, np.tile(-sy, (len(bottom), 1))),
        BoundaryPatch("top", kinds["top"], top, np.tile(sy, (len(top), 1))),
    ]
    return Mesh(volumes, centroids, owner, neighbour, svec, np.full(m, 0.5), patches)


def generate_1d_tube(n, length, left="farfield", right="farfield") -> Mesh:
    """Row of ``n`` cells with 1 m^2 cross-section and slip side walls."""
    if int(n) != n or n < 2:
        raise ValueError(f"a tube needs at least 2 cells, got {n}")
    if length <= 0:
        raise ValueError(f"tube length must be positive, got {length}")
    return generate_structured_2d(int(n), 1, [length, 1.0, 1.0],
                                  {"left": left, "right": right, "bottom": "slip", "top": "slip"})


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

HEADER = "blockmesh v1"


def _fmt(x):
    return repr(float(x))


def save_mesh(mesh: Mesh, path):
    lines = [HEADER, f"cells {mesh.n_cells}"]
    for v, c in zip(mesh.cell_volumes, mesh.cell_centroids):
        lines.append(" ".join(map(_fmt, (v, *c))))
    lines.append(f"faces {mesh.n_faces}")
    for o, nb, s, w in zip(mesh.owner, mesh.neighbour, mesh.area_vectors, mesh.weights):
        lines.append(f"{o} {nb} " + " ".join(map(_fmt, (*s, w))))
    for p in mesh.patches:
        lines.append(f"patch {p.name} {p.kind} {p.n_faces}")
        for c, s in zip(p.cells, p.area_vectors):
            lines.append(f"{c} " + " ".join(map(_fmt, s)))
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split()
        if line:
            yield lineno, line


def _numbers(tokens, lineno, kinds):
    if len(tokens) != len(kinds):
        raise MeshParseError(f"expected {len(kinds)} fields, found {len(tokens)}", lineno)
    try:
        return [k(t) for k, t in zip(kinds, tokens)]
    except ValueError as exc:
        raise MeshParseError(str(exc), lineno) from None


def _section(it, keyword, nfields):
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise MeshParseError(f"unexpected end of file, expected '{keyword}'") from None
    if tok[0] != keyword or len(tok) != nfields:
        raise MeshParseError(f"expected '{keyword}' section header, found {' '.join(tok)!r}", lineno)
    return lineno, tok


def _count(tok, lineno):
    try:
        k = int(tok)
    except ValueError:
        raise MeshParseError(f"invalid count {tok!r}", lineno) from None
    if k < 0:
        raise MeshParseError(f"negative count {k}", lineno)
    return k


def _rows(it, count, kinds, what):
    out = []
    for _ in range(count):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file while reading {what}") from None
        out.append(_numbers(tok, lineno, kinds))
    return out


def load_mesh(path) -> Mesh:
    """Read a mesh in the ``blockmesh v1`` text format and check its invariants.

    Faces given with ``owner > neighbour`` are flipped (area vector negated,
    weight complemented) and faces are sorted into upper-triangular order.
    """
    it = _tokens(Path(path).read_text())
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise MeshParseError("empty mesh file") from None
    if " ".join(tok) != HEADER:
        raise MeshParseError(f"expected header {HEADER!r}", lineno)

    lineno, tok = _section(it, "cells", 2)
    ncells = _count(tok[1], lineno)
    cells = np.array(_rows(it, ncells, [float] * 4, "cells"), dtype=float).reshape(ncells, 4)

    lineno, tok = _section(it, "faces", 2)
    nfaces = _count(tok[1], lineno)
    faces = _rows(it, nfaces, [int, int, float, float, float, float], "faces")
    owner = np.array([f[0] for f in faces], dtype=np.int64)
    neighbour = np.array([f[1] for f in faces], dtype=np.int64)
    svec = np.array([f[2:5] for f in faces], dtype=float).reshape(nfaces, 3)
    weights = np.array([f[5] for f in faces], dtype=float)

    patches = []
    for lineno, tok in it:
        if tok[0] != "patch" or len(tok) != 4:
            raise MeshParseError(f"expected 'patch <name> <kind> <count>', found {' '.join(tok)!r}", lineno)
        _, name, kind, k = tok
        if kind not in PATCH_KINDS:
            raise MeshParseError(f"unknown patch kind {kind!r}", lineno)
        rows = _rows(it, _count(k, lineno), [int, float, float, float], f"patch {name}")
        patches.append(BoundaryPatch(name, kind, [r[0] for r in rows],
                                     np.array([r[1:] for r in rows], dtype=float).reshape(-1, 3)))

    flip = owner > neighbour
    owner[flip], neighbour[flip] = neighbour[flip], owner[flip].copy()
    svec[flip] *= -1.0
    weights[flip] = 1.0 - weights[flip]
    order = np.lexsort((neighbour, owner))
    return Mesh(cells[:, 0], cells[:, 1:], owner[order], neighbour[order], svec[order],
                weights[order], patches)
