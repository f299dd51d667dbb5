"""Block-coupled implicit finite-volume solver kit."""

from .block_matrix import BlockLduMatrix, Variable, block_matvec, new_block_ldu, scalar, vector
from .mesh import Mesh, generate_1d_tube, generate_structured_2d, load_mesh, save_mesh

__version__ = "0.1.0"
