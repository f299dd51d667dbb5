"""Block CSR engine: conversion, Krylov solvers, preconditioners and the staged solve pipeline."""

from .amg import AmgConfig, AmgHierarchy, amg_build, amg_vcycle
from .csr import BlockCsrMatrix, block_csr_to_ldu, ldu_to_aos, ldu_to_block_csr, replace_values
from .krylov import KrylovResult, bicgstab, gmres
from .pipeline import (SolvePipeline, SolveReport, SolverConfig, backend_solve_pipeline,
                       host_solve, make_preconditioner, solve)
from .precond import DILU, LUSGS, BlockJacobi, IdentityPreconditioner, LduLUSGS, \
    precondition_dilu, precondition_lusgs

__all__ = [
    "AmgConfig", "AmgHierarchy", "amg_build", "amg_vcycle",
    "BlockCsrMatrix", "block_csr_to_ldu", "ldu_to_aos", "ldu_to_block_csr", "replace_values",
    "KrylovResult", "bicgstab", "gmres",
    "SolvePipeline", "SolveReport", "SolverConfig", "backend_solve_pipeline", "host_solve",
    "make_preconditioner", "solve",
    "DILU", "LUSGS", "BlockJacobi", "IdentityPreconditioner", "LduLUSGS",
    "precondition_dilu", "precondition_lusgs",
]
