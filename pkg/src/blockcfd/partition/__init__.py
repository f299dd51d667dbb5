"""Decomposition, halo coefficients, consolidation and simulated ranks."""

from .decompose import (ConsolidationPlan, Decomposition, HaloCoefficients, RankPartition,
                        build_partitioned, decompose, make_plan)
from .distributed import (DistributedPipeline, EnginePartition, HaloExchange, consolidate,
                          distributed_matvec, distributed_solve, partition_report)
from .harness import Harness, RankContext, allreduce_sum

__all__ = [
    "ConsolidationPlan", "Decomposition", "HaloCoefficients", "RankPartition",
    "build_partitioned", "decompose", "make_plan",
    "DistributedPipeline", "EnginePartition", "HaloExchange", "consolidate",
    "distributed_matvec", "distributed_solve", "partition_report",
    "Harness", "RankContext", "allreduce_sum",
]
