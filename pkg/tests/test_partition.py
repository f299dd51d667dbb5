import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockcfd import block_matvec, generate_1d_tube, generate_structured_2d
from blockcfd.engine import SolvePipeline, SolverConfig, ldu_to_block_csr
from blockcfd.errors import DistributedError
from blockcfd.partition import (ConsolidationPlan, DistributedPipeline, Harness, allreduce_sum,
                                build_partitioned, consolidate, decompose, distributed_matvec,
                                distributed_solve, make_plan, partition_report)
from tests.conftest import sod_setup
from tests.oracles.dense import random_ldu


def crossing_faces(mesh, dec, rank):
    """Faces with exactly one side on ``rank``, counted by brute force."""
    r = dec.cell_to_rank
    return sum(1 for o, nb in zip(mesh.owner, mesh.neighbour)
               if (r[o] == rank) != (r[nb] == rank))


def serial_in_new_order(A, dec, x):
    return block_matvec(A, x)[dec.order]


def test_three_by_three_three_ranks_layout():
    mesh = generate_structured_2d(3, 3, [1, 1])
    dec = decompose(mesh, 3)
    np.testing.assert_array_equal(dec.row_offsets, [0, 3, 6, 9])
    assert sorted(np.bincount(dec.cell_to_rank).tolist()) == [3, 3, 3]
    for r in range(3):
        assert list(dec.local_to_global_row[r]) == list(dec.rows(r))


def test_single_rank_is_identity():
    mesh = generate_structured_2d(4, 3, [1, 1])
    dec = decompose(mesh, 1)
    np.testing.assert_array_equal(dec.order, np.arange(12))
    np.testing.assert_array_equal(dec.new_index, np.arange(12))


def test_tube_blocks_of_25():
    dec = decompose(generate_1d_tube(100, 1.0), 4)
    for r in range(4):
        np.testing.assert_array_equal(np.flatnonzero(dec.cell_to_rank == r),
                                      np.arange(25 * r, 25 * (r + 1)))


def test_too_many_ranks():
    with pytest.raises(ValueError):
        decompose(generate_structured_2d(2, 1, [1, 1]), 3)
    with pytest.raises(ValueError):
        decompose(generate_structured_2d(2, 1, [1, 1]), 0)


def test_scatter_gather_round_trip(rng):
    mesh = generate_structured_2d(5, 4, [1, 1])
    dec = decompose(mesh, 3)
    x = rng.standard_normal((20, 2))
    np.testing.assert_array_equal(dec.gather(dec.scatter(x)), x)


def test_serial_halo_is_empty(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    parts = build_partitioned(random_ldu(mesh, 2, rng), decompose(mesh, 1))
    assert len(parts) == 1 and parts[0].halo.n_external_nz == 0


def test_halo_counts_three_by_three(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    dec = decompose(mesh, 3)
    parts = build_partitioned(random_ldu(mesh, 4, rng), dec)
    for r, p in enumerate(parts):
        assert p.halo.n_external_nz == crossing_faces(mesh, dec, r)
        lo, hi = p.row_range
        assert np.all((p.halo.global_cols < lo) | (p.halo.global_cols >= hi))
    # a row of nine cells gives strips, so the middle rank sees one face on each side
    line = generate_structured_2d(9, 1, [1, 1])
    strips = build_partitioned(random_ldu(line, 1, rng), decompose(line, 3))
    assert [p.halo.n_external_nz for p in strips] == [1, 2, 1]


def test_two_cells_two_ranks(rng):
    mesh = generate_structured_2d(2, 1, [2, 1])
    parts = build_partitioned(random_ldu(mesh, 3, rng), decompose(mesh, 2))
    for p in parts:
        assert p.local.nnz == 1 and p.halo.n_external_nz == 1


def test_value_conservation(rng):
    mesh = generate_structured_2d(6, 5, [1, 1])
    A = random_ldu(mesh, 2, rng)
    parts = build_partitioned(A, decompose(mesh, 4))
    got = np.concatenate([np.concatenate([p.local.values.ravel(), p.halo.blocks.ravel()])
                          for p in parts])
    src = np.concatenate([A.diag.ravel(), A.upper.ravel(), A.lower.ravel()])
    assert np.array_equal(np.sort(got), np.sort(src))
    rows = np.concatenate([np.arange(*p.row_range) for p in parts])
    np.testing.assert_array_equal(rows, np.arange(30))


def test_matvec_one_rank_bit_identical(rng):
    mesh = generate_structured_2d(4, 4, [1, 1])
    A = random_ldu(mesh, 3, rng)
    dec = decompose(mesh, 1)
    x = rng.standard_normal((16, 3))
    y = distributed_matvec(build_partitioned(A, dec), dec.scatter(x))
    assert np.array_equal(dec.gather(y), block_matvec(A, x))


def test_matvec_three_ranks(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    A = random_ldu(mesh, 4, rng)
    dec = decompose(mesh, 3)
    x = rng.standard_normal((9, 4))
    y = dec.gather(distributed_matvec(build_partitioned(A, dec), dec.scatter(x)))
    ref = block_matvec(A, x)
    assert np.abs(y - ref).max() <= 1e-13 * np.abs(ref).max()


def test_zeroed_halo_removes_exactly_the_halo_term(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    A = random_ldu(mesh, 2, rng)
    dec = decompose(mesh, 3)
    parts = build_partitioned(A, dec)
    x = rng.standard_normal((9, 2))
    xp = dec.scatter(x)
    y = distributed_matvec(parts, xp, fault=np.zeros_like)
    xg = x[dec.order]
    for p, yr in zip(parts, y):
        np.testing.assert_allclose(yr, p.local.matvec(xp[p.rank]), rtol=0, atol=1e-14)
        full = block_matvec(A, x)[dec.order][slice(*p.row_range)]
        halo = np.zeros_like(yr)
        for lr, gc, blk in zip(p.halo.local_rows, p.halo.global_cols, p.halo.blocks):
            halo[lr] += blk @ xg[gc]
        np.testing.assert_allclose(full - yr, halo, atol=1e-13)


def test_missing_peer_message_names_ranks():
    def program(ctx):
        if ctx.rank == 1:
            return ctx.recv(0, "never")
        return None

    with pytest.raises(DistributedError) as info:
        Harness(2).run(program)
    assert info.value.waiting == [1] and info.value.peers == [0]
    with pytest.raises(DistributedError):
        Harness(2, "threaded", timeout=0.2).run(program)


def test_allreduce_is_reproducible():
    vals = [0.1, 0.2, 0.3, 1e16, -1e16, 0.7]

    def program(ctx):
        return allreduce_sum(ctx, vals[ctx.rank])

    a = Harness(6).run(program)
    b = Harness(6, "threaded").run(program)
    assert len(set(a)) == 1 and a == b


def test_consolidation_identity(rng):
    mesh = generate_structured_2d(4, 3, [1, 1])
    dec = decompose(mesh, 3)
    parts = build_partitioned(random_ldu(mesh, 2, rng), dec)
    engines = consolidate(parts, make_plan(dec, 3))
    for p, e in zip(parts, engines):
        assert np.array_equal(e.local.values, p.local.values)
        assert np.array_equal(e.local.col_indices, p.local.col_indices)
        assert e.halo.n_external_nz == p.halo.n_external_nz


def test_consolidation_to_one_engine_equals_serial(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    A = random_ldu(mesh, 4, rng)
    dec = decompose(mesh, 3)
    [eng] = consolidate(build_partitioned(A, dec), make_plan(dec, 1))
    serial = ldu_to_block_csr(A).to_dense()
    n = 4
    perm = (dec.order[:, None] * n + np.arange(n)).ravel()
    assert np.array_equal(eng.local.to_dense(), serial[np.ix_(perm, perm)])
    assert eng.halo.n_external_nz == 0
    assert eng.local.nnz == 33


def test_four_ranks_two_engines_cross_count(rng):
    mesh = generate_structured_2d(4, 4, [1, 1])
    A = random_ldu(mesh, 1, rng)
    dec = decompose(mesh, 4)
    plan = make_plan(dec, 2)
    engines = consolidate(build_partitioned(A, dec), plan)
    engine_of_cell = plan.rank_to_engine[dec.cell_to_rank]
    for e in engines:
        cross = sum(1 for o, nb in zip(mesh.owner, mesh.neighbour)
                    if (engine_of_cell[o] == e.engine) != (engine_of_cell[nb] == e.engine))
        assert e.halo.n_external_nz == cross


def test_plan_validation():
    dec = decompose(generate_structured_2d(3, 3, [1, 1]), 3)
    with pytest.raises(ValueError):
        make_plan(dec, 4)
    bad = ConsolidationPlan(1, np.zeros(3, np.int64), np.array([0, 0, 3]))
    with pytest.raises(ValueError):
        bad.validate(dec)
    with pytest.raises(ValueError):
        ConsolidationPlan(1, np.zeros(2, np.int64), np.zeros(2, np.int64)).validate(dec)


def test_solve_one_rank_matches_serial(rng):
    mesh = generate_structured_2d(5, 5, [1, 1])
    A = random_ldu(mesh, 2, rng, dominance=6.0)
    b = rng.standard_normal((25, 2))
    cfg = SolverConfig(rel_tol=1e-12)
    xs, rs = SolvePipeline().solve(A, b, np.zeros_like(b), "engine", cfg)
    xd, rd = DistributedPipeline(1).solve(A, b, np.zeros_like(b), "engine", cfg)
    assert rd.iterations == rs.iterations
    assert np.abs(xd - xs).max() <= 1e-12 * np.abs(xs).max()


def test_solve_three_ranks_one_engine(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    A = random_ldu(mesh, 4, rng, dominance=8.0)
    b = rng.standard_normal((9, 4))
    cfg = SolverConfig(rel_tol=1e-12, abs_tol=1e-30)
    xs, _ = SolvePipeline().solve(A, b, np.zeros_like(b), "engine", cfg)
    xd, _ = DistributedPipeline(3, 1).solve(A, b, np.zeros_like(b), "engine", cfg)
    assert np.abs(xd - xs).max() < 1e-9


def test_sod_four_ranks_two_engines():
    disc, Q = sod_setup()
    A, R, _ = disc.assemble(Q, 10.0)
    cfg = SolverConfig(rel_tol=1e-8, abs_tol=1e-30)
    xs, rs = SolvePipeline().solve(A, R, np.zeros_like(R), "engine", cfg)
    pipe = DistributedPipeline(4, 2)
    xd, rd = pipe.solve(A, R, np.zeros_like(R), "engine", cfg)
    assert rd.converged
    true_res = np.linalg.norm(R - block_matvec(A, xd))
    assert true_res <= 10 * max(rs.final_residual, 1e-300) or true_res <= 1e-8 * rs.initial_residual
    assert np.linalg.norm(xd - xs) <= 1e-6 * np.linalg.norm(xs)
    # second call with the same topology only refreshes values
    _, again = pipe.solve(A, R, np.zeros_like(R), "engine", cfg)
    assert again.timings["setup"] == 0 and again.timings["replace"] > 0


def test_partition_report_fields(rng):
    mesh = generate_structured_2d(3, 3, [1, 1])
    dec = decompose(mesh, 3)
    parts = build_partitioned(random_ldu(mesh, 1, rng), dec)
    plan = make_plan(dec, 1)
    rep = partition_report(dec, parts, plan, consolidate(parts, plan))
    assert rep["nRanks"] == 3 and rep["nEngines"] == 1
    assert [r["nRows"] for r in rep["ranks"]] == [3, 3, 3]
    assert [r["nExternalNZ"] for r in rep["ranks"]] == [crossing_faces(mesh, dec, r) for r in range(3)]
    assert rep["engines"][0]["nExternalNZ"] == 0


def test_deterministic_schedule(rng):
    mesh = generate_structured_2d(4, 4, [1, 1])
    A = random_ldu(mesh, 2, rng)
    dec = decompose(mesh, 4)
    parts = build_partitioned(A, dec)
    x = dec.scatter(rng.standard_normal((16, 2)))
    logs = []
    for _ in range(2):
        h = Harness(4)
        distributed_matvec(parts, x, h)
        logs.append(h.log)
    assert logs[0] == logs[1] and logs[0]
    assert np.array_equal(decompose(mesh, 4).cell_to_rank, dec.cell_to_rank)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(2, 12), ny=st.integers(1, 12), n_ranks=st.sampled_from([1, 2, 3, 4, 8]),
       n=st.sampled_from([1, 2, 5]), seed=st.integers(0, 2**32 - 1))
def test_distributed_matvec_property(nx, ny, n_ranks, n, seed):
    mesh = generate_structured_2d(nx, ny, [1.3, 0.7])
    if n_ranks > mesh.n_cells:
        n_ranks = mesh.n_cells
    rng = np.random.default_rng(seed)
    A = random_ldu(mesh, n, rng)
    dec = decompose(mesh, n_ranks)
    x = rng.standard_normal((mesh.n_cells, n))
    parts = build_partitioned(A, dec)
    y = dec.gather(distributed_matvec(parts, dec.scatter(x)))
    ref = block_matvec(A, x)
    assert np.abs(y - ref).max() <= 1e-13 * max(1.0, np.abs(ref).max())
    owned = np.concatenate([np.arange(*p.row_range) for p in parts])
    np.testing.assert_array_equal(owned, np.arange(mesh.n_cells))


def test_consolidated_solve_matches_exchange_solve(rng):
    mesh = generate_structured_2d(4, 2, [1, 1])
    A = random_ldu(mesh, 2, rng, dominance=6.0)
    dec = decompose(mesh, 2)
    parts = build_partitioned(A, dec)
    b = dec.scatter(rng.standard_normal((8, 2)))
    x0 = [np.zeros_like(p) for p in b]
    cfg = SolverConfig(rel_tol=1e-12, preconditioner="none")
    xa, _ = distributed_solve(parts, b, x0, cfg)
    xb, _ = distributed_solve(parts, b, x0, cfg, make_plan(dec, 1))
    assert np.abs(np.concatenate(xa) - np.concatenate(xb)).max() < 1e-9
