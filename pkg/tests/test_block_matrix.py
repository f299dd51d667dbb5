import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockcfd import BlockLduMatrix, Variable, block_matvec, generate_structured_2d, new_block_ldu, scalar, vector
from tests.oracles.dense import dense_of, random_ldu


@pytest.fixture
def two_cells():
    return generate_structured_2d(2, 1, [2, 1])


def test_counts_for_velocity_pressure(two_cells):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    assert A.n == 4
    assert A.diag.shape == (2, 4, 4)
    assert A.upper.shape == A.lower.shape == (1, 4, 4)
    assert not A.diag.any()


def test_scalar_degenerate_case(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    assert A.n == 1


def test_density_layout_keeps_declaration_order():
    m = generate_structured_2d(3, 3, [1, 1])
    A = new_block_ldu(m, [scalar("rho"), vector("rhoU"), scalar("rhoE")], vector_first=False)
    assert A.n == 5
    assert A.upper.shape[0] == A.lower.shape[0] == 12
    assert A.offsets == {"rho": 0, "rhoU": 1, "rhoE": 4}


def test_vector_variables_come_first(two_cells):
    A = new_block_ldu(two_cells, [scalar("p"), vector("u")])
    assert [v.name for v in A.variables] == ["u", "p"]


def test_empty_variable_list_rejected(two_cells):
    with pytest.raises(ValueError):
        new_block_ldu(two_cells, [])


def test_bad_variable_size():
    with pytest.raises(ValueError):
        Variable("w", 2)


def test_face_contribution_accumulates(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    eye, zero = np.eye(1), np.zeros((1, 1))
    A.add_face_contribution(0, eye, zero, zero, zero)
    A.add_face_contribution(0, eye, zero, zero, zero)
    assert A.diag[0, 0, 0] == 2.0
    before = A.to_dense().copy()
    A.add_face_contribution(0, zero, zero, zero, zero)
    np.testing.assert_array_equal(A.to_dense(), before)


def test_face_index_out_of_range(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    z = np.zeros((1, 1))
    with pytest.raises(ValueError):
        A.add_face_contribution(1, z, z, z, z)
    with pytest.raises(ValueError):
        A.add_face_contribution(0, np.zeros((2, 2)), z, z, z)


def test_two_cell_matvec(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    A.diag[:, 0, 0] = [2.0, 3.0]
    A.upper[0, 0, 0] = 1.0
    A.lower[0, 0, 0] = 4.0
    np.testing.assert_array_equal(block_matvec(A, np.ones((2, 1))).ravel(), [3.0, 7.0])


def test_identity_matvec(two_cells, rng):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    A.diag[:] = np.eye(4)
    x = rng.standard_normal((2, 4))
    np.testing.assert_array_equal(A.matvec(x), x)


def test_random_matvec_matches_dense(rng):
    m = generate_structured_2d(3, 3, [1, 1])
    A = random_ldu(m, 4, rng)
    x = rng.standard_normal((9, 4))
    y = block_matvec(A, x)
    assert np.abs(y.ravel() - dense_of(A) @ x.ravel()).max() < 1e-13


def test_matvec_size_mismatch(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    with pytest.raises(ValueError):
        A.matvec(np.ones((3, 1)))


def test_velocity_pressure_view_layout(two_cells):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    v = A.view("u", "p")
    assert A.sub_block(v, 0).shape == (3, 1)
    A.sub_block(v, 0)[:] = 7.0
    np.testing.assert_array_equal(A.diag[0, 0:3, 3], 7.0)


def test_pp_write_touches_only_its_entry(two_cells):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    A.sub_block(A.view("p", "p"), 1, "upper" if False else "diag")[:] = 5.0
    expected = np.zeros((4, 4))
    expected[3, 3] = 5.0
    np.testing.assert_array_equal(A.diag[1], expected)
    assert not A.diag[0].any()


def test_views_tile_the_block(two_cells):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    hits = np.zeros((4, 4), int)
    for k, v in enumerate(A.views(), start=1):
        A.sub_block(v, 0, "upper")[:] = k
        hits[v.rows, v.cols] += 1
    assert np.all(hits == 1)
    assert np.all(A.upper[0] > 0)


def test_sub_block_errors(two_cells):
    A = new_block_ldu(two_cells, [vector("u"), scalar("p")])
    with pytest.raises(ValueError):
        A.sub_block(A.view("u", "p"), 5)
    with pytest.raises(ValueError):
        A.sub_block(A.view("u", "p"), 0, "middle")
    small = new_block_ldu(two_cells, [scalar("T")])
    with pytest.raises(ValueError):
        small.sub_block(A.view("u", "p"), 0)


def test_dump_format(two_cells):
    A = new_block_ldu(two_cells, [scalar("T")])
    A.diag[:, 0, 0] = [2.0, 3.0]
    A.upper[0, 0, 0] = 1.0
    A.lower[0, 0, 0] = 4.0
    buf = io.StringIO()
    A.dump(buf)
    assert buf.getvalue().splitlines() == ["0 0  2.0", "0 1  1.0", "1 0  4.0", "1 1  3.0"]


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 8), ny=st.integers(1, 8), n=st.sampled_from([1, 2, 4, 5]),
       seed=st.integers(0, 2**32 - 1))
def test_matvec_equals_dense_property(nx, ny, n, seed):
    rng = np.random.default_rng(seed)
    A = random_ldu(generate_structured_2d(nx, ny, [1, 1]), n, rng)
    x = rng.standard_normal((A.n_cells, n))
    y = dense_of(A) @ x.ravel()
    assert np.abs(block_matvec(A, x).ravel() - y).max() <= 1e-13 * max(1.0, np.abs(y).max())


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_accumulation_order_independent(seed):
    rng = np.random.default_rng(seed)
    m = generate_structured_2d(3, 2, [1, 1])
    contribs = [(f, *rng.standard_normal((4, 2, 2))) for f in range(m.n_faces) for _ in range(3)]
    mats = []
    for order in (contribs, contribs[::-1], [contribs[i] for i in rng.permutation(len(contribs))]):
        A = BlockLduMatrix(m, [Variable("a"), Variable("b")])
        for c in order:
            A.add_face_contribution(*c)
        mats.append(A.to_dense())
    scale = np.abs(mats[0]).max()
    for M in mats[1:]:
        assert np.abs(M - mats[0]).max() <= 1e-14 * scale * 4
