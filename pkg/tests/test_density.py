import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockcfd import generate_1d_tube, generate_structured_2d
from blockcfd.density import (DensityDiscretization, GasModel, PseudoTimeControl, barth_jespersen,
                              euler_flux, explicit_march, flux_jacobian, hllc_flux, implicit_step,
                              make_boundaries, muscl_reconstruct, numerical_flux, roe_flux,
                              rusanov_flux, uniform_state)
from blockcfd.engine import SolvePipeline, SolverConfig
from blockcfd.errors import ConfigError, NonPhysicalStateError, SolverDivergedError
from tests.conftest import sod_setup
from tests.oracles.dense import dense_of, fd_jacobian
from tests.oracles import textbook_flux
from tests.oracles.exact_riemann import godunov_flux, solution

GAS = GasModel()
X = np.array([1.0, 0.0, 0.0])


def prim(rho, u, p, v=0.0, w=0.0):
    return np.array([rho, u, v, w, p], float)


def random_states(rng, m):
    W = np.empty((m, 5))
    W[:, 0] = rng.uniform(0.2, 2.0, m)
    W[:, 1:4] = rng.uniform(-1.5, 1.5, (m, 3))
    W[:, 4] = rng.uniform(0.2, 2.0, m)
    return W


def to_flux_vector(F):
    """Collapse a 1-D flux (x normal, zero transverse velocity) to mass, momentum, energy."""
    return np.array([F[0], F[1], F[4]])


# -- gas ------------------------------------------------------------------------------
def test_primitive_round_trip(rng):
    W = random_states(rng, 20)
    np.testing.assert_allclose(GAS.to_primitive(GAS.to_conservative(W)), W, rtol=1e-14, atol=1e-14)


def test_gas_validation():
    with pytest.raises(ValueError):
        GasModel(gamma=1.0)
    with pytest.raises(ValueError):
        GasModel(R=0.0)


def test_flux_jacobian_matches_fd(rng):
    for W in random_states(rng, 5):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        J = flux_jacobian(W, n, GAS)
        fd = fd_jacobian(lambda q: euler_flux(GAS.to_primitive(q), n, GAS), GAS.to_conservative(W))
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-7)


# -- Riemann solvers ---------------------------------------------------------------
@pytest.mark.parametrize("name", ["roe", "hllc", "rusanov"])
def test_consistency(name, rng):
    W = random_states(rng, 50)
    n = rng.standard_normal((50, 3))
    n /= np.linalg.norm(n, axis=1)[:, None]
    F = numerical_flux(name, W, W, n, GAS)
    ref = euler_flux(W, n, GAS)
    assert np.abs(F - ref).max() <= 1e-13 * np.abs(ref).max()


@pytest.mark.parametrize("flux", [roe_flux, hllc_flux])
def test_supersonic_full_upwinding(flux):
    L, R = prim(1.0, -3.0, 1.0), prim(0.8, -2.9, 0.9)
    np.testing.assert_allclose(flux(L, R, X, GAS), euler_flux(R, X, GAS), rtol=1e-13)
    np.testing.assert_allclose(flux(R[::1] * [1, -1, 1, 1, 1], L * [1, -1, 1, 1, 1], X, GAS),
                               euler_flux(R * [1, -1, 1, 1, 1], X, GAS), rtol=1e-13)


SOD_STATES = [((1.0, 0.0, 1.0), (0.125, 0.0, 0.1)), ((0.125, 0.0, 0.1), (1.0, 0.0, 1.0)),
              ((1.0, 0.75, 1.0), (0.125, 0.0, 0.1)), ((1.0, -2.0, 0.4), (1.0, 2.0, 0.4))]


@pytest.mark.parametrize("flux, oracle", [(roe_flux, textbook_flux.roe), (hllc_flux, textbook_flux.hllc)])
@pytest.mark.parametrize("left, right", SOD_STATES)
def test_flux_matches_textbook_formula(flux, oracle, left, right):
    got = to_flux_vector(flux(prim(*left), prim(*right), X, GAS))
    np.testing.assert_allclose(got, oracle(left, right), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("flux, bound", [(roe_flux, 0.2), (hllc_flux, 0.3)])
def test_sod_flux_near_godunov(flux, bound):
    # Approximate solvers at the raw Sod interface miss the exact flux by up to 18% (Roe) and
    # 27% (HLLC) in the momentum component; the bounds pin that measured behaviour.
    ref = godunov_flux((1.0, 0.0, 1.0), (0.125, 0.0, 0.1))
    got = to_flux_vector(flux(prim(1.0, 0.0, 1.0), prim(0.125, 0.0, 0.1), X, GAS))
    rel = np.abs(got - ref) / np.abs(ref)
    assert rel.max() <= bound
    assert rel[0] <= 0.1


def test_hllc_resolves_contact():
    for u in (0.4, -0.4):
        L, R = prim(1.0, u, 1.0), prim(0.2, u, 1.0)
        F = hllc_flux(L, R, X, GAS)
        up = L if u > 0 else R
        np.testing.assert_allclose(F, euler_flux(up, X, GAS), rtol=1e-13)
        assert F[0] == pytest.approx(up[0] * u, rel=1e-13)


def test_rusanov_frozen_lambda():
    L, R = prim(1.0, 0.2, 1.0), prim(0.5, 0.1, 0.4)
    F = rusanov_flux(L, R, X, GAS, lam=2.0)
    ref = 0.5 * (euler_flux(L, X, GAS) + euler_flux(R, X, GAS)) \
        - (GAS.to_conservative(R) - GAS.to_conservative(L))
    np.testing.assert_allclose(F, ref, rtol=1e-14)


def test_unknown_flux():
    with pytest.raises(ValueError):
        numerical_flux("ausm", prim(1, 0, 1), prim(1, 0, 1), X, GAS)


# -- MUSCL ------------------------------------------------------------------------------
def test_uniform_field_reconstruction():
    m = generate_structured_2d(4, 3, [1, 1])
    W = np.tile(prim(1.2, 0.3, 0.9), (12, 1))
    for lim in ("none", "BarthJespersen"):
        fs = muscl_reconstruct(W, m, lim)
        np.testing.assert_allclose(fs.left, W[m.owner], rtol=1e-14)
        np.testing.assert_allclose(fs.right, W[m.neighbour], rtol=1e-14)


def test_linear_field_exact_unlimited():
    m = generate_1d_tube(20, 1.0)
    x = m.cell_centroids[:, 0]
    W = np.column_stack([1 + x, 0.1 * x, 0 * x, 0 * x, 2 - x])
    fs = muscl_reconstruct(W, m, "none")
    xf = m.face_centres[:, 0]
    exact = np.column_stack([1 + xf, 0.1 * xf, 0 * xf, 0 * xf, 2 - xf])
    assert np.abs(fs.left - exact).max() < 1e-12
    assert np.abs(fs.right - exact).max() < 1e-12


def test_barth_jespersen_no_overshoot(rng):
    m = generate_structured_2d(8, 6, [1, 1])
    x = m.cell_centroids
    W = np.where((x[:, 0] + 0.3 * x[:, 1] < 0.55)[:, None], prim(1.0, 0.0, 1.0), prim(0.125, 0.2, 0.1))
    W = W * (1 + 0.01 * rng.standard_normal(W.shape))
    fs = muscl_reconstruct(W, m, "BarthJespersen")
    lo, hi = W.copy(), W.copy()
    for o, nb in zip(m.owner, m.neighbour):
        lo[o] = np.minimum(lo[o], W[nb]); hi[o] = np.maximum(hi[o], W[nb])
        lo[nb] = np.minimum(lo[nb], W[o]); hi[nb] = np.maximum(hi[nb], W[o])
    tol = 1e-12
    assert np.all(fs.left >= lo[m.owner] - tol) and np.all(fs.left <= hi[m.owner] + tol)
    assert np.all(fs.right >= lo[m.neighbour] - tol) and np.all(fs.right <= hi[m.neighbour] + tol)
    psi = barth_jespersen(m, W, np.zeros((48, 5, 3)))
    assert np.all(psi == 1.0)


def test_first_order_copies_cells(rng):
    m = generate_structured_2d(3, 3, [1, 1])
    W = random_states(rng, 9)
    fs = muscl_reconstruct(W, m, first_order=True)
    assert np.array_equal(fs.left, W[m.owner]) and fs.fallbacks == 0


def test_nonphysical_reconstruction_falls_back():
    m = generate_1d_tube(6, 1.0)
    W = np.tile(prim(1.0, 0.0, 0.01), (6, 1))
    W[3, 4] = 10.0  # a pressure spike gives its neighbours slopes that overshoot below zero
    fs = muscl_reconstruct(W, m, "none")
    assert fs.fallbacks > 0
    assert np.all(fs.left[:, 4] > 0) and np.all(fs.right[:, 4] > 0)


# -- assembly ---------------------------------------------------------------------------
def box(nx=3, ny=3, kinds=None, free=None):
    m = generate_structured_2d(nx, ny, [1.0, 0.8], kinds or {})
    free = free or {"rho": 1.0, "u": [0.3, 0.1, 0.0], "p": 1.0}
    return m, make_boundaries(m, GAS, None, free)


def frozen_fd_check(disc, Q, rtol=1e-5):
    lam = disc.spectral_radii(Q)
    A = disc.jacobian(Q, lam)
    fd = -fd_jacobian(lambda q: disc.residual(q.reshape(Q.shape), lam).ravel(), Q.ravel())
    dense = dense_of(A)
    n = 5
    worst = 0.0
    for i in range(A.n_cells):
        rows = slice(i * n, (i + 1) * n)
        scale = np.abs(fd[rows]).max()
        for j in range(A.n_cells):
            cols = slice(j * n, (j + 1) * n)
            worst = max(worst, np.abs(dense[rows, cols] - fd[rows, cols]).max() / scale)
    assert worst <= rtol, worst


def test_jacobian_matches_fd_uniform_subsonic():
    m, bcs = box(kinds={"left": "farfield", "right": "farfield", "bottom": "wall", "top": "slip"})
    disc = DensityDiscretization(m, GAS, "rusanov", first_order=True, boundaries=bcs)
    frozen_fd_check(disc, uniform_state(m, GAS, prim(1.0, 0.3, 1.0, 0.1)))


def test_jacobian_with_outlet(rng):
    m = generate_structured_2d(3, 2, [1.0, 1.0], {"left": "farfield", "right": "outlet"})
    bcs = make_boundaries(m, GAS, {"right": {"p": 0.9}}, {"rho": 1.0, "u": [0.3, 0, 0], "p": 1.0})
    disc = DensityDiscretization(m, GAS, "rusanov", first_order=True, boundaries=bcs)
    frozen_fd_check(disc, GAS.to_conservative(random_states(rng, 6)))


def test_zero_velocity_dissipation():
    m, bcs = box()
    disc = DensityDiscretization(m, GAS, "roe", first_order=True, boundaries=bcs)
    W = prim(1.0, 0.0, 1.4)
    A = disc.jacobian(uniform_state(m, GAS, W))
    c = GAS.sound_speed(W)
    S = m.face_areas[:, None, None]
    J = flux_jacobian(np.tile(W, (m.n_faces, 1)), m.face_normals, GAS)
    np.testing.assert_allclose(A.upper + A.lower, -S * c * np.eye(5), atol=1e-13)
    np.testing.assert_allclose(A.upper - A.lower, S * J, atol=1e-13)


def test_supersonic_neighbour_block_is_upwind_dissipative():
    m, bcs = box(free={"rho": 1.0, "u": [2.0 * np.sqrt(1.4), 0, 0], "p": 1.0})
    disc = DensityDiscretization(m, GAS, "roe", first_order=True, boundaries=bcs)
    A = disc.jacobian(uniform_state(m, GAS, prim(1.0, 2.0 * np.sqrt(1.4), 1.0)))
    # scalar dissipation leaves A_ij nonzero even at Mach 2, but its spectrum is non-positive
    for blk in A.upper:
        assert np.linalg.norm(blk) > 1e-3 * np.linalg.norm(A.diag[0])
        assert np.linalg.eigvals(blk).real.max() <= 1e-12


def test_conservation_in_closed_box(rng):
    m = generate_structured_2d(4, 4, [1, 1], {k: "wall" for k in ("left", "right", "bottom", "top")})
    bcs = make_boundaries(m, GAS)
    W = random_states(rng, 16)
    disc = DensityDiscretization(m, GAS, "roe", first_order=False, boundaries=bcs)
    R = disc.residual(GAS.to_conservative(W))
    assert abs(R[:, 0].sum()) <= 1e-12 * np.abs(R[:, 0]).max()
    assert abs(R[:, 4].sum()) <= 1e-12 * np.abs(R[:, 4]).max()


def test_residual_antisymmetry(rng):
    m = generate_structured_2d(3, 2, [1, 1], {k: "slip" for k in ("left", "right", "bottom", "top")})
    disc = DensityDiscretization(m, GAS, "hllc", boundaries=make_boundaries(m, GAS))
    Q = GAS.to_conservative(random_states(rng, m.n_cells))
    internal, boundary = disc.face_fluxes(Q)
    R = disc.residual(Q)
    for p in m.patches:
        area = np.linalg.norm(p.area_vectors, axis=1)
        np.add.at(R, p.cells, boundary[p.name] * area[:, None])
    fS = internal * m.face_areas[:, None]
    # what leaves the owners is exactly what enters the neighbours
    owner_part = _scatter(m.owner, -fS, R.shape)
    neighbour_part = _scatter(m.neighbour, fS, R.shape)
    np.testing.assert_allclose(R, owner_part + neighbour_part, rtol=0, atol=1e-14)
    assert abs((owner_part + neighbour_part).sum(axis=0)).max() < 1e-13


def _scatter(idx, vals, shape):
    out = np.zeros(shape)
    np.add.at(out, idx, vals)
    return out


def test_boundary_config_errors():
    m = generate_1d_tube(4, 1.0)
    with pytest.raises(ConfigError):
        make_boundaries(m, GAS)  # farfield without a state
    with pytest.raises(ConfigError):
        make_boundaries(m, GAS, {"nowhere": {}}, {"rho": 1, "p": 1})
    with pytest.raises(ConfigError):
        DensityDiscretization(m, GAS, "ausm", boundaries=make_boundaries(m, GAS, None, {"rho": 1, "p": 1}))


def test_nonphysical_state_named():
    disc, Q = sod_setup(10)
    Q[4, 4] = -1.0
    with pytest.raises(NonPhysicalStateError, match="cell 4"):
        disc.residual(Q)


# -- pseudo-time marching ---------------------------------------------------------------
def test_cfl_ramp():
    c = PseudoTimeControl(50.0, 1.0, 200)
    assert c.cfl(1) == 1.0 and c.cfl(201) == 50.0 and c.cfl(500) == 50.0
    assert c.cfl(101) == pytest.approx(25.5)
    with pytest.raises(ValueError):
        PseudoTimeControl(0.0)


@pytest.mark.parametrize("cfl", [1.0, 1e4])
def test_freestream_is_equilibrium(cfl):
    m, bcs = box(kinds={"left": "farfield", "right": "farfield", "bottom": "slip", "top": "slip"},
                 free={"rho": 1.0, "u": [0.5, 0, 0], "p": 1.0})
    disc = DensityDiscretization(m, GAS, "roe", boundaries=bcs)
    Q = uniform_state(m, GAS, prim(1.0, 0.5, 1.0))
    Qn, step = implicit_step(Q, disc, PseudoTimeControl(cfl, cfl, 0))
    assert np.abs(step.residual_norms).max() < 1e-13
    np.testing.assert_allclose(Qn, Q, atol=1e-13)


def test_sod_implicit_residual_monotone_after_ramp():
    disc, Q = sod_setup(100)
    ctl = PseudoTimeControl(1000.0, 1.0, 100)
    pipe = SolvePipeline()
    hist = []
    for it in range(1, 261):
        Q, step = implicit_step(Q, disc, ctl, it, SolverConfig(), "engine", pipe)
        assert np.all(GAS.is_physical(GAS.to_primitive(Q)))
        hist.append(step.residual_norms.max())
    h = np.array(hist)
    assert np.all(np.diff(h[100:]) < 0)
    assert h[-1] < 1e-8 * h[0]


def test_halving_exhausted_raises(monkeypatch):
    disc, Q = sod_setup(10)

    class Wild:
        def solve(self, A, b, x0, backend, cfg):
            from blockcfd.engine import SolveReport
            return -100.0 * np.abs(b) - 100.0, SolveReport()

    with pytest.raises(SolverDivergedError) as info:
        implicit_step(Q, disc, PseudoTimeControl(10.0, 10.0, 0), 7, pipeline=Wild())
    assert info.value.iteration == 7 and info.value.diagnostics["cells"]


def sod_l1(n, flux, first_order):
    disc, Q = sod_setup(n, flux=flux, first_order=first_order)
    Q, _ = explicit_march(Q, disc, 0.2, 0.5)
    rho, _, _ = solution(disc.mesh.cell_centroids[:, 0], 0.2, 0.5, (1.0, 0.0, 1.0), (0.125, 0.0, 0.1))
    return np.mean(np.abs(Q[:, 0] - rho))


@pytest.mark.parametrize("flux", ["roe", "hllc"])
def test_first_order_grid_convergence(flux):
    errs = np.array([sod_l1(n, flux, True) for n in (100, 200, 400)])
    assert np.all(np.diff(errs) < 0)
    rates = np.log2(errs[:-1] / errs[1:])
    # the smeared contact limits first-order L1 convergence to about h^0.5 asymptotically;
    # at these resolutions the measured rate is about 0.65
    assert np.all(rates > 0.55)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_jacobian_fidelity_property(seed):
    rng = np.random.default_rng(seed)
    m, bcs = box(3, 2, kinds={"left": "farfield", "right": "farfield", "bottom": "wall", "top": "slip"})
    disc = DensityDiscretization(m, GAS, "rusanov", first_order=True, boundaries=bcs)
    frozen_fd_check(disc, GAS.to_conservative(random_states(rng, m.n_cells)))
