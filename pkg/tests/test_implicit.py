import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aderdg.experiments import evolve, project_initial, total_energy
from aderdg.explicit import step_explicit_slab
from aderdg.flux import burgers, linear_advection
from aderdg.geometry import MovingMesh, make_slivers
from aderdg.implicit import (
    GlobalImplicitSystem,
    NewtonConfig,
    assemble_residual,
    project_time_slice,
    solve_implicit_slab,
    solve_implicit_step,
)
from aderdg.refbasis import st_index
from aderdg.slab import Slab, cell_energy, cell_integral


def _dense(system):
    """Affine residual of a linear system as ``J x + r0`` by unit probes."""
    r0 = system.residual(np.zeros(system.size))
    J = np.empty((system.size, system.size))
    for k in range(system.size):
        e = np.zeros(system.size)
        e[k] = 1.0
        J[:, k] = system.residual(e) - r0
    return J, r0


def _periodic(N, ne, dt, delta=0.0, velocity=0.0, pattern="every-other"):
    mesh = MovingMesh.uniform(0.0, 1.0, ne, dt, velocity=velocity)
    return Slab(N, mesh, make_slivers(mesh, pattern, delta))


def _fourier(slab, k=1):
    x = slab.mesh.nodes_old
    return project_initial(lambda y: np.sin(2 * np.pi * k * y) + 0.3 * np.cos(2 * np.pi * (k + 1) * y), x, slab.N)


# --- residual ---------------------------------------------------------------------------


@pytest.mark.parametrize("flux", [linear_advection(1.0), burgers()], ids=["lae", "burgers"])
@pytest.mark.parametrize("delta", [0.0, 0.3])
def test_constant_residual_vanishes(flux, delta):
    slab = _periodic(2, 6, 0.05, delta, velocity=0.2)
    u = slab.from_monomial(np.tile([0.7, 0, 0], (slab.nc, 1)))
    q = np.zeros((slab.nv, slab.n_st))
    q[: slab.nc] = slab.embed_space(u)
    for v in range(slab.nc, slab.nv):
        q[v] = 0.7 * slab.unit[v]
    assert np.abs(assemble_residual(q, u, slab, flux)).max() <= 1e-13


def test_residual_zero_at_dense_solution():
    slab = _periodic(1, 4, 0.1)
    u = _fourier(slab)
    system = GlobalImplicitSystem(slab, u, linear_advection(1.0))
    J, r0 = _dense(system)
    x = np.linalg.solve(J, -r0)
    assert np.abs(system.residual(x)).max() <= 1e-12
    res = solve_implicit_slab(slab, u, linear_advection(1.0))
    assert np.abs(res.q.ravel() - x).max() <= 1e-12 * max(1.0, np.abs(x).max())


@pytest.mark.parametrize("delta", [0.0, 0.25])
def test_residual_sparsity(delta):
    slab = _periodic(2, 6, 0.05, delta)
    flux = burgers()
    u = _fourier(slab) * 0.2
    system = GlobalImplicitSystem(slab, u, flux)
    n = slab.n_st
    Q = np.random.default_rng(0).normal(size=system.size) * 0.1
    base = system.residual(Q).reshape(slab.nv, n)
    adjacency = {v: {v} for v in range(slab.nv)}
    for a, b in zip(slab.fl, slab.fr):
        if a >= 0 and b >= 0:
            adjacency[a].add(b)
            adjacency[b].add(a)
    for v in range(slab.nv):
        P = Q.copy()
        P[v * n + 1] += 0.3
        changed = np.flatnonzero(np.abs(system.residual(P).reshape(slab.nv, n) - base).max(axis=1) > 0)
        assert set(changed.tolist()) <= adjacency[v]
        assert v in changed
    assert all(b in adjacency[a] for a in adjacency for b in adjacency[a] if a in adjacency[b])


# --- solves -----------------------------------------------------------------------------------


@pytest.mark.parametrize("delta", [0.0, 0.3])
@pytest.mark.parametrize("solver", ["gmres", "direct"])
def test_newton_matches_direct_for_lae(delta, solver):
    slab = _periodic(3, 8, 0.2, delta, velocity=0.1)
    u = _fourier(slab)
    direct = solve_implicit_slab(slab, u, linear_advection(1.0))
    newton = solve_implicit_slab(slab, u, linear_advection(1.0), NewtonConfig(linear_solver=solver), force_newton=True)
    assert np.abs(newton.u_new - direct.u_new).max() <= 1e-10
    assert np.abs(newton.q - direct.q).max() <= 1e-10


def test_constant_data_one_iteration():
    slab = _periodic(3, 6, 0.3, 0.2, velocity=0.4)
    u = slab.from_monomial(np.tile([1.3, 0, 0, 0], (slab.nc, 1)))
    for flux in (linear_advection(1.0), burgers()):
        res = solve_implicit_slab(slab, u, flux, force_newton=True)
        assert res.newton_iterations <= 1
        assert np.abs(res.u_new - u).max() <= 1e-12


def test_step_api_and_conservation():
    mesh = MovingMesh.uniform(0.0, 1.0, 8, 0.05, velocity=0.3)
    slivers = make_slivers(mesh, "interior", 0.2)
    slab = Slab(2, mesh, slivers)
    u = _fourier(slab) * 0.5 + 1.0
    q, u1 = solve_implicit_step(u, mesh, slivers, burgers())
    assert q.shape == (slab.nv, slab.n_st)
    assert abs(cell_integral(slab, u1, at_new=True).sum() - cell_integral(slab, u).sum()) <= 1e-12


# --- time-slice projection -----------------------------------------------------------------------


def test_projection_examples():
    mesh = MovingMesh(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 1.0, periodic=False)
    slab = Slab(1, mesh, basis="monomial")
    q = np.zeros((1, slab.n_st))
    q[0, 0] = 2.5
    assert np.allclose(project_time_slice(slab, q), [[2.5, 0.0]], atol=1e-15)
    q = np.zeros((1, slab.n_st))
    q[0, st_index(0, 0)] = 0.5
    q[0, st_index(1, 0)] = 1.0  # q(x, t) = xi
    assert np.allclose(project_time_slice(slab, q), [[0.5, 1.0]], atol=1e-14)


@given(st.integers(0, 6), st.floats(-0.4, 0.4), st.integers(0, 1000))
def test_projection_reproduces_polynomials(N, velocity, seed):
    mesh = MovingMesh.uniform(0.0, 1.0, 3, 0.1, velocity=velocity)
    slab = Slab(N, mesh)
    u_new = np.random.default_rng(seed).normal(size=(3, N + 1))
    # a spacetime polynomial constant in t whose top slice is u_new
    vals = np.einsum("cpl,cl->cp", slab.phi_new(slab.vx[:3]), u_new)
    q = np.stack([np.linalg.lstsq(slab.TH[c], vals[c], rcond=None)[0] for c in range(3)])
    assert np.abs(project_time_slice(slab, q) - u_new).max() <= 1e-11 * max(1.0, np.abs(u_new).max())


# --- stability --------------------------------------------------------------------------------------


@pytest.mark.parametrize("N", range(1, 10))
@pytest.mark.parametrize("cfl", [0.1, 0.5, 1, 2, 5, 10])
def test_unconditional_l2_stability(N, cfl):
    ne = 8
    slab = _periodic(N, ne, cfl / ne)
    u = _fourier(slab, 1)
    energy = [cell_energy(slab, u).sum()]
    for _ in range(20):
        u = solve_implicit_slab(slab, u, linear_advection(1.0)).u_new
        energy.append(cell_energy(slab, u).sum())
    e = np.array(energy)
    assert np.all(e[1:] <= e[:-1] * (1 + 1e-10))


def test_cfl5_n2_stable_on_fourier_modes():
    ne = 12
    slab = _periodic(2, ne, 5.0 / ne)
    for k in range(1, ne // 2 + 1):
        u = _fourier(slab, k)
        prev = cell_energy(slab, u).sum()
        for _ in range(5):
            u = solve_implicit_slab(slab, u, linear_advection(1.0)).u_new
            cur = cell_energy(slab, u).sum()
            assert cur <= prev * (1 + 1e-10)
            prev = cur


def test_burgers_implicit_and_explicit_converge_together():
    N = 2
    diffs = []
    for ne in (16, 32):
        x = np.linspace(0.0, 1.0, ne + 1)
        u0 = project_initial(lambda y: 1.0 + 0.2 * np.sin(2 * np.pi * y), x, N)
        dt = 0.1 / ne
        mesh = MovingMesh(x, x, dt)
        slab = Slab(N, mesh)
        ue = ui = u0
        for _ in range(ne):  # final time 0.1
            ue, _ = step_explicit_slab(slab, ue, burgers())
            ui = solve_implicit_slab(slab, ui, burgers()).u_new
        diffs.append(np.sqrt(total_energy(ue - ui, x)))
    order = np.log2(diffs[0] / diffs[1])
    assert order >= N + 1 - 0.5
