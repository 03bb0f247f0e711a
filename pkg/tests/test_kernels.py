import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aderdg import kernels
from aderdg.explicit import _predictor_operators
from aderdg.flux import burgers, linear_advection
from aderdg.geometry import MovingMesh
from aderdg.slab import Slab

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def _flag_backend(value):
    env = dict(os.environ, ADERDG_NUMBA=value)
    code = "from aderdg import kernels; print(kernels.resolve_backend(None))"
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.strip()


@pytest.mark.parametrize("value,expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_environment_flag(value, expected):
    if expected == "numba" and not kernels.HAVE_NUMBA:
        expected = "numpy"
    assert _flag_backend(value) == expected


def test_resolve_backend_explicit():
    assert kernels.resolve_backend("numpy") == "numpy"
    with pytest.raises(ValueError):
        kernels.resolve_backend("cuda")


@needs_numba
@given(
    st.integers(0, 1),
    st.floats(-3, 3),
    st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([-1.0, 0.0, 1.0]), st.floats(-2, 2)),
             min_size=1, max_size=20),
)
def test_rusanov_backends_agree(kind, a, pts):
    qm, qp, nx, nt = np.array(pts).T
    x = kernels.rusanov(qm, qp, nx, nt, kind, a, backend="numpy")
    y = kernels.rusanov(qm, qp, nx, nt, kind, a, backend="numba")
    np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-14)


@needs_numba
@pytest.mark.parametrize("flux", [linear_advection(1.0), burgers()], ids=["linear", "burgers"])
def test_picard_backends_agree(flux, rng):
    mesh = MovingMesh.uniform(-1.0, 1.0, 16, 0.01, velocity=0.3)
    slab = Slab(3, mesh)
    u = rng.normal(scale=0.1, size=(slab.nc, slab.n_sp))
    src, H = _predictor_operators(slab, flux)
    s = np.einsum("ckl,cl->ck", src, u)
    q0 = slab.embed_space(u)
    out = {}
    for b in ("numpy", "numba"):
        if flux.is_linear:
            out[b] = kernels.picard_linear(s, H, slab.TH, q0, 1e-13, 1e-15, 100, b)
        else:
            out[b] = kernels.picard_nonlinear(s, H, slab.TH, kernels.BURGERS, 0.0, q0, 1e-13, 1e-15, 100, b)
    np.testing.assert_allclose(out["numpy"][0], out["numba"][0], rtol=1e-12, atol=1e-14)
    assert np.array_equal(out["numpy"][1], out["numba"][1])
    assert np.all(out["numba"][1] > 0)


def test_picard_reports_divergence():
    s = np.ones((2, 1))
    H = np.array([[[2.0]], [[0.5]]])
    E = np.ones((2, 1, 1))
    for b in ("numpy", "numba") if kernels.HAVE_NUMBA else ("numpy",):
        q, it = kernels.picard_linear(s, H, E, np.zeros((2, 1)), 1e-12, 1e-14, 60, b)
        assert it[0] == -1 and it[1] > 0
        assert q[1, 0] == pytest.approx(1 / 1.5, abs=1e-12)


@needs_numba
def test_spectral_radii_backends_agree(rng):
    mats = rng.normal(size=(30, 7, 7)) + 1j * rng.normal(size=(30, 7, 7))
    mats[0] = np.diag(np.arange(7.0))
    mats[1] = np.eye(7)
    x = kernels.spectral_radii(mats, backend="numpy")
    y = kernels.spectral_radii(mats, backend="numba")
    np.testing.assert_allclose(x, y, rtol=1e-11)
    assert y[0] == 6.0 and y[1] == pytest.approx(1.0, abs=1e-14)


def test_eigvals_qr_matches_lapack(rng):
    A = rng.normal(size=(9, 9))
    ours = kernels.eigvals_qr(A)
    ref = np.linalg.eigvals(A)
    dist = np.abs(ours[:, None] - ref[None, :])
    assert dist.min(axis=1).max() <= 1e-11
    assert dist.min(axis=0).max() <= 1e-11
    with pytest.raises(ValueError):
        kernels.eigvals_qr(np.ones((2, 3)))
