from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aderdg.refbasis import (
    SchemeOrder,
    assemble_reference_matrices,
    assemble_reference_matrices_at,
    eval_dphi,
    eval_dtheta_dtau,
    eval_dtheta_dxi,
    eval_phi,
    eval_psi,
    eval_theta,
    gauss_rule,
    st_index,
    st_pairs,
)


# --- exact rational oracle -------------------------------------------------------


def _int_s(a):
    """int_{-1/2}^{1/2} s^a ds."""
    h = Fraction(1, 2)
    return (h ** (a + 1) - (-h) ** (a + 1)) / (a + 1)


def _int_t(b):
    return Fraction(1, b + 1)


def _at(x, a):
    return Fraction(x) ** a if a else Fraction(1)


def exact_matrices(N, as_float=True):
    P = st_pairs(N)
    half = Fraction(1, 2)
    nst, nsp = len(P), N + 1
    M = {k: [[Fraction(0)] * c for _ in range(r)] for k, (r, c) in {
        "k_tau_st": (nst, nst), "k0_st": (nst, nst), "k_xi_st": (nst, nst), "m0": (nst, nsp),
        "m": (nsp, nsp), "k_xi": (nsp, nst), "f_minus_r": (nsp, nst), "f_minus_l": (nsp, nst)}.items()}
    for k, (a1, a2) in enumerate(P):
        for l, (b1, b2) in enumerate(P):
            if b2:
                M["k_tau_st"][k][l] = b2 * _int_s(a1 + b1) * _int_t(a2 + b2 - 1)
            if b1:
                M["k_xi_st"][k][l] = b1 * _int_s(a1 + b1 - 1) * _int_t(a2 + b2)
            if a2 == 0 and b2 == 0:
                M["k0_st"][k][l] = _int_s(a1 + b1)
        for l in range(nsp):
            if a2 == 0:
                M["m0"][k][l] = _int_s(a1 + l)
    for k in range(nsp):
        for l in range(nsp):
            M["m"][k][l] = _int_s(k + l)
        for l, (b1, b2) in enumerate(P):
            if k:
                M["k_xi"][k][l] = k * _int_s(k - 1 + b1) * _int_t(b2)
            trace = _at(half, b1) * _int_t(b2)
            M["f_minus_r"][k][l] = _at(half, k) * trace
            M["f_minus_l"][k][l] = _at(-half, k) * trace
    if not as_float:
        return M
    return {k: np.array([[float(x) for x in row] for row in v]) for k, v in M.items()}


# --- st_index ---------------------------------------------------------------------


@pytest.mark.parametrize("pair,idx", [((0, 0), 0), ((1, 0), 2), ((0, 1), 1), ((2, 0), 5), ((1, 1), 4), ((0, 2), 3)])
def test_st_index_examples(pair, idx):
    assert st_index(*pair) == idx


@pytest.mark.parametrize("N", range(10))
def test_st_index_bijection(N):
    seen = sorted(st_index(l1, l2) for l1 in range(N + 1) for l2 in range(N + 1 - l1))
    assert seen == list(range(SchemeOrder(N).n_st))
    assert all(st_index(*p) == k for k, p in enumerate(st_pairs(N)))


@given(st.integers(0, 9), st.integers(0, 9))
def test_st_index_formula(l1, l2):
    if l1 + l2 > 9:
        with pytest.raises(ValueError):
            st_index(l1, l2, 9)
    else:
        assert st_index(l1, l2, 9) == l1 + (l1 + l2) * (l1 + l2 + 1) // 2


def test_st_index_rejects_negative():
    with pytest.raises(ValueError):
        st_index(-1, 0)


@pytest.mark.parametrize("N", range(10))
def test_scheme_order_counts(N):
    o = SchemeOrder(N)
    assert o.n_space == N + 1 and o.n_st == (N + 1) * (N + 2) // 2


def test_scheme_order_limits():
    with pytest.raises(ValueError):
        SchemeOrder(10)
    with pytest.raises(ValueError):
        SchemeOrder(-1)


# --- evaluators -------------------------------------------------------------------------


def test_evaluator_examples():
    o = SchemeOrder(3)
    assert eval_phi(o, 0, 0.73) == 1.0
    assert eval_phi(o, 1, 0.5) == 0.0
    assert eval_theta(o, st_index(1, 1), 1.0, 1.0) == pytest.approx(0.5)
    assert eval_psi(o, 2, 0.1, 0.7) == pytest.approx(eval_phi(o, 2, 0.1))
    with pytest.raises(ValueError):
        eval_phi(o, 4, 0.5)


@given(st.integers(0, 9), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_derivatives_match_finite_differences(N, xi, tau):
    o = SchemeOrder(N)
    h = 1e-5
    for l in range(o.n_space):
        fd = (eval_phi(o, l, xi + h) - eval_phi(o, l, xi - h)) / (2 * h)
        assert abs(eval_dphi(o, l, xi) - fd) <= 1e-8
    for l in range(o.n_st):
        fx = (eval_theta(o, l, xi + h, tau) - eval_theta(o, l, xi - h, tau)) / (2 * h)
        ft = (eval_theta(o, l, xi, tau + h) - eval_theta(o, l, xi, tau - h)) / (2 * h)
        assert abs(eval_dtheta_dxi(o, l, xi, tau) - fx) <= 1e-8
        assert abs(eval_dtheta_dtau(o, l, xi, tau) - ft) <= 1e-8


# --- quadrature ---------------------------------------------------------------------------


def test_gauss_rule_examples():
    r1 = gauss_rule(1)
    assert r1.nodes[0] == pytest.approx(0.5) and r1.weights[0] == pytest.approx(1.0)
    r2 = gauss_rule(2)
    assert np.allclose(np.sort(r2.nodes), [0.5 - 1 / (2 * np.sqrt(3)), 0.5 + 1 / (2 * np.sqrt(3))], atol=1e-15)
    assert np.allclose(r2.weights, 0.5, atol=1e-15)
    assert r2.integrate(lambda x: x**3) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("n", range(1, 12))
def test_gauss_rule_exactness(n):
    r = gauss_rule(n)
    assert np.all(r.weights > 0)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for d in range(2 * n):
        assert r.integrate(lambda x: x**d) == pytest.approx(1.0 / (d + 1), abs=1e-14)


# --- reference matrices ---------------------------------------------------------------------


def test_reference_n1_examples():
    R = assemble_reference_matrices(1)
    assert np.allclose(R.m, [[1.0, 0.0], [0.0, 1.0 / 12.0]], atol=1e-15)
    assert np.allclose(R.m0[st_index(0, 0)], [1.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("N", range(10))
def test_reference_matrices_match_exact_integrals(N):
    R = assemble_reference_matrices(N).as_dict()
    E = exact_matrices(N)
    for name, M in E.items():
        scale = max(1.0, np.abs(M).max())
        assert np.abs(R[name] - M).max() <= 1e-13 * scale, name


@pytest.mark.parametrize("N", range(10))
def test_reference_matrices_match_high_order_quadrature(N):
    R = assemble_reference_matrices(N).as_dict()
    O = assemble_reference_matrices_at(N, 2 * N + 4).as_dict()
    for name in R:
        scale = max(1.0, np.abs(O[name]).max())
        assert np.abs(R[name] - O[name]).max() <= 1e-13 * scale, name


@pytest.mark.parametrize("N", range(10))
def test_reference_matrix_structure(N):
    R = assemble_reference_matrices(N)
    assert np.abs(R.k0_st - R.k0_st.T).max() <= 1e-15
    assert np.abs(R.m - R.m.T).max() <= 1e-15
    assert np.all(np.linalg.eigvalsh(R.m) > 0)
    # integration by parts in tau: K + K^T = top - bottom
    P = st_pairs(N)
    top = np.zeros_like(R.k0_st)
    for k, (a1, a2) in enumerate(P):
        for l, (b1, b2) in enumerate(P):
            top[k, l] = float(_int_s(a1 + b1))
    assert np.abs(R.k_tau_st + R.k_tau_st.T - (top - R.k0_st)).max() <= 1e-13


def test_reference_matrices_read_only():
    R = assemble_reference_matrices(2)
    with pytest.raises(ValueError):
        R.m[0, 0] = 2.0
