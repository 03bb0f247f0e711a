"""Reference-element bases, the triangular spacetime index map and quadrature.

Three monomial families live on the reference element ``[0, 1]`` (space) and
``[0, 1] x [0, 1]`` (space x time):

* ``phi_l(xi) = (xi - 1/2)**l`` for ``l = 0..N``
* ``theta_l(xi, tau) = (xi - 1/2)**l1 * tau**l2`` with ``l = st_index(l1, l2)``
* ``psi_l(xi, tau) = phi_l(xi)``

Everything here is a pure function; :class:`ReferenceMatrices` is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DEGREE = 9


@dataclass(frozen=True)
class SchemeOrder:
    """Polynomial degree ``N`` and the derived mode counts."""

    N: int

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise TypeError(f"degree must be an integer, got {self.N!r}")
        if self.N < 0 or self.N > MAX_DEGREE:
            raise ValueError(f"degree must lie in [0, {MAX_DEGREE}], got {self.N}")

    @property
    def n_space(self) -> int:
        return self.N + 1

    @property
    def n_st(self) -> int:
        return (self.N + 1) * (self.N + 2) // 2


def _as_order(order) -> SchemeOrder:
    return order if isinstance(order, SchemeOrder) else SchemeOrder(int(order))


def st_index(l1: int, l2: int, N: int | None = None) -> int:
    """Position of the mode ``(xi - 1/2)**l1 * tau**l2`` in the spacetime basis."""
    if l1 < 0 or l2 < 0:
        raise ValueError(f"exponents must be non-negative, got ({l1}, {l2})")
    if N is not None and l1 + l2 > N:
        raise ValueError(f"l1 + l2 = {l1 + l2} exceeds degree {N}")
    s = l1 + l2
    return l1 + s * (s + 1) // 2


@lru_cache(maxsize=None)
def st_pairs(N: int) -> tuple[tuple[int, int], ...]:
    """Inverse of :func:`st_index`: the exponent pair of every spacetime mode."""
    n_st = (N + 1) * (N + 2) // 2
    pairs: list[tuple[int, int] | None] = [None] * n_st
    for s in range(N + 1):
        for l1 in range(s + 1):
            pairs[st_index(l1, s - l1)] = (l1, s - l1)
    return tuple(pairs)  # type: ignore[arg-type]


def _exponents(N: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.array(st_pairs(N), dtype=int)
    return pairs[:, 0], pairs[:, 1]


def _check_mode(l: int, n_modes: int):
    if l < 0 or l >= n_modes:
        raise ValueError(f"mode index {l} outside [0, {n_modes - 1}]")


def _powers(base: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """``base[..., None] ** exps`` with ``0**0 == 1``."""
    return np.power(base[..., None], exps)


def _dpowers(base: np.ndarray, exps: np.ndarray) -> np.ndarray:
    lowered = np.maximum(exps - 1, 0)
    return exps * np.power(base[..., None], lowered)


# --- single-mode evaluators ------------------------------------------------


def eval_phi(order, l: int, xi):
    o = _as_order(order)
    _check_mode(l, o.n_space)
    return np.power(np.asarray(xi, dtype=float) - 0.5, l)


def eval_dphi(order, l: int, xi):
    o = _as_order(order)
    _check_mode(l, o.n_space)
    xi = np.asarray(xi, dtype=float)
    if l == 0:
        return np.zeros_like(xi)
    return l * np.power(xi - 0.5, l - 1)


def eval_theta(order, l: int, xi, tau):
    o = _as_order(order)
    _check_mode(l, o.n_st)
    l1, l2 = st_pairs(o.N)[l]
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return np.power(xi - 0.5, l1) * np.power(tau, l2)


def eval_dtheta_dxi(order, l: int, xi, tau):
    o = _as_order(order)
    _check_mode(l, o.n_st)
    l1, l2 = st_pairs(o.N)[l]
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if l1 == 0:
        return np.zeros(np.broadcast(xi, tau).shape)
    return l1 * np.power(xi - 0.5, l1 - 1) * np.power(tau, l2)


def eval_dtheta_dtau(order, l: int, xi, tau):
    o = _as_order(order)
    _check_mode(l, o.n_st)
    l1, l2 = st_pairs(o.N)[l]
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if l2 == 0:
        return np.zeros(np.broadcast(xi, tau).shape)
    return np.power(xi - 0.5, l1) * l2 * np.power(tau, l2 - 1)


def eval_psi(order, l: int, xi, tau):
    xi, _ = np.broadcast_arrays(np.asarray(xi, float), np.asarray(tau, float))
    return eval_phi(order, l, xi)


def eval_dpsi_dxi(order, l: int, xi, tau):
    xi, _ = np.broadcast_arrays(np.asarray(xi, float), np.asarray(tau, float))
    return eval_dphi(order, l, xi)


def eval_dpsi_dtau(order, l: int, xi, tau):
    o = _as_order(order)
    _check_mode(l, o.n_space)
    return np.zeros(np.broadcast(np.asarray(xi), np.asarray(tau)).shape)


# --- vectorised tables (last axis = mode) ----------------------------------
#
# ``s`` is the centred coordinate ``xi - 1/2`` (or, on physical elements,
# ``(x - centre) / width``); ``tau`` the normalised time.


def phi_table(N: int, s) -> np.ndarray:
    return _powers(np.asarray(s, dtype=float), np.arange(N + 1))


def dphi_table(N: int, s) -> np.ndarray:
    return _dpowers(np.asarray(s, dtype=float), np.arange(N + 1))


def theta_table(N: int, s, tau) -> np.ndarray:
    l1, l2 = _exponents(N)
    s, tau = np.broadcast_arrays(np.asarray(s, float), np.asarray(tau, float))
    return _powers(s, l1) * _powers(tau, l2)


def dtheta_ds_table(N: int, s, tau) -> np.ndarray:
    l1, l2 = _exponents(N)
    s, tau = np.broadcast_arrays(np.asarray(s, float), np.asarray(tau, float))
    return _dpowers(s, l1) * _powers(tau, l2)


def dtheta_dtau_table(N: int, s, tau) -> np.ndarray:
    l1, l2 = _exponents(N)
    s, tau = np.broadcast_arrays(np.asarray(s, float), np.asarray(tau, float))
    return _powers(s, l1) * _dpowers(tau, l2)


def space_slot(N: int) -> np.ndarray:
    """Spacetime index of every purely spatial mode ``(l, 0)``."""
    return np.array([st_index(l, 0) for l in range(N + 1)])


# --- quadrature -------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def _leggauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gauss_rule(n_points: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[0, 1]``; exact up to degree ``2 n - 1``."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    nodes, weights = _leggauss01(int(n_points))
    return QuadratureRule(nodes, weights)


def tensor_rule(n_points: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit square as flat ``(xi, tau, w)`` arrays."""
    r = gauss_rule(n_points)
    xi, tau = np.meshgrid(r.nodes, r.nodes, indexing="ij")
    w = np.outer(r.weights, r.weights)
    return xi.ravel(), tau.ravel(), w.ravel()


# --- reference matrices -----------------------------------------------------


@dataclass(frozen=True)
class ReferenceMatrices:
    """Reference operators on the unit square, for the Eulerian unit cell.

    ``k0_st`` is the time-boundary coupling ``int theta_k(xi,0) theta_l(xi,0)``;
    ``f_minus_r`` / ``f_minus_l`` pair the right / left cell face with the
    predictor trace at ``xi = 1`` (own cell and upwind neighbour respectively).
    """

    N: int
    k_tau_st: np.ndarray
    k0_st: np.ndarray
    k_xi_st: np.ndarray
    m0: np.ndarray
    m: np.ndarray
    k_xi: np.ndarray
    f_minus_r: np.ndarray
    f_minus_l: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            name: getattr(self, name)
            for name in (
                "k_tau_st",
                "k0_st",
                "k_xi_st",
                "m0",
                "m",
                "k_xi",
                "f_minus_r",
                "f_minus_l",
            )
        }


def _assemble(N: int, n_points: int) -> ReferenceMatrices:
    xi, tau, w = tensor_rule(n_points)
    s = xi - 0.5
    th = theta_table(N, s, tau)
    th_s = dtheta_ds_table(N, s, tau)
    th_t = dtheta_dtau_table(N, s, tau)
    dps = dphi_table(N, s)

    line = gauss_rule(n_points)
    ls = line.nodes - 0.5
    lw = line.weights

    th_bottom = theta_table(N, ls, np.zeros_like(ls))
    th_top = theta_table(N, ls, np.ones_like(ls))
    ph = phi_table(N, ls)
    # predictor traces on the lateral edges, parameterised by tau
    th_right_edge = theta_table(N, np.full_like(lw, 0.5), line.nodes)
    ps_right = phi_table(N, np.full_like(lw, 0.5))
    ps_left = phi_table(N, np.full_like(lw, -0.5))

    def wdot(a, b, weights):
        return np.einsum("pk,p,pl->kl", a, weights, b)

    out = ReferenceMatrices(
        N=N,
        k_tau_st=wdot(th, th_t, w),
        k0_st=wdot(th_bottom, th_bottom, lw),
        k_xi_st=wdot(th, th_s, w),
        m0=wdot(th_bottom, ph, lw),
        m=wdot(ph, ph, lw),
        k_xi=wdot(dps, th, w),
        f_minus_r=wdot(ps_right, th_right_edge, lw),
        f_minus_l=wdot(ps_left, th_right_edge, lw),
    )
    for arr in out.as_dict().values():
        arr.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _cached_reference(N: int) -> ReferenceMatrices:
    return _assemble(N, N + 2)


def assemble_reference_matrices(order) -> ReferenceMatrices:
    """All eight reference operators, exact via ``N + 2`` Gauss points per axis."""
    return _cached_reference(_as_order(order).N)


def assemble_reference_matrices_at(order, n_points: int) -> ReferenceMatrices:
    """Same operators at a caller-chosen quadrature order (used by oracles)."""
    return _assemble(_as_order(order).N, int(n_points))
