"""Batched quadrature data for one spacetime slab.

A :class:`Slab` evaluates every basis the schemes need at every quadrature
point of every control volume, sliver, time slice and lateral segment, and
stores the results as stacked arrays so that predictor, corrector and the
implicit residual reduce to ``einsum`` calls.  Volumes with fewer quadrature
points than the largest one are padded with zero-weight points.

Two working bases span the same polynomial spaces:

``"monomial"``
    the centred monomials ``s**l1 * tau**l2`` in the fixed frame of each
    volume, i.e. the reference families of :mod:`aderdg.refbasis`.
``"orthonormal"`` (default)
    Legendre products in a frame sheared along the volume's centre
    trajectory, re-orthonormalised on the actual volume by two Cholesky
    passes.  The monomial Gram matrices reach condition numbers of 1e13
    (cells) to 1e16 (slivers) at N = 9, which destroys high-order runs.

The discrete scheme is the same in exact arithmetic for both choices; only
the coefficients differ.  Spatial coefficients convert with the fixed
matrix :attr:`Slab.space_to_monomial`, spacetime ones with
:meth:`Slab.st_to_monomial`.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.polynomial import legendre as npleg

from .geometry import (
    MovingMesh,
    SlabLayout,
    edge_normal,
    polygon_quadrature,
    segment_quadrature,
    slab_layout,
)
from .refbasis import (
    SchemeOrder,
    dphi_table,
    dtheta_ds_table,
    dtheta_dtau_table,
    gauss_rule,
    phi_table,
    space_slot,
    st_pairs,
    theta_table,
)

BASES = ("orthonormal", "monomial")


def _wdot(a, w, b):
    """``sum_p a[v,p,k] w[v,p] b[v,p,l]``."""
    return np.swapaxes(a * w[..., None], -1, -2) @ b


# --- scaled Legendre family on s in [-1/2, 1/2] ---------------------------------


def _leg_deriv_matrix(N: int) -> np.ndarray:
    D = np.zeros((max(N, 1), N + 1))
    for l in range(1, N + 1):
        e = np.zeros(N + 1)
        e[l] = 1.0
        d = npleg.legder(e)
        D[: d.size, l] = d
    return D


def legendre_table(N: int, s) -> np.ndarray:
    """``sqrt(2l+1) P_l(2 s)``: orthonormal on ``[-1/2, 1/2]``."""
    s = np.asarray(s, dtype=float)
    return npleg.legvander(2.0 * s, N) * np.sqrt(2.0 * np.arange(N + 1) + 1.0)


def dlegendre_table(N: int, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if N == 0:
        return np.zeros(s.shape + (1,))
    d = npleg.legvander(2.0 * s, N - 1) @ _leg_deriv_matrix(N)
    return 2.0 * d * np.sqrt(2.0 * np.arange(N + 1) + 1.0)


def legendre_to_monomial(N: int) -> np.ndarray:
    """``C`` with ``sum_l c_l L_l(s) = sum_k (C c)_k s**k``."""
    C = np.zeros((N + 1, N + 1))
    for l in range(N + 1):
        e = np.zeros(N + 1)
        e[l] = np.sqrt(2.0 * l + 1.0)
        p = npleg.leg2poly(e)
        C[: p.size, l] = p * 2.0 ** np.arange(p.size)
    return C


# --- slab --------------------------------------------------------------------------


class Slab:
    """Quadrature tables for one time slab of a (possibly sliver-laden) mesh.

    Parameters
    ----------
    N : int
        Polynomial degree.
    mesh : MovingMesh
        Node positions at both time levels.
    slivers : list of SliverDescriptor, optional
    ghost : callable, optional
        ``ghost(x, t)`` gives the outer state on non-periodic boundary faces;
        defaults to zero.
    basis : {"orthonormal", "monomial"}
        Working basis (see module docstring).
    n_quad : int, optional
        Gauss points per direction; ``N + 2`` by default.
    """

    def __init__(
        self,
        N: int,
        mesh: MovingMesh,
        slivers=None,
        ghost: Callable | None = None,
        basis: str = "orthonormal",
        n_quad=None,
    ):
        order = SchemeOrder(N)
        if basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
        self.N = N
        self.basis = basis
        self.n_sp = order.n_space
        self.n_st = order.n_st
        self.mesh = mesh
        self.layout: SlabLayout = slab_layout(mesh, slivers)
        self.slivers = self.layout.slivers
        self.nc = self.layout.n_cells
        self.ns = self.layout.n_slivers
        self.nv = self.nc + self.ns
        self.nq = N + 2 if n_quad is None else int(n_quad)
        self.ghost = ghost
        self.t0 = mesh.t0
        self.dt = mesh.dt
        self.cache: dict = {}
        self._pairs = np.array(st_pairs(N), dtype=int)
        if basis == "monomial":
            self.space_to_monomial = np.eye(self.n_sp)
        else:
            self.space_to_monomial = legendre_to_monomial(N)
        self.space_from_monomial = np.linalg.inv(self.space_to_monomial)
        self._frames()
        self._volumes()
        self._slices()
        self._faces()

    # -- frames and basis evaluation ---------------------------------------------

    def _frames(self):
        m = self.mesh
        xo, xn = m.nodes_old, m.nodes_new
        self.b_old = 0.5 * (xo[1:] + xo[:-1])
        self.b_new = 0.5 * (xn[1:] + xn[:-1])
        self.dx_old = np.diff(xo)
        self.dx_new = np.diff(xn)
        self.cell_velocity = (self.b_new - self.b_old) / self.dt
        c0, c1, h = list(self.b_old), list(self.b_new), list(self.dx_old)
        for d in self.slivers:
            c0.append(xo[d.interface_index])
            c1.append(xn[d.interface_index])
            h.append(d.width)
        # monomial frame: fixed centre c0; working frame follows c0 -> c1
        self.centre = np.array(c0)
        self.centre_new = np.array(c1)
        self.scale = np.array(h)
        if self.basis == "monomial":
            self.centre_new = self.centre.copy()
        self.transform = np.broadcast_to(np.eye(self.n_st), (self.nv, self.n_st, self.n_st)).copy()

    def _raw_st(self, vols, x, t):
        """Unnormalised working basis, its x- and t-derivatives at ``(x, t)``.

        ``vols`` broadcasts against the leading axes of ``x``.
        """
        vols = np.asarray(vols)
        x = np.asarray(x, dtype=float)
        tau = (np.asarray(t, dtype=float) - self.t0) / self.dt
        c0 = self.centre[vols][..., None]
        c1 = self.centre_new[vols][..., None]
        h = self.scale[vols][..., None]
        s = (x - c0 - tau * (c1 - c0)) / h
        if self.basis == "monomial":
            val = theta_table(self.N, s, tau)
            ds = dtheta_ds_table(self.N, s, tau)
            dtau = dtheta_dtau_table(self.N, s, tau)
        else:
            l1, l2 = self._pairs[:, 0], self._pairs[:, 1]
            s, tau = np.broadcast_arrays(s, tau)
            A, dA = legendre_table(self.N, s), dlegendre_table(self.N, s)
            B, dB = legendre_table(self.N, tau - 0.5), dlegendre_table(self.N, tau - 0.5)
            val = A[..., l1] * B[..., l2]
            ds = dA[..., l1] * B[..., l2]
            dtau = A[..., l1] * dB[..., l2]
        hh = h[..., None]
        dx = ds / hh
        dt = dtau / self.dt - ((c1 - c0)[..., None] / (self.dt * hh)) * ds
        return val, dx, dt

    def _st(self, vols, x, t):
        val, dx, dt = self._raw_st(vols, x, t)
        T = self.transform[np.asarray(vols)]
        return val @ T, dx @ T, dt @ T

    def theta(self, v, x, t, shift=0.0):
        """Working spacetime basis of volume ``v`` at points ``(x + shift, t)``."""
        return self._st(np.asarray(v), np.asarray(x, dtype=float) + shift, t)[0]

    def _space(self, s):
        if self.basis == "monomial":
            return phi_table(self.N, s)
        return legendre_table(self.N, s)

    def _dspace(self, s):
        if self.basis == "monomial":
            return dphi_table(self.N, s)
        return dlegendre_table(self.N, s)

    def _psi_coord(self, i, x, t):
        i = np.asarray(i)
        tau = (np.asarray(t, dtype=float) - self.t0) / self.dt
        b0 = self.b_old[i][..., None] if i.ndim else self.b_old[i]
        b1 = self.b_new[i][..., None] if i.ndim else self.b_new[i]
        h = self.dx_old[i][..., None] if i.ndim else self.dx_old[i]
        return (np.asarray(x, dtype=float) - ((1.0 - tau) * b0 + tau * b1)) / h

    def psi(self, i, x, t, shift=0.0):
        """Moving spatial basis of cell ``i`` at ``(x + shift, t)``."""
        return self._space(self._psi_coord(i, np.asarray(x, dtype=float) + shift, t))

    def phi_old(self, x):
        """Spatial basis of every cell at ``t^n``; ``x`` has shape ``(nc, P)``."""
        return self._space((x - self.b_old[:, None]) / self.dx_old[:, None])

    def phi_new(self, x):
        return self._space((x - self.b_new[:, None]) / self.dx_new[:, None])

    # -- volumes ------------------------------------------------------------------

    def _volumes(self):
        pts, wts = [], []
        for poly in self.layout.polygons:
            p, w = polygon_quadrature(poly, self.nq)
            pts.append(p)
            wts.append(w)
        P = max(len(w) for w in wts)
        nv = self.nv
        self.vx = np.empty((nv, P))
        self.vt = np.empty((nv, P))
        self.vw = np.zeros((nv, P))
        for v, (p, w) in enumerate(zip(pts, wts)):
            k = len(w)
            self.vx[v, :k] = p[:, 0]
            self.vt[v, :k] = p[:, 1]
            self.vx[v, k:] = p[0, 0]
            self.vt[v, k:] = p[0, 1]
            self.vw[v, :k] = w
        vols = np.arange(nv)
        if self.basis == "orthonormal":
            raw, _, _ = self._raw_st(vols, self.vx, self.vt)
            T = np.broadcast_to(np.eye(self.n_st), (nv, self.n_st, self.n_st)).copy()
            for _ in range(2):
                V = raw @ T
                G = _wdot(V, self.vw, V)
                R = np.linalg.cholesky(G)  # G = R R^T
                T = T @ np.linalg.inv(np.swapaxes(R, 1, 2))
            self.transform = T
        self.TH, self.THx, self.THt = self._st(vols, self.vx, self.vt)
        self.gram = _wdot(self.TH, self.vw, self.TH)
        self.Dx = _wdot(self.TH, self.vw, self.THx)  # int theta_k d_x theta_l
        self.Dt = _wdot(self.TH, self.vw, self.THt)  # int theta_k d_t theta_l
        self.area = self.vw.sum(axis=1)
        # coefficients of the constant function 1 on each volume
        self.unit = np.linalg.solve(self.gram, np.einsum("vpk,vp->vk", self.TH, self.vw)[..., None])[..., 0]
        if self.basis == "monomial":
            self.unit = np.zeros((nv, self.n_st))
            self.unit[:, 0] = 1.0

        nc = self.nc
        ps = self._psi_coord(np.arange(nc), self.vx[:nc], self.vt[:nc])
        self.PS = self._space(ps)
        self.PSx = self._dspace(ps) / self.dx_old[:, None, None]
        self.PSt = -self.cell_velocity[:, None, None] * self.PSx
        # time-constant extension of u^n inside each control volume
        phi_vol = self.phi_old(self.vx[:nc])
        if self.basis == "monomial":
            self.embed = np.zeros((nc, self.n_st, self.n_sp))
            self.embed[:, space_slot(self.N), np.arange(self.n_sp)] = 1.0
        else:
            self.embed = np.linalg.solve(self.gram[:nc], _wdot(self.TH[:nc], self.vw[:nc], phi_vol))

    # -- time slices --------------------------------------------------------------

    def _slices(self):
        r = gauss_rule(self.nq)
        xo, xn = self.mesh.nodes_old, self.mesh.nodes_new
        x0 = xo[:-1, None] + r.nodes[None, :] * self.dx_old[:, None]
        x1 = xn[:-1, None] + r.nodes[None, :] * self.dx_new[:, None]
        self.w0 = r.weights[None, :] * self.dx_old[:, None]
        self.w1 = r.weights[None, :] * self.dx_new[:, None]
        self.x0, self.x1 = x0, x1
        nc = self.nc
        cells = np.arange(nc)
        self.TH0 = self._st(cells, x0, self.t0)[0]
        self.TH1 = self._st(cells, x1, self.t0 + self.dt)[0]
        self.PHI0 = self.phi_old(x0)
        self.PHI1 = self.phi_new(x1)
        self.PSI0 = self.psi(cells, x0, self.t0)
        self.PSI1 = self.psi(cells, x1, self.t0 + self.dt)

        # predictor: int_C theta_k d_t theta_l + int_bottom theta_k theta_l
        self.pred_lhs = self.Dt[:nc] + _wdot(self.TH0, self.w0, self.TH0)
        self.pred_rhs = _wdot(self.TH0, self.w0, self.PHI0)
        # corrector mass matrices (test psi, trial phi)
        self.corr_top = _wdot(self.PSI1, self.w1, self.PHI1)
        self.corr_bottom = _wdot(self.PSI0, self.w0, self.PHI0)
        # implicit: top trace pairing and the time-slice projection
        self.top_st = _wdot(self.TH1, self.w1, self.TH1)
        self.mass_new = _wdot(self.PHI1, self.w1, self.PHI1)
        self.proj_new = _wdot(self.PHI1, self.w1, self.TH1)
        self.mass_old = _wdot(self.PHI0, self.w0, self.PHI0)

    # -- lateral faces --------------------------------------------------------------

    def _faces(self):
        lay = self.layout
        nf = len(lay.segments)
        pf = self.nq
        self.fl = np.array(lay.left, dtype=int)
        self.fr = np.array(lay.right, dtype=int)
        self.fx = np.empty((nf, pf))
        self.ft = np.empty((nf, pf))
        self.fw = np.empty((nf, pf))
        self.fn = np.empty((nf, 2))
        for f, (p0, p1) in enumerate(lay.segments):
            n, _ = edge_normal(p0, p1)
            pts, w = segment_quadrature(p0, p1, pf)
            self.fx[f], self.ft[f], self.fw[f], self.fn[f] = pts[:, 0], pts[:, 1], w, n
        self.fTHl = np.zeros((nf, pf, self.n_st))
        self.fTHr = np.zeros((nf, pf, self.n_st))
        self.fPSl = np.zeros((nf, pf, self.n_sp))
        self.fPSr = np.zeros((nf, pf, self.n_sp))
        shl = np.asarray(lay.shift_left, dtype=float)[:, None]
        shr = np.asarray(lay.shift_right, dtype=float)[:, None]
        for side, shift, TH, PS in ((self.fl, shl, self.fTHl, self.fPSl), (self.fr, shr, self.fTHr, self.fPSr)):
            m = np.flatnonzero(side >= 0)
            TH[m] = self._st(side[m], self.fx[m] + shift[m], self.ft[m])[0]
            c = m[side[m] < self.nc]
            PS[c] = self.psi(side[c], self.fx[c] + shift[c], self.ft[c])
        self.ghost_faces = np.flatnonzero((self.fl < 0) | (self.fr < 0))
        self.fl_real = np.flatnonzero(self.fl >= 0)
        self.fr_real = np.flatnonzero(self.fr >= 0)

    # -- helpers ---------------------------------------------------------------------

    def ghost_values(self, f):
        if self.ghost is None:
            return np.zeros(self.fx.shape[1])
        return np.broadcast_to(np.asarray(self.ghost(self.fx[f], self.ft[f]), float), self.fx.shape[1])

    def face_traces(self, q_all: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Left and right predictor traces at every face quadrature point."""
        nf, pf = self.fx.shape
        ql = np.empty((nf, pf))
        qr = np.empty((nf, pf))
        i = self.fl_real
        ql[i] = np.einsum("fpk,fk->fp", self.fTHl[i], q_all[self.fl[i]])
        i = self.fr_real
        qr[i] = np.einsum("fpk,fk->fp", self.fTHr[i], q_all[self.fr[i]])
        for f in self.ghost_faces:
            g = self.ghost_values(f)
            if self.fl[f] < 0:
                ql[f] = g
            else:
                qr[f] = g
        return ql, qr

    def embed_space(self, u: np.ndarray) -> np.ndarray:
        """Spacetime coefficients of ``u^n(x)`` extended constantly in time."""
        return np.einsum("ckl,cl->ck", self.embed, u)

    def sliver_faces(self) -> list[np.ndarray]:
        """Face indices touching each sliver."""
        out = []
        for k in range(self.ns):
            v = self.nc + k
            out.append(np.flatnonzero((self.fl == v) | (self.fr == v)))
        return out

    def same_geometry(self, other: "Slab") -> bool:
        """True when ``other`` has identical nodes, step, slivers and basis."""
        return (
            other is not None
            and other.N == self.N
            and other.basis == self.basis
            and other.dt == self.dt
            and np.array_equal(other.mesh.nodes_old, self.mesh.nodes_old)
            and np.array_equal(other.mesh.nodes_new, self.mesh.nodes_new)
            and other.slivers == self.slivers
        )

    # -- coefficient conversion to the monomial bases -------------------------

    def _monomial_st(self, v):
        """Monomial basis of volume ``v`` at its quadrature points."""
        s = (self.vx[v] - self.centre[v]) / self.scale[v]
        tau = (self.vt[v] - self.t0) / self.dt
        return theta_table(self.N, s, tau)

    def st_to_monomial(self, v: int, q: np.ndarray) -> np.ndarray:
        """Monomial spacetime coefficients of the working-basis polynomial ``q``."""
        if self.basis == "monomial":
            return np.array(q, dtype=float)
        sw = np.sqrt(np.abs(self.vw[v]))
        P = self._monomial_st(v) * sw[:, None]
        return np.linalg.lstsq(P, (self.TH[v] @ q) * sw, rcond=None)[0]

    def st_from_monomial(self, v: int, q_mono: np.ndarray) -> np.ndarray:
        if self.basis == "monomial":
            return np.array(q_mono, dtype=float)
        sw = np.sqrt(np.abs(self.vw[v]))
        return np.linalg.lstsq(self.TH[v] * sw[:, None], (self._monomial_st(v) @ q_mono) * sw, rcond=None)[0]

    def to_monomial(self, u: np.ndarray) -> np.ndarray:
        """Cell coefficients in the monomial basis ``((x - b) / dx)**l``."""
        return np.asarray(u) @ self.space_to_monomial.T

    def from_monomial(self, u_mono: np.ndarray) -> np.ndarray:
        return np.asarray(u_mono) @ self.space_from_monomial.T


def cell_integral(slab: Slab, u: np.ndarray, at_new: bool = False) -> np.ndarray:
    """``int_{Omega_i} u_i dx`` per cell, at ``t^n`` (default) or ``t^{n+1}``."""
    phi, w = (slab.PHI1, slab.w1) if at_new else (slab.PHI0, slab.w0)
    return np.einsum("cpl,cp,cl->c", phi, w, u)


def cell_energy(slab: Slab, u: np.ndarray, at_new: bool = False) -> np.ndarray:
    phi, w = (slab.PHI1, slab.w1) if at_new else (slab.PHI0, slab.w0)
    vals = np.einsum("cpl,cl->cp", phi, u)
    return np.einsum("cp,cp->c", w, vals**2)
