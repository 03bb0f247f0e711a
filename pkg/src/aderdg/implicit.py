"""Implicit ALE ADER-DG: one globally coupled spacetime system per step.

Every control volume and every sliver contributes ``n_st`` equations; the
unknowns are all predictor coefficients stacked as ``Q[v * n_st + k]``.
Cell rows carry the top/bottom time-slice terms, sliver rows only the flux
exchange and the volume term.  A linear flux is solved with one sparse LU
factorisation (reused while the slab geometry is unchanged); nonlinear
fluxes use Newton's method with a Jacobian-free GMRES inner solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .explicit import PicardConfig, PicardError, explicit_predictors
from .flux import FluxDef, rusanov_ale_flux, rusanov_partials
from .slab import Slab, _wdot

log = logging.getLogger(__name__)


class ImplicitSolveError(ArithmeticError):
    """Newton (or its inner linear solve) failed; carries the residual history."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-11
    max_newton: int = 50
    linear_solver: str = "gmres"  # "gmres" (Jacobian-free) or "direct" (frozen-dissipation Jacobian)
    gmres_restart: int = 30
    gmres_tol: float = 1e-13
    gmres_maxiter: int = 5
    fd_eps: float = 1e-7

    def __post_init__(self):
        if not (self.tol > 0 and self.gmres_tol > 0 and self.fd_eps > 0):
            raise ValueError("tolerances must be positive")
        if self.linear_solver not in ("gmres", "direct"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class ImplicitResult:
    q: np.ndarray  # (n_volumes, n_st)
    u_new: np.ndarray  # (n_cells, N+1)
    newton_iterations: int = 0
    history: list = field(default_factory=list)


class GlobalImplicitSystem:
    """Residual and Jacobian of the coupled implicit step on one slab."""

    def __init__(self, slab: Slab, u: np.ndarray, flux: FluxDef):
        self.slab = slab
        self.flux = flux
        self.u = np.asarray(u, dtype=float)
        self.n = slab.n_st
        self.size = slab.nv * slab.n_st
        self.bottom = np.zeros((slab.nv, self.n))
        self.bottom[: slab.nc] = np.einsum("ckl,cl->ck", slab.pred_rhs, self.u)

    # -- residual --------------------------------------------------------------

    def residual(self, Q: np.ndarray) -> np.ndarray:
        s, fl = self.slab, self.flux
        q = Q.reshape(s.nv, self.n)
        vals = np.einsum("vpk,vk->vp", s.TH, q)
        res = -np.einsum("vlk,vl->vk", s.Dt, q)
        res -= np.einsum("vpk,vp->vk", s.THx, s.vw * fl.f(vals))
        res[: s.nc] += np.einsum("ckl,cl->ck", s.top_st, q[: s.nc])
        res -= self.bottom
        ql, qr = s.face_traces(q)
        F = rusanov_ale_flux(ql, qr, np.broadcast_to(s.fn[:, None, :], ql.shape + (2,)), fl) * s.fw
        i = s.fl_real
        np.add.at(res, s.fl[i], np.einsum("fpk,fp->fk", s.fTHl[i], F[i]))
        i = s.fr_real
        np.add.at(res, s.fr[i], -np.einsum("fpk,fp->fk", s.fTHr[i], F[i]))
        return res.ravel()

    # -- Jacobian with the Rusanov dissipation frozen ------------------------------

    def jacobian(self, Q: np.ndarray) -> sp.csr_matrix:
        s, fl = self.slab, self.flux
        n = self.n
        q = Q.reshape(s.nv, n)
        vals = np.einsum("vpk,vk->vp", s.TH, q)
        diag = -np.swapaxes(s.Dt, 1, 2) - _wdot(s.THx, s.vw * fl.df(vals), s.TH)
        diag[: s.nc] += s.top_st
        rows, cols, blocks = [np.arange(s.nv)], [np.arange(s.nv)], [diag]
        ql, qr = s.face_traces(q)
        am, ap = rusanov_partials(ql, qr, s.fn[:, None, 0], s.fn[:, None, 1], fl)
        wm, wp = s.fw * am, s.fw * ap
        L, R = s.fl, s.fr
        for r_side, c_side, Tr, Tc, w, sign in (
            (L, L, s.fTHl, s.fTHl, wm, 1.0),
            (L, R, s.fTHl, s.fTHr, wp, 1.0),
            (R, L, s.fTHr, s.fTHl, wm, -1.0),
            (R, R, s.fTHr, s.fTHr, wp, -1.0),
        ):
            m = np.flatnonzero((r_side >= 0) & (c_side >= 0))
            rows.append(r_side[m])
            cols.append(c_side[m])
            blocks.append(sign * np.einsum("fpk,fp,fpl->fkl", Tr[m], w[m], Tc[m]))
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        b = np.concatenate(blocks)
        k = np.arange(n)
        ri = (r[:, None, None] * n + k[None, :, None]) + 0 * k[None, None, :]
        ci = (c[:, None, None] * n + k[None, None, :]) + 0 * k[None, :, None]
        self.last_block_diagonal = np.zeros((s.nv, n, n))
        same = r == c
        np.add.at(self.last_block_diagonal, r[same], b[same])
        return sp.csr_matrix((b.ravel(), (ri.ravel(), ci.ravel())), shape=(self.size, self.size))


# --- solves -----------------------------------------------------------------------------


def assemble_residual(q_all: np.ndarray, u: np.ndarray, slab: Slab, flux: FluxDef) -> np.ndarray:
    """Residual of the coupled implicit system at ``q_all``."""
    return GlobalImplicitSystem(slab, u, flux).residual(np.asarray(q_all, dtype=float).ravel())


def project_time_slice(slab: Slab, q_cells: np.ndarray) -> np.ndarray:
    """L2 projection of each cell predictor at ``t^{n+1}`` onto the spatial basis."""
    rhs = np.einsum("ckl,cl->ck", slab.proj_new, q_cells)
    return np.linalg.solve(slab.mass_new, rhs[..., None])[..., 0]


def _direct_linear(system: GlobalImplicitSystem) -> np.ndarray:
    slab = system.slab
    key = ("implicit_lu", system.flux.name, system.flux.speed)
    if key not in slab.cache:
        slab.cache[key] = spla.splu(system.jacobian(np.zeros(system.size)).tocsc())
    lu = slab.cache[key]
    b = -system.residual(np.zeros(system.size))
    return lu.solve(b)


def _initial_guess(slab, u, flux, q_prev, prev_slab):
    if q_prev is not None and (prev_slab is None or slab.same_geometry(prev_slab)):
        return np.array(q_prev, dtype=float).ravel()
    try:
        return explicit_predictors(slab, u, flux, PicardConfig()).ravel()
    except (PicardError, np.linalg.LinAlgError, FloatingPointError):
        q = np.zeros((slab.nv, slab.n_st))
        q[: slab.nc] = slab.embed_space(u)
        return q.ravel()


def _newton(system: GlobalImplicitSystem, Q: np.ndarray, cfg: NewtonConfig):
    history = []
    for it in range(cfg.max_newton + 1):
        R = system.residual(Q)
        rn = float(np.max(np.abs(R)))
        history.append(rn)
        if not np.isfinite(rn):
            raise ImplicitSolveError("non-finite residual", history)
        if rn <= cfg.tol:
            return Q, it, history
        if it == cfg.max_newton:
            break
        J = system.jacobian(Q)
        if cfg.linear_solver == "direct":
            dQ = spla.spsolve(J.tocsc(), -R)
        else:
            # Eisenstat-Walker forcing, floored at the configured GMRES tolerance
            ratio = history[-1] / history[-2] if it > 0 else 1.0
            forcing = max(cfg.gmres_tol, min(0.1, 0.9 * ratio**2))
            dQ = _jfnk_step(system, Q, R, cfg, forcing)
        Q = Q + dQ
    raise ImplicitSolveError(f"Newton did not reach {cfg.tol:g} in {cfg.max_newton} iterations", history)


def _jfnk_step(system, Q, R, cfg, rtol):
    n = system.n
    blocks = np.linalg.inv(system.last_block_diagonal)

    def prec(v):
        return np.einsum("vkl,vl->vk", blocks, v.reshape(-1, n)).ravel()

    qn = np.linalg.norm(Q)

    def jv(v):
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return np.zeros_like(v)
        eps = cfg.fd_eps * (1.0 + qn) / vn
        return (system.residual(Q + eps * v) - R) / eps

    A = spla.LinearOperator((system.size, system.size), matvec=jv, dtype=float)
    M = spla.LinearOperator((system.size, system.size), matvec=prec, dtype=float)
    dQ, info = spla.gmres(
        A, -R, rtol=rtol, atol=0.0, restart=cfg.gmres_restart, maxiter=cfg.gmres_maxiter, M=M
    )
    if not np.all(np.isfinite(dQ)):
        raise ImplicitSolveError("GMRES produced a non-finite update")
    if info < 0:
        raise ImplicitSolveError(f"GMRES breakdown (info={info})")
    return dQ


def solve_implicit_slab(
    slab: Slab,
    u: np.ndarray,
    flux: FluxDef,
    cfg: NewtonConfig = NewtonConfig(),
    q_prev=None,
    prev_slab=None,
    force_newton: bool = False,
) -> ImplicitResult:
    """One implicit step on a prepared slab (working-basis coefficients)."""
    system = GlobalImplicitSystem(slab, u, flux)
    if flux.is_linear and not force_newton:
        Q = _direct_linear(system)
        its, hist = 1, [float(np.max(np.abs(system.residual(Q))))]
    else:
        Q0 = _initial_guess(slab, u, flux, q_prev, prev_slab)
        Q, its, hist = _newton(system, Q0, cfg)
    q = Q.reshape(slab.nv, slab.n_st)
    if not np.all(np.isfinite(q)):
        raise ImplicitSolveError("non-finite implicit solution", hist)
    return ImplicitResult(q, project_time_slice(slab, q[: slab.nc]), its, hist)


def solve_implicit_step(u, mesh, slivers, flux: FluxDef, cfg: NewtonConfig = NewtonConfig(), N=None, ghost=None):
    """One implicit step from working-basis coefficients ``u``; returns ``(q, u_new)``."""
    u = np.asarray(u, dtype=float)
    N = u.shape[1] - 1 if N is None else N
    slab = Slab(N, mesh, slivers, ghost=ghost)
    res = solve_implicit_slab(slab, u, flux, cfg)
    return res.q, res.u_new
