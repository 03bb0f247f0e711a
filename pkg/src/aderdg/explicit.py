"""Explicit ALE ADER-DG: local spacetime predictors followed by a corrector.

One step runs three phases on a :class:`~aderdg.slab.Slab`:

1. element predictors (independent per control volume, Picard iteration),
2. sliver predictors (need both neighbouring element predictors),
3. correctors (need every predictor touching the element).

Coefficient arrays are stacked: ``u`` has shape ``(n_cells, N+1)`` and the
predictors ``(n_volumes, n_st)`` with slivers after the cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .flux import FluxDef, rusanov_ale_flux, rusanov_partials
from .geometry import MovingMesh
from .slab import Slab


class PicardError(ArithmeticError):
    """A predictor fixed-point iteration hit ``max_iter``."""

    def __init__(self, message, residual=float("nan"), owners=()):
        super().__init__(message)
        self.residual = residual
        self.owners = tuple(owners)


class SequencingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-12
    max_iter: int = 100
    atol: float = 1e-14

    def __post_init__(self):
        if not self.tol > 0 or not self.atol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class ElementState:
    coeffs: np.ndarray
    index: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite element coefficients")


@dataclass
class PredictorState:
    coeffs: np.ndarray
    owner: int = 0
    iterations: int = 0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)


# --- flux projection -----------------------------------------------------------


def l2_project_flux(slab: Slab, q: np.ndarray, flux: FluxDef, volumes=None) -> np.ndarray:
    """L2 projection of ``f(q)`` onto the spacetime basis of each volume.

    ``q`` holds one coefficient row per entry of ``volumes`` (all volumes by
    default).  For a linear flux this is ``a * q`` exactly.
    """
    vols = np.arange(slab.nv) if volumes is None else np.atleast_1d(volumes)
    q = np.asarray(q, dtype=float).reshape(len(vols), slab.n_st)
    if flux.is_linear:
        return flux.speed * q
    TH, w = slab.TH[vols], slab.vw[vols]
    vals = flux.f(np.einsum("vpk,vk->vp", TH, q))
    rhs = np.einsum("vpk,vp,vp->vk", TH, w, vals)
    return np.linalg.solve(slab.gram[vols], rhs[..., None])[..., 0]


def _flux_at(slab: Slab, vols, q, flux: FluxDef):
    vals = np.einsum("vpk,vk->vp", slab.TH[vols], q)
    return vals, flux.f(vals)


# --- element predictor -------------------------------------------------------------


def _predictor_operators(slab: Slab, flux: FluxDef):
    key = ("pred", flux.name, flux.speed)
    if key not in slab.cache:
        nc = slab.nc
        lhs = slab.pred_lhs
        src = np.linalg.solve(lhs, slab.pred_rhs)
        if flux.is_linear:
            H = flux.speed * np.linalg.solve(lhs, slab.Dx[:nc])
        else:
            proj = np.linalg.solve(
                slab.gram[:nc], np.einsum("cpk,cp->ckp", slab.TH[:nc], slab.vw[:nc])
            )
            H = np.linalg.solve(lhs, slab.Dx[:nc] @ proj)
        slab.cache[key] = (src, H)
    return slab.cache[key]


def predict_elements(slab: Slab, u: np.ndarray, flux: FluxDef, cfg: PicardConfig = PicardConfig(), backend=None):
    """Predictors on every classical control volume; returns ``(q, iterations)``."""
    u = np.asarray(u, dtype=float)
    src, H = _predictor_operators(slab, flux)
    s = np.einsum("ckl,cl->ck", src, u)
    q0 = slab.embed_space(u)
    if flux.is_linear:
        q, iters = kernels.picard_linear(s, H, slab.TH[: slab.nc], q0, cfg.tol, cfg.atol, cfg.max_iter, backend)
    elif flux.kind >= 0:
        q, iters = kernels.picard_nonlinear(
            s, H, slab.TH[: slab.nc], flux.kind, flux.speed, q0, cfg.tol, cfg.atol, cfg.max_iter, backend
        )
    else:
        q, iters = _picard_generic(s, H, slab.TH[: slab.nc], flux, q0, cfg)
    bad = np.flatnonzero(iters < 0)
    if bad.size or not np.all(np.isfinite(q)):
        raise PicardError(f"element predictor did not converge on cells {bad.tolist()}", owners=bad)
    return q, iters


def _picard_generic(s, H, E, flux, q0, cfg):
    def step(cur, m):
        vals = np.einsum("cpl,cl->cp", E[m], cur[m])
        return s[m] - np.einsum("ckp,cp->ck", H[m], flux.f(vals))

    return kernels._picard_np(step, E, q0, cfg.tol, cfg.atol, cfg.max_iter)


def predict_element(slab: Slab, i: int, u: ElementState, flux: FluxDef, cfg: PicardConfig = PicardConfig()) -> PredictorState:
    """Single-element predictor (same iteration as :func:`predict_elements`)."""
    src, H = _predictor_operators(slab, flux)
    s = src[i] @ u.coeffs
    q0 = slab.embed[i] @ u.coeffs
    if flux.is_linear:
        q, it = kernels.picard_linear(s[None], H[i : i + 1], slab.TH[i : i + 1], q0[None], cfg.tol, cfg.atol, cfg.max_iter, "numpy")
    else:
        q, it = _picard_generic(s[None], H[i : i + 1], slab.TH[i : i + 1], flux, q0[None], cfg)
    if it[0] < 0:
        raise PicardError(f"element predictor did not converge on cell {i}", owners=(i,))
    return PredictorState(q[0], owner=i, iterations=int(it[0]))


# --- sliver predictor -----------------------------------------------------------------

# residual level treated as converged when coefficient updates stagnate
_ROUNDOFF = 1e-13


def _sliver_residual(slab, k, faces, qs, q_all, flux):
    """Residual of the sliver equation, its Jacobian with frozen dissipation,
    and the magnitude of the summed terms (for a round-off aware stop)."""
    v = slab.nc + k
    vals, fv = _flux_at(slab, [v], qs[None], flux)
    t_time = slab.Dt[v].T @ qs
    t_flux = slab.THx[v].T @ (slab.vw[v] * fv[0])
    res = -t_time - t_flux
    mag = np.abs(t_time) + np.abs(t_flux)
    dfv = flux.df(vals[0])
    jac = -slab.Dt[v].T - np.einsum("pk,p,pl->kl", slab.THx[v], slab.vw[v] * dfv, slab.TH[v])
    for f in faces:
        own_left = slab.fl[f] == v
        TH_own = slab.fTHl[f] if own_left else slab.fTHr[f]
        TH_oth = slab.fTHr[f] if own_left else slab.fTHl[f]
        other = slab.fr[f] if own_left else slab.fl[f]
        q_own = TH_own @ qs
        q_oth = TH_oth @ q_all[other] if other >= 0 else slab.ghost_values(f)
        n = slab.fn[f] if own_left else -slab.fn[f]
        F = rusanov_ale_flux(q_own, q_oth, n, flux)
        dm, _ = rusanov_partials(q_own, q_oth, n[0], n[1], flux)
        t_face = TH_own.T @ (slab.fw[f] * F)
        res += t_face
        mag += np.abs(t_face)
        jac += np.einsum("pk,p,pl->kl", TH_own, slab.fw[f] * dm, TH_own)
    return res, jac, mag


def predict_sliver(slab: Slab, k: int, q_all: np.ndarray, flux: FluxDef, cfg: PicardConfig = PicardConfig(), faces=None) -> PredictorState:
    """Predictor on sliver ``k`` from the already computed neighbour predictors.

    The iteration starts from the constant average of the neighbouring
    traces and repeatedly solves the sliver equation with the flux
    linearised at the current iterate (dissipation frozen); for a linear
    flux it terminates after one update.
    """
    if faces is None:
        faces = slab.sliver_faces()[k]
    v = slab.nc + k
    if not np.all(np.isfinite(q_all[: slab.nc])):
        raise SequencingError("sliver predictor needs the element predictors first")
    traces = []
    for f in faces:
        other = slab.fr[f] if slab.fl[f] == v else slab.fl[f]
        oth_TH = slab.fTHr[f] if slab.fl[f] == v else slab.fTHl[f]
        traces.append(oth_TH @ q_all[other] if other >= 0 else slab.ghost_values(f))
    qs = np.mean(np.concatenate(traces)) * slab.unit[v]
    for it in range(1, cfg.max_iter + 1):
        res, jac, mag = _sliver_residual(slab, k, faces, qs, q_all, flux)
        if it > 1 and np.max(np.abs(res)) <= _ROUNDOFF * np.max(mag):
            return PredictorState(qs, owner=v, iterations=it - 1)
        dq = np.linalg.solve(jac, -res)
        qs = qs + dq
        if flux.is_linear or np.linalg.norm(dq) <= max(cfg.tol * np.linalg.norm(qs), cfg.atol):
            return PredictorState(qs, owner=v, iterations=it)
    raise PicardError(f"sliver predictor {k} did not converge", residual=float(np.linalg.norm(res)), owners=(v,))


def _linear_sliver_predictors(slab: Slab, q_all: np.ndarray, flux: FluxDef) -> np.ndarray:
    """All sliver predictors at once for a linear flux: ``J_k q_k = -r_k(0)``.

    The sliver Jacobians do not depend on the data, so their inverses are
    cached on the slab.
    """
    nc, ns = slab.nc, slab.ns
    key = ("sliver_inverse", flux.name, flux.speed)
    if key not in slab.cache:
        faces = slab.sliver_faces()
        zero = np.zeros(slab.n_st)
        jac = [_sliver_residual(slab, k, faces[k], zero, q_all, flux)[1] for k in range(ns)]
        slab.cache[key] = np.linalg.inv(np.array(jac))
    inv = slab.cache[key]
    q0 = q_all.copy()
    q0[nc:] = 0.0
    ql, qr = slab.face_traces(q0)
    F = face_fluxes_from_traces(slab, ql, qr, flux) * slab.fw
    r0 = np.zeros((slab.nv, slab.n_st))
    i = slab.fl_real
    np.add.at(r0, slab.fl[i], np.einsum("fpk,fp->fk", slab.fTHl[i], F[i]))
    i = slab.fr_real
    np.add.at(r0, slab.fr[i], -np.einsum("fpk,fp->fk", slab.fTHr[i], F[i]))
    q_all[nc:] = -np.einsum("vkl,vl->vk", inv, r0[nc:])
    return q_all


def predict_slivers(slab: Slab, q_all: np.ndarray, flux: FluxDef, cfg: PicardConfig = PicardConfig()) -> np.ndarray:
    """Fill the sliver rows of ``q_all`` in place and return it."""
    if slab.ns and flux.is_linear:
        if not np.all(np.isfinite(q_all[: slab.nc])):
            raise SequencingError("sliver predictor needs the element predictors first")
        return _linear_sliver_predictors(slab, q_all, flux)
    faces = slab.sliver_faces()
    for k in range(slab.ns):
        q_all[slab.nc + k] = predict_sliver(slab, k, q_all, flux, cfg, faces[k]).coeffs
    return q_all


# --- corrector -----------------------------------------------------------------------


def face_fluxes_from_traces(slab: Slab, ql, qr, flux: FluxDef, backend=None) -> np.ndarray:
    n = np.broadcast_to(slab.fn[:, None, :], ql.shape + (2,))
    return rusanov_ale_flux(ql, qr, n, flux, backend)


def face_fluxes(slab: Slab, q_all: np.ndarray, flux: FluxDef, backend=None) -> np.ndarray:
    """Numerical flux at every face quadrature point, normal pointing left to right."""
    ql, qr = slab.face_traces(q_all)
    return face_fluxes_from_traces(slab, ql, qr, flux, backend)


def correct_elements(slab: Slab, u: np.ndarray, q_all: np.ndarray, flux: FluxDef, backend=None) -> np.ndarray:
    """Corrector update of every cell; returns the coefficients at ``t^{n+1}``."""
    if q_all.shape[0] != slab.nv or not np.all(np.isfinite(q_all)):
        raise SequencingError("corrector needs every predictor (cells and slivers)")
    nc = slab.nc
    rhs = np.einsum("ckl,cl->ck", slab.corr_bottom, u)
    vals, fv = _flux_at(slab, np.arange(nc), q_all[:nc], flux)
    rhs += np.einsum("cpk,cp->ck", slab.PSt, slab.vw[:nc] * vals)
    rhs += np.einsum("cpk,cp->ck", slab.PSx, slab.vw[:nc] * fv)
    F = face_fluxes(slab, q_all, flux, backend) * slab.fw
    contrib_l = np.einsum("fpk,fp->fk", slab.fPSl, F)
    contrib_r = np.einsum("fpk,fp->fk", slab.fPSr, F)
    for side, contrib, sign in ((slab.fl, contrib_l, -1.0), (slab.fr, contrib_r, 1.0)):
        m = (side >= 0) & (side < nc)
        np.add.at(rhs, side[m], sign * contrib[m])
    return np.linalg.solve(slab.corr_top, rhs[..., None])[..., 0]


def correct_element(slab: Slab, i: int, u_old: ElementState, q_all: np.ndarray, flux: FluxDef) -> ElementState:
    """Corrector for a single element ``i`` (uses the batched update)."""
    u = np.zeros((slab.nc, slab.n_sp))
    u[i] = u_old.coeffs
    out = correct_elements(slab, u, q_all, flux)
    return ElementState(out[i], index=i, time=slab.t0 + slab.dt)


# --- full step -------------------------------------------------------------------------


def explicit_predictors(slab: Slab, u: np.ndarray, flux: FluxDef, cfg: PicardConfig = PicardConfig(), backend=None) -> np.ndarray:
    q_all = np.full((slab.nv, slab.n_st), np.nan)
    q_all[: slab.nc], _ = predict_elements(slab, u, flux, cfg, backend)
    return predict_slivers(slab, q_all, flux, cfg)


def step_explicit_slab(slab: Slab, u: np.ndarray, flux: FluxDef, cfg: PicardConfig = PicardConfig(), backend=None):
    """One explicit step on a prepared slab; returns ``(u_new, q_all)``."""
    q_all = explicit_predictors(slab, u, flux, cfg, backend)
    return correct_elements(slab, u, q_all, flux, backend), q_all


def step_explicit(u, mesh: MovingMesh, slivers, flux: FluxDef, cfg: PicardConfig = PicardConfig(), N=None, ghost=None, backend=None):
    """One explicit step; ``u`` has shape ``(n_cells, N+1)``."""
    u = np.asarray(u, dtype=float)
    N = u.shape[1] - 1 if N is None else N
    slab = Slab(N, mesh, slivers, ghost=ghost)
    return step_explicit_slab(slab, u, flux, cfg, backend)[0]
