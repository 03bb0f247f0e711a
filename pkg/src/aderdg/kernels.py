"""Hot inner loops, compiled with numba when available.

Every kernel has a numba implementation and a pure-numpy one with identical
semantics.  The backend is chosen once from the ``ADERDG_NUMBA`` environment
variable (``0``/``off`` disables numba) and can be overridden per call with
``backend="numba"`` or ``backend="numpy"``.

Flux kinds understood by the kernels: ``0`` linear ``f = a q``, ``1`` Burgers
``f = q**2 / 2``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("ADERDG_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "off", "no")

LINEAR = 0
BURGERS = 1


class KernelError(ArithmeticError):
    pass


def _njit(*args, **kwargs):
    if HAVE_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)
    return lambda f: f


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


# --- point-wise flux ---------------------------------------------------------


@_njit
def _flux_scalar(q, kind, a):
    if kind == 0:
        return a * q
    return 0.5 * q * q


@_njit
def _dflux_scalar(q, kind, a):
    if kind == 0:
        return a
    return q


@_njit
def _rusanov_nb(qm, qp, nx, nt, kind, a, out):
    for k in range(qm.size):
        fm = _flux_scalar(qm[k], kind, a)
        fp = _flux_scalar(qp[k], kind, a)
        if nx[k] == 0.0:
            s = 0.0
        else:
            s = max(
                abs(_dflux_scalar(qm[k], kind, a) * nx[k] + nt[k]),
                abs(_dflux_scalar(qp[k], kind, a) * nx[k] + nt[k]),
            )
        out[k] = 0.5 * (fp + fm) * nx[k] + 0.5 * (qp[k] + qm[k]) * nt[k] - 0.5 * s * (qp[k] - qm[k])


def flux_values(q, kind: int, a: float):
    return a * q if kind == LINEAR else 0.5 * q * q


def dflux_values(q, kind: int, a: float):
    return np.full_like(q, a) if kind == LINEAR else q


def _rusanov_np(qm, qp, nx, nt, kind, a):
    fm = flux_values(qm, kind, a)
    fp = flux_values(qp, kind, a)
    s = np.maximum(
        np.abs(dflux_values(qm, kind, a) * nx + nt),
        np.abs(dflux_values(qp, kind, a) * nx + nt),
    )
    s = np.where(nx == 0.0, 0.0, s)
    return 0.5 * (fp + fm) * nx + 0.5 * (qp + qm) * nt - 0.5 * s * (qp - qm)


def rusanov(qm, qp, nx, nt, kind: int, a: float = 1.0, backend: str | None = None):
    """ALE Rusanov flux for a built-in flux kind, broadcast over arrays."""
    qm, qp, nx, nt = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (qm, qp, nx, nt)))
    if resolve_backend(backend) == "numpy":
        return _rusanov_np(qm, qp, nx, nt, kind, a)
    out = np.empty(qm.size)
    _rusanov_nb(
        np.ascontiguousarray(qm).ravel(),
        np.ascontiguousarray(qp).ravel(),
        np.ascontiguousarray(nx).ravel(),
        np.ascontiguousarray(nt).ravel(),
        kind,
        float(a),
        out,
    )
    return out.reshape(qm.shape)


# --- element predictor fixed-point iterations ----------------------------------
#
# Convergence is measured on point values ``E q`` rather than on coefficients:
# in the monomial basis the coefficient map is badly conditioned for large N,
# so a coefficient-space test would stall at round-off long before the
# function itself stops changing.


@_njit
def _point_change(E, nxt, cur):
    du = 0.0
    nn = 0.0
    for p in range(E.shape[0]):
        a = 0.0
        b = 0.0
        for k in range(E.shape[1]):
            a += E[p, k] * (nxt[k] - cur[k])
            b += E[p, k] * nxt[k]
        du += a * a
        nn += b * b
    return np.sqrt(du), np.sqrt(nn)


@_njit
def _picard_linear_nb(s, H, E, q0, tol, atol, maxit, q, iters):
    nc = s.shape[0]
    for c in range(nc):
        cur = q0[c].copy()
        iters[c] = -1
        for it in range(1, maxit + 1):
            nxt = s[c] - H[c] @ cur
            du, nn = _point_change(E[c], nxt, cur)
            cur = nxt
            if not np.isfinite(nn):
                break
            if du <= max(tol * nn, atol):
                iters[c] = it
                break
        q[c] = cur


@_njit
def _picard_nonlinear_nb(s, H, E, kind, a, q0, tol, atol, maxit, q, iters):
    nc = s.shape[0]
    npts = E.shape[1]
    fv = np.empty(npts)
    for c in range(nc):
        cur = q0[c].copy()
        iters[c] = -1
        for it in range(1, maxit + 1):
            vals = E[c] @ cur
            for p in range(npts):
                fv[p] = _flux_scalar(vals[p], kind, a)
            nxt = s[c] - H[c] @ fv
            du, nn = _point_change(E[c], nxt, cur)
            cur = nxt
            if not np.isfinite(nn):
                break
            if du <= max(tol * nn, atol):
                iters[c] = it
                break
        q[c] = cur


def _picard_np(step, E, q0, tol, atol, maxit):
    """Numpy driver: ``step(cur, mask)`` returns the next iterate of masked rows."""
    cur = q0.copy()
    iters = np.full(len(q0), -1, dtype=np.int64)
    active = np.ones(len(q0), dtype=bool)
    for it in range(1, maxit + 1):
        nxt = step(cur, active)
        Em = E[active]
        du = np.linalg.norm(np.einsum("cpk,ck->cp", Em, nxt - cur[active]), axis=1)
        nn = np.linalg.norm(np.einsum("cpk,ck->cp", Em, nxt), axis=1)
        cur[active] = nxt
        conv = du <= np.maximum(tol * nn, atol)
        idx = np.flatnonzero(active)
        iters[idx[conv]] = it
        active[idx[conv]] = False
        active[idx[~np.isfinite(nn)]] = False
        if not active.any():
            break
    return cur, iters


def picard_linear(s, H, E, q0, tol, atol, maxit, backend=None):
    """Iterate ``q <- s - H q`` per row; returns ``(q, iterations)``.

    ``E[c]`` maps coefficients to point values for the stopping test.
    ``iterations[c] == -1`` marks a row that did not converge.
    """
    s = np.ascontiguousarray(s, dtype=float)
    H = np.ascontiguousarray(H, dtype=float)
    E = np.ascontiguousarray(E, dtype=float)
    q0 = np.ascontiguousarray(q0, dtype=float)
    if resolve_backend(backend) == "numpy":
        return _picard_np(
            lambda cur, m: s[m] - np.einsum("ckl,cl->ck", H[m], cur[m]), E, q0, tol, atol, maxit
        )
    q = np.empty_like(s)
    iters = np.empty(len(s), dtype=np.int64)
    _picard_linear_nb(s, H, E, q0, float(tol), float(atol), int(maxit), q, iters)
    return q, iters


def picard_nonlinear(s, H, E, kind, a, q0, tol, atol, maxit, backend=None):
    """Iterate ``q <- s - H f(E q)`` per row with a built-in flux kind."""
    s = np.ascontiguousarray(s, dtype=float)
    H = np.ascontiguousarray(H, dtype=float)
    E = np.ascontiguousarray(E, dtype=float)
    q0 = np.ascontiguousarray(q0, dtype=float)
    if resolve_backend(backend) == "numpy":

        def step(cur, m):
            vals = np.einsum("cpl,cl->cp", E[m], cur[m])
            return s[m] - np.einsum("ckp,cp->ck", H[m], flux_values(vals, kind, a))

        return _picard_np(step, E, q0, tol, atol, maxit)
    q = np.empty_like(s)
    iters = np.empty(len(s), dtype=np.int64)
    _picard_nonlinear_nb(s, H, E, int(kind), float(a), q0, float(tol), float(atol), int(maxit), q, iters)
    return q, iters


# --- dense complex eigenvalues: Hessenberg reduction + shifted QR ---------------


@_njit
def _hessenberg_inplace(A):
    n = A.shape[0]
    for k in range(n - 2):
        alpha = 0.0
        for r in range(k + 1, n):
            alpha += abs(A[r, k]) ** 2
        alpha = np.sqrt(alpha)
        if alpha == 0.0:
            continue
        x0 = A[k + 1, k]
        phase = x0 / abs(x0) if abs(x0) > 0.0 else 1.0 + 0.0j
        v = A[k + 1 :, k].copy()
        v[0] += phase * alpha
        vn = np.sqrt(np.sum(np.abs(v) ** 2))
        v /= vn
        # left: A[k+1:, :] -= 2 v (v^H A[k+1:, :])
        for col in range(k, n):
            acc = 0.0j
            for r in range(v.size):
                acc += np.conj(v[r]) * A[k + 1 + r, col]
            for r in range(v.size):
                A[k + 1 + r, col] -= 2.0 * v[r] * acc
        # right: A[:, k+1:] -= 2 (A[:, k+1:] v) v^H
        for row in range(n):
            acc = 0.0j
            for r in range(v.size):
                acc += A[row, k + 1 + r] * v[r]
            for r in range(v.size):
                A[row, k + 1 + r] -= 2.0 * acc * np.conj(v[r])
        for r in range(k + 2, n):
            A[r, k] = 0.0


@_njit
def _givens(a, b):
    r = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    if r == 0.0:
        return 1.0, 0.0j
    if abs(a) == 0.0:
        return 0.0, 1.0 + 0.0j
    c = abs(a) / r
    s = (a / abs(a)) * np.conj(b) / r
    return c, s


@_njit
def _qr_eigenvalues(H, max_sweeps):
    """Eigenvalues of an upper Hessenberg complex matrix (destroys ``H``)."""
    n = H.shape[0]
    eig = np.empty(n, dtype=np.complex128)
    eps = 2.220446049250313e-16
    hi = n - 1
    its = 0
    total = 0
    cs = np.empty(n)
    sn = np.empty(n, dtype=np.complex128)
    while hi >= 0:
        if hi == 0:
            eig[0] = H[0, 0]
            break
        lo = hi
        while lo > 0:
            scale = abs(H[lo - 1, lo - 1]) + abs(H[lo, lo])
            if scale == 0.0:
                scale = 1.0
            if abs(H[lo, lo - 1]) <= eps * scale:
                H[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eig[hi] = H[hi, hi]
            hi -= 1
            its = 0
            continue
        total += 1
        its += 1
        if total > max_sweeps:
            return eig, False
        if its % 11 == 10:
            mu = H[hi, hi] + abs(H[hi, hi - 1]) * (0.75 + 0.5j)
        else:
            a = H[hi - 1, hi - 1]
            b = H[hi - 1, hi]
            c = H[hi, hi - 1]
            d = H[hi, hi]
            half = 0.5 * (a - d)
            disc = np.sqrt(half * half + b * c)
            m1 = 0.5 * (a + d) + disc
            m2 = 0.5 * (a + d) - disc
            mu = m1 if abs(m1 - d) < abs(m2 - d) else m2
        for k in range(lo, hi + 1):
            H[k, k] -= mu
        for k in range(lo, hi):
            c, s = _givens(H[k, k], H[k + 1, k])
            cs[k] = c
            sn[k] = s
            for col in range(k, hi + 1):
                x = H[k, col]
                y = H[k + 1, col]
                H[k, col] = c * x + s * y
                H[k + 1, col] = -np.conj(s) * x + c * y
        for k in range(lo, hi):
            c = cs[k]
            s = sn[k]
            top = min(k + 2, hi)
            for row in range(lo, top + 1):
                x = H[row, k]
                y = H[row, k + 1]
                H[row, k] = x * c + y * np.conj(s)
                H[row, k + 1] = -x * s + y * c
        for k in range(lo, hi + 1):
            H[k, k] += mu
    return eig, True


@_njit
def _balance_inplace(A):
    """Parlett-Reinsch diagonal scaling by powers of two (eigenvalues unchanged)."""
    n = A.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = 0.0
            r = 0.0
            for j in range(n):
                if j != i:
                    c += abs(A[j, i])
                    r += abs(A[i, j])
            if c == 0.0 or r == 0.0:
                continue
            f = 1.0
            total = c + r
            while c < r / 2.0:
                c *= 2.0
                r /= 2.0
                f *= 2.0
            while c >= r * 2.0:
                c /= 2.0
                r *= 2.0
                f /= 2.0
            if c + r < 0.95 * total:
                done = False
                for j in range(n):
                    A[i, j] /= f
                    A[j, i] *= f


@_njit
def _eigvals_qr(A, max_sweeps):
    H = A.astype(np.complex128).copy()
    _balance_inplace(H)
    _hessenberg_inplace(H)
    return _qr_eigenvalues(H, max_sweeps)


@_njit
def _spectral_radii_nb(mats, out):
    n = mats.shape[1]
    for b in range(mats.shape[0]):
        ev, ok = _eigvals_qr(mats[b], 30 * n)
        if not ok:
            return b
        r = 0.0
        for k in range(n):
            r = max(r, abs(ev[k]))
        out[b] = r
    return -1


def eigvals_qr(A) -> np.ndarray:
    """Eigenvalues via the in-house Hessenberg + Wilkinson-shifted QR iteration."""
    A = np.ascontiguousarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    ev, ok = _eigvals_qr(A, 30 * A.shape[0])
    if not ok:
        raise KernelError("QR iteration did not converge")
    return ev


def spectral_radii(mats, backend: str | None = None) -> np.ndarray:
    """Spectral radius of every matrix in a ``(batch, n, n)`` stack."""
    mats = np.ascontiguousarray(mats, dtype=np.complex128)
    if mats.ndim == 2:
        mats = mats[None]
    if resolve_backend(backend) == "numpy":
        return np.abs(np.linalg.eigvals(mats)).max(axis=-1)
    out = np.empty(mats.shape[0])
    bad = _spectral_radii_nb(mats, out)
    if bad >= 0:
        raise KernelError(f"QR iteration did not converge for matrix {bad}")
    return out
