"""Von Neumann analysis of ADER-DG for linear advection ``q_t + a q_x = 0``.

Amplification matrices act on the modal coefficients (monomial basis)
of one periodic block under the Fourier mode ``exp(i kappa x)`` with
``theta = kappa * dx``:

* classical explicit, static mesh: closed form from the reference matrices,
* classical explicit/implicit on a uniformly translating mesh, and the
  two-cell block with one sliver: assembled from a :class:`FourierBlock`,
  which takes the same quadrature tables as the solver but does its own
  linear algebra (upwind fluxes, direct predictor solves, Fourier phases).

Scans, CFL threshold searches and (delta, CFL) stability maps are built on
top; ``dx = 1`` and ``dt = CFL / |a|`` throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .geometry import MovingMesh, make_slivers
from .refbasis import assemble_reference_matrices
from .slab import Slab

VARIANTS = ("explicit", "implicit", "explicit-sliver", "implicit-sliver")

# CFL limits of the classical explicit scheme (N = 1..9); N = 0 is first-order upwind
CFL_MAX = {0: 1.0, 1: 0.333, 2: 0.170, 3: 0.104, 4: 0.069, 5: 0.050, 6: 0.037, 7: 0.029, 8: 0.023, 9: 0.018}

# max_rho - 1 below this is round-off for every N <= 9
ROUNDOFF_FLOOR = 1e-12

_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


class StabilityError(ArithmeticError):
    pass


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class ScanParams:
    theta_grid: int = 1001
    cfl_min: float = 0.005
    cfl_max: float = 0.5
    cfl_points: int = 160
    velocity: float = 0.0
    delta: float = 0.0
    speed: float = 1.0
    refine: bool = True
    spacing: str = "log"

    def __post_init__(self):
        if self.theta_grid < 2:
            raise ValueError("theta grid needs both endpoints")
        if not 0 < self.cfl_min < self.cfl_max:
            raise ValueError("need 0 < cfl_min < cfl_max")
        if self.cfl_points < 2:
            raise ValueError("need at least two CFL samples")
        if not 0.0 <= self.delta <= 0.5:
            raise ValueError("delta must lie in [0, 0.5]")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"unknown CFL spacing {self.spacing!r}")

    def thetas(self) -> np.ndarray:
        return np.linspace(0.0, 2.0 * np.pi, self.theta_grid)

    def cfls(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.cfl_min, self.cfl_max, self.cfl_points)
        return np.linspace(self.cfl_min, self.cfl_max, self.cfl_points)

    def with_delta(self, delta: float) -> "ScanParams":
        return replace(self, delta=float(delta))


@dataclass(frozen=True)
class StabilityResult:
    max_rho: float
    argmax_theta: float
    stable: bool
    epsilon: float = 0.0
    cfl: float = float("nan")

    @property
    def verdict(self) -> str:
        return "stable" if self.stable else "unstable"


# --- spectral radius -------------------------------------------------------------


def spectral_radius(A, backend=None) -> float:
    """Largest eigenvalue modulus (Hessenberg + shifted QR by default)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    return float(kernels.spectral_radii(A[None], backend)[0])


# --- classical explicit closed form ---------------------------------------------------


@lru_cache(maxsize=256)
def _closed_form_parts(N: int, cfl: float):
    R = assemble_reference_matrices(N)
    K = R.k_tau_st + R.k0_st + cfl * R.k_xi_st
    try:
        P = np.linalg.solve(K, R.m0)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"singular predictor operator at CFL={cfl}") from exc
    B1 = np.linalg.solve(R.m, (R.k_xi - R.f_minus_r) @ P)
    B2 = np.linalg.solve(R.m, R.f_minus_l @ P)
    return B1, B2


def _closed_form(N, cfl, theta):
    B1, B2 = _closed_form_parts(N, float(cfl))
    z = np.exp(-1j * np.asarray(theta, dtype=float))
    return np.eye(N + 1) + cfl * (B1 + z[..., None, None] * B2)


# --- Fourier-reduced block operators -------------------------------------------------


class FourierBlock:
    """Linear LAE operators of one periodic block, as Laurent polynomials.

    The block holds ``n_cells`` unit cells (one, or two with a sliver of
    half-width ``delta`` on the inner interface).  Every operator is a dict
    ``{m: matrix}`` meaning ``sum_m z**m * matrix`` with
    ``z = exp(i theta n_cells)``.
    """

    def __init__(self, N: int, cfl: float, speed: float = 1.0, velocity: float = 0.0, delta: float = 0.0, n_cells: int = 1):
        if cfl <= 0:
            raise ValueError("CFL must be positive")
        if delta > 0 and n_cells != 2:
            raise ValueError("the sliver block has two cells")
        self.N, self.cfl, self.a = N, float(cfl), float(speed)
        dt = self.cfl / abs(self.a) if self.a != 0 else self.cfl
        mesh = MovingMesh.uniform(0.0, float(n_cells), n_cells, dt, velocity=velocity)
        slivers = make_slivers(mesh, "every-other", delta) if delta > 0 else []
        self.slab = s = Slab(N, mesh, slivers)
        self.nc, self.nv, self.P = s.nc, s.nv, float(n_cells)
        self.nsp, self.nst = s.n_sp, s.n_st
        self._faces()

    def _faces(self):
        """Per-face upwind weights and test/trial pairings with their phase."""
        s, a = self.slab, self.a
        lam = a * s.fn[:, 0] + s.fn[:, 1]
        self.lam_plus = np.maximum(lam, 0.0)
        self.lam_minus = np.minimum(lam, 0.0)
        shift_l = np.asarray(s.layout.shift_left)
        shift_r = np.asarray(s.layout.shift_right)
        self.entries = []  # (face, row side, col side, sign, coefficient, phase power)
        for f in range(len(s.fl)):
            sides = {"L": (s.fl[f], shift_l[f], 1.0, self.lam_plus[f]), "R": (s.fr[f], shift_r[f], -1.0, self.lam_minus[f])}
            for rk, (rv, rs, sign, _) in sides.items():
                for ck, (cv, cs, _, coef) in sides.items():
                    if coef == 0.0:
                        continue
                    m = int(round((rs - cs) / self.P))
                    self.entries.append((f, rk, rv, ck, cv, sign, coef, m))

    def _face_tables(self, f, side, test):
        s = self.slab
        if test == "psi":
            return s.fPSl[f] if side == "L" else s.fPSr[f]
        return s.fTHl[f] if side == "L" else s.fTHr[f]

    def flux_operator(self, rows, test):
        """``sum_faces int T_r F_out`` as ``{m: (rows x volumes x n_test x n_st)}``."""
        s = self.slab
        n_test = self.nsp if test == "psi" else self.nst
        rows = list(rows)
        out = {}
        for f, rk, rv, ck, cv, sign, coef, m in self.entries:
            if rv not in rows:
                continue
            T = self._face_tables(f, rk, test)
            Th = s.fTHl[f] if ck == "L" else s.fTHr[f]
            blk = sign * coef * np.einsum("pk,p,pl->kl", T, s.fw[f], Th)
            arr = out.setdefault(m, np.zeros((len(rows), self.nv, n_test, self.nst)))
            arr[rows.index(rv), cv] += blk
        return out

    # -- explicit -------------------------------------------------------------------

    def cell_predictors(self) -> np.ndarray:
        """Exact LAE predictor maps ``q_c = P_c u_c``: ``(nc, n_st, n_sp)``."""
        s = self.slab
        lhs = s.pred_lhs + self.a * s.Dx[: self.nc]
        return np.linalg.solve(lhs, s.pred_rhs)

    def explicit_parts(self) -> dict:
        s, nc, nsp, nst = self.slab, self.nc, self.nsp, self.nst
        Pc = self.cell_predictors()
        # predictors of every volume as Laurent maps from the block's u (nc*nsp)
        Q = {0: np.zeros((self.nv, nst, nc * nsp), dtype=complex)}
        for c in range(nc):
            Q[0][c, :, c * nsp : (c + 1) * nsp] = Pc[c]
        if self.nv > nc:
            sl = list(range(nc, self.nv))
            Fs = self.flux_operator(sl, "theta")
            for j, v in enumerate(sl):
                own = Fs[0][j, v] if 0 in Fs else 0.0
                Kinv = np.linalg.inv(own - s.Dt[v].T - self.a * s.Dx[v].T)
                for m, arr in Fs.items():
                    for c in range(nc):
                        if arr[j, c].any():
                            tgt = Q.setdefault(m, np.zeros_like(Q[0]))
                            tgt[v] -= Kinv @ arr[j, c] @ Q[0][c]
        # corrector
        F = self.flux_operator(range(nc), "psi")
        vol = np.einsum("cpk,cp,cpl->ckl", s.PSt + self.a * s.PSx, s.vw[:nc], s.TH[:nc])
        rhs = {0: np.zeros((nc, nsp, nc * nsp), dtype=complex)}
        for c in range(nc):
            rhs[0][c, :, c * nsp : (c + 1) * nsp] += s.corr_bottom[c]
            rhs[0][c] += vol[c] @ Q[0][c]
        for m, arr in F.items():
            for mq, Qm in Q.items():
                tgt = rhs.setdefault(m + mq, np.zeros_like(rhs[0]))
                for c in range(nc):
                    for v in range(self.nv):
                        if arr[c, v].any():
                            tgt[c] -= arr[c, v] @ Qm[v]
        out = {}
        for m, r in rhs.items():
            u = np.stack([np.linalg.solve(s.corr_top[c], r[c]) for c in range(nc)])
            out[m] = u.reshape(nc * nsp, nc * nsp)
        return out

    # -- implicit ---------------------------------------------------------------------

    def implicit_system(self):
        """``K(z) q = B u`` over all volumes; returns ``(K parts, B)``."""
        s, nc, nst = self.slab, self.nc, self.nst
        nv = self.nv
        F = self.flux_operator(range(nv), "theta")
        K = {m: np.zeros((nv * nst, nv * nst), dtype=complex) for m in F}
        K.setdefault(0, np.zeros((nv * nst, nv * nst), dtype=complex))
        for v in range(nv):
            blk = -s.Dt[v].T - self.a * s.Dx[v].T
            if v < nc:
                blk = blk + s.top_st[v]
            K[0][v * nst : (v + 1) * nst, v * nst : (v + 1) * nst] += blk
        for m, arr in F.items():
            for r in range(nv):
                for c in range(nv):
                    K[m][r * nst : (r + 1) * nst, c * nst : (c + 1) * nst] += arr[r, c]
        B = np.zeros((nv * nst, nc * self.nsp))
        for c in range(nc):
            B[c * nst : (c + 1) * nst, c * self.nsp : (c + 1) * self.nsp] = s.pred_rhs[c]
        return K, B

    def projection(self) -> np.ndarray:
        s, nc, nsp, nst = self.slab, self.nc, self.nsp, self.nst
        Pr = np.zeros((nc * nsp, nc * nst))
        for c in range(nc):
            Pr[c * nsp : (c + 1) * nsp, c * nst : (c + 1) * nst] = np.linalg.solve(s.mass_new[c], s.proj_new[c])
        return Pr

    # -- evaluation ---------------------------------------------------------------------

    def to_monomial(self) -> tuple[np.ndarray, np.ndarray]:
        T = np.kron(np.eye(self.nc), self.slab.space_to_monomial)
        return T, np.linalg.inv(T)

    def phase(self, theta):
        return np.exp(1j * self.P * np.asarray(theta, dtype=float))


def _laurent_eval(parts: dict, z: np.ndarray) -> np.ndarray:
    out = 0
    for m, mat in parts.items():
        out = out + (z**m)[..., None, None] * mat
    return out


@lru_cache(maxsize=64)
def _explicit_block(N, cfl, speed, velocity, delta, n_cells, monomial=True):
    blk = FourierBlock(N, cfl, speed, velocity, delta, n_cells)
    parts = blk.explicit_parts()
    if monomial:
        T, Ti = blk.to_monomial()
        parts = {m: T @ A @ Ti for m, A in parts.items()}
    return blk.P, parts


@lru_cache(maxsize=64)
def _implicit_block(N, cfl, speed, velocity, delta, n_cells, monomial=True):
    blk = FourierBlock(N, cfl, speed, velocity, delta, n_cells)
    K, B = blk.implicit_system()
    Pr = blk.projection()
    nst, nc = blk.nst, blk.nc
    n_c = nc * nst
    if blk.nv > nc:
        # eliminate the sliver unknowns (their self block carries no phase)
        Kss = K[0][n_c:, n_c:]
        for m, Km in K.items():
            if m != 0 and np.any(Km[n_c:, n_c:]):
                raise StabilityError("sliver self-coupling depends on theta")
        Kss_inv = np.linalg.inv(Kss)
        S = {}
        for m, Km in K.items():
            S[m] = S.get(m, 0) + Km[:n_c, :n_c]
        for m1, K1 in K.items():
            left = K1[:n_c, n_c:]
            if not left.any():
                continue
            for m2, K2 in K.items():
                right = K2[n_c:, :n_c]
                if right.any():
                    S[m1 + m2] = S.get(m1 + m2, 0) - left @ Kss_inv @ right
        K = S
        B = B[:n_c]
    if monomial:
        T, Ti = blk.to_monomial()
        return blk.P, K, B, T @ Pr, Ti
    return blk.P, K, B, Pr, np.eye(nc * blk.nsp)


def _check_basis(basis):
    if basis not in ("monomial", "working"):
        raise ValueError(f"basis must be 'monomial' or 'working', got {basis!r}")
    return basis == "monomial"


def amplification_explicit(N: int, cfl: float, theta, v: float = 0.0, speed: float = 1.0, basis: str = "monomial"):
    """Explicit amplification matrix.

    ``basis="monomial"`` gives monomial coordinates, ``"working"`` the solver's
    orthonormal ones (far better conditioned at high N).
    """
    theta = np.asarray(theta, dtype=float)
    monomial = _check_basis(basis)
    if monomial and v == 0.0 and speed == 1.0:
        return _closed_form(N, cfl, theta)
    P, parts = _explicit_block(N, float(cfl), float(speed), float(v), 0.0, 1, monomial)
    return _laurent_eval(parts, np.exp(1j * P * theta))


def amplification_explicit_assembled(N: int, cfl: float, theta, v: float = 0.0, speed: float = 1.0):
    """Same matrix as :func:`amplification_explicit`, always from the block assembler."""
    P, parts = _explicit_block(N, float(cfl), float(speed), float(v), 0.0, 1)
    return _laurent_eval(parts, np.exp(1j * P * np.asarray(theta, dtype=float)))


def _implicit_eval(P, K, B, TPr, Ti, theta):
    z = np.exp(1j * P * np.asarray(theta, dtype=float))
    Kz = _laurent_eval(K, z)
    X = np.linalg.solve(Kz, np.broadcast_to(B, Kz.shape[:-2] + B.shape).astype(complex))
    return TPr @ X @ Ti


def amplification_implicit(N: int, cfl: float, theta, v: float = 0.0, speed: float = 1.0, basis: str = "monomial"):
    blk = _implicit_block(N, float(cfl), float(speed), float(v), 0.0, 1, _check_basis(basis))
    return _implicit_eval(*blk, theta)


def amplification_sliver(N: int, cfl: float, delta: float, theta, scheme: str = "explicit", speed: float = 1.0, basis: str = "monomial"):
    """Two-cell block with a sliver on the inner interface; size ``2(N+1)``."""
    if not 0.0 <= delta <= 0.5:
        raise ValueError("delta must lie in [0, 0.5]")
    monomial = _check_basis(basis)
    if scheme == "explicit":
        P, parts = _explicit_block(N, float(cfl), float(speed), 0.0, float(delta), 2, monomial)
        return _laurent_eval(parts, np.exp(1j * P * np.asarray(theta, dtype=float)))
    if scheme == "implicit":
        blk = _implicit_block(N, float(cfl), float(speed), 0.0, float(delta), 2, monomial)
        return _implicit_eval(*blk, theta)
    raise ValueError(f"unknown scheme {scheme!r}")


def amplification(variant: str, N: int, cfl: float, theta, delta: float = 0.0, v: float = 0.0, speed: float = 1.0, basis: str = "monomial"):
    if variant == "explicit":
        return amplification_explicit(N, cfl, theta, v, speed, basis)
    if variant == "implicit":
        return amplification_implicit(N, cfl, theta, v, speed, basis)
    if variant == "explicit-sliver":
        return amplification_sliver(N, cfl, delta, theta, "explicit", speed, basis)
    if variant == "implicit-sliver":
        return amplification_sliver(N, cfl, delta, theta, "implicit", speed, basis)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# --- scans -------------------------------------------------------------------------------


def _rho_at(variant, N, cfl, theta, params, backend):
    A = amplification(variant, N, cfl, np.atleast_1d(theta), params.delta, params.velocity, params.speed)
    return kernels.spectral_radii(A, backend)


def scan_max_rho(N: int, cfl: float, params: ScanParams = ScanParams(), variant: str = "explicit", epsilon: float = 0.0, backend=None) -> StabilityResult:
    """``max_theta rho(A)`` on the grid, refined by golden-section search.

    ``A(2 pi - theta)`` is the complex conjugate of ``A(theta)``, so only the
    first half of the symmetric grid is evaluated.
    """
    th = params.thetas()
    th = th[: th.size // 2 + 1]
    rho = _rho_at(variant, N, cfl, th, params, backend)
    j = int(np.argmax(rho))
    best, arg = float(rho[j]), float(th[j])
    if params.refine:
        lo, hi = th[max(j - 1, 0)], th[min(j + 1, len(th) - 1)]
        f = lambda t: float(_rho_at(variant, N, cfl, t, params, backend)[0])  # noqa: E731
        c, d = hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo)
        fc, fd = f(c), f(d)
        for _ in range(40):
            if fc > fd:
                hi, d, fd = d, c, fc
                c = hi - _GOLDEN * (hi - lo)
                fc = f(c)
            else:
                lo, c, fc = c, d, fd
                d = lo + _GOLDEN * (hi - lo)
                fd = f(d)
            if hi - lo < 1e-10:
                break
        for t, val in ((c, fc), (d, fd)):
            if val > best:
                best, arg = val, float(t)
    stable = best <= 1.0 + max(epsilon, ROUNDOFF_FLOOR)
    return StabilityResult(best, arg, stable, epsilon, float(cfl))


def scan_curve(N: int, cfls, params: ScanParams = ScanParams(), variant: str = "explicit", backend=None) -> list[StabilityResult]:
    return [scan_max_rho(N, c, params, variant, backend=backend) for c in cfls]


def _excess(N, cfl, params, variant, backend):
    return scan_max_rho(N, cfl, params, variant, backend=backend).max_rho - 1.0


def find_rightmost_jump(N: int, params: ScanParams = ScanParams(), variant: str = "explicit", backend=None, resolution=1e-7):
    """Locate the rightmost jump of ``max_rho - 1`` over the CFL range.

    A jump is a step of more than a decade between neighbouring CFL samples:
    a new eigenvalue branch leaves the unit circle on top of a slowly varying
    plateau.  The bracket is bisected, classifying a CFL as plateau while its
    excess stays within 10% of the bracket's left end.  Returns
    ``(cfl_jump, left_value, right_value)``.
    """
    cfls = params.cfls()
    ex = np.maximum([_excess(N, c, params, variant, backend) for c in cfls], 1e-16)
    big = np.flatnonzero(ex[1:] > 10.0 * ex[:-1])
    if big.size == 0:
        raise SearchError(f"no jump in max_rho for N={N} in [{params.cfl_min}, {params.cfl_max}]")
    k = big[-1]
    # walk back to the onset: the plateau changes by a few percent per sample
    while k > 0 and ex[k] > 3.0 * ex[k - 1]:
        k -= 1
    lo, hi = cfls[k], cfls[k + 1]
    elo, ehi = ex[k], ex[k + 1]
    ceiling = 1.1 * elo
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        em = max(_excess(N, mid, params, variant, backend), 1e-16)
        if em <= ceiling:
            lo, elo = mid, em
        else:
            hi, ehi = mid, em
    return 0.5 * (lo + hi), float(elo), float(ehi)


def practical_epsilon(N: int, params: ScanParams = ScanParams(), variant: str = "explicit", backend=None) -> float:
    """Overshoot ``max_rho - 1`` on the plateau just left of the rightmost jump."""
    _, left, _ = find_rightmost_jump(N, params, variant, backend)
    return max(left, 0.0)


def cfl_threshold_search(N: int, variant: str = "explicit", epsilon: float = 0.0, params: ScanParams = ScanParams(), resolution: float = 1e-5, backend=None) -> float:
    """Largest CFL where ``max_rho <= 1 + epsilon`` with instability just above.

    ``epsilon = 0`` uses the round-off floor; the rightmost stable-to-unstable
    crossing on the coarse grid is refined by bisection.
    """
    eps = max(float(epsilon), ROUNDOFF_FLOOR)
    cfls = params.cfls()
    ok = np.array([scan_max_rho(N, c, params, variant, eps, backend).stable for c in cfls])
    idx = np.flatnonzero(ok[:-1] & ~ok[1:])
    if idx.size == 0:
        raise SearchError(f"no stability crossing for N={N}, variant={variant}, epsilon={epsilon:g}")
    lo, hi = cfls[idx[-1]], cfls[idx[-1] + 1]
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if scan_max_rho(N, mid, params, variant, eps, backend).stable:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def stability_map(N: int, deltas, cfls, variant: str = "explicit-sliver", epsilon: float = 0.0, params: ScanParams = ScanParams(), backend=None):
    """Verdict grid over ``(delta, CFL)``; returns a list of row dicts."""
    rows = []
    for d in deltas:
        if not 0.0 <= d <= 0.5:
            raise ValueError(f"delta {d} outside [0, 0.5]")
        p = params.with_delta(d)
        for c in cfls:
            r = scan_max_rho(N, float(c), p, variant, epsilon, backend)
            rows.append({"N": N, "delta": float(d), "CFL": float(c), "max_rho": r.max_rho, "verdict": r.verdict})
    return rows


# --- CSV output ----------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    """Rows are dicts keyed by ``header``; ``path`` may be an open text handle."""
    if hasattr(path, "write"):
        _write_rows(path, header, rows)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])


def write_threshold_csv(path, rows):
    write_csv(path, ["N", "variant", "epsilon", "cfl_threshold"], rows)


def write_scan_csv(path, rows):
    write_csv(path, ["N", "CFL", "max_rho", "argmax_theta"], rows)


def write_map_csv(path, rows):
    write_csv(path, ["N", "delta", "CFL", "max_rho", "verdict"], rows)
