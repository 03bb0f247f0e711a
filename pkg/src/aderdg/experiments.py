"""Time-stepping drivers, convergence studies, and mass/energy monitors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .explicit import PicardConfig, step_explicit_slab
from .flux import FluxDef, linear_advection
from .geometry import MovingMesh, make_slivers
from .implicit import NewtonConfig, solve_implicit_slab
from .refbasis import gauss_rule, phi_table
from .slab import Slab, legendre_table
from .vonneumann import CFL_MAX, write_csv

SCHEMES = ("explicit", "implicit")
IMPLICIT_CFL = 0.2


def space_table(N: int, s, basis: str = "orthonormal") -> np.ndarray:
    """Cell basis at reference coordinates ``s = (x - centre) / dx``."""
    return legendre_table(N, s) if basis == "orthonormal" else phi_table(N, s)


def _cell_points(nodes, n_points):
    r = gauss_rule(n_points)
    nodes = np.asarray(nodes, dtype=float)
    dx = np.diff(nodes)
    x = nodes[:-1, None] + dx[:, None] * r.nodes[None, :]
    return x, dx[:, None] * r.weights[None, :], r.nodes - 0.5


def project_initial(f: Callable, nodes, N: int, basis: str = "orthonormal") -> np.ndarray:
    """L2 projection of ``f`` onto degree-``N`` polynomials per cell (2N+4 points)."""
    x, w, s = _cell_points(nodes, 2 * N + 4)
    B = space_table(N, s, basis)
    dx = np.diff(np.asarray(nodes, dtype=float))
    mass = np.einsum("pk,p,pl->kl", B, w[0] / dx[0], B)
    rhs = np.einsum("pk,cp->ck", B, w * np.asarray(f(x), dtype=float)) / dx[:, None]
    return np.linalg.solve(mass, rhs.T).T


def evaluate(u, nodes, x, basis: str = "orthonormal") -> np.ndarray:
    """Point values of the piecewise polynomial at ``x`` (shape ``(nc, P)``)."""
    nodes = np.asarray(nodes, dtype=float)
    centre = 0.5 * (nodes[1:] + nodes[:-1])
    dx = np.diff(nodes)
    N = u.shape[1] - 1
    B = space_table(N, (x - centre[:, None]) / dx[:, None], basis)
    return np.einsum("cpk,ck->cp", B, u)


def l2_error(u: np.ndarray, exact: Callable, nodes, basis: str = "orthonormal") -> float:
    """``sqrt(sum_i int (u_i - exact)^2 dx)`` with 2N+4 Gauss points per cell."""
    u = np.asarray(u, dtype=float)
    x, w, _ = _cell_points(nodes, 2 * (u.shape[1] - 1) + 4)
    diff = evaluate(u, nodes, x, basis) - np.asarray(exact(x), dtype=float)
    return float(math.sqrt(max(np.sum(w * diff**2), 0.0)))


def total_mass(u, nodes, basis: str = "orthonormal") -> float:
    u = np.asarray(u, dtype=float)
    x, w, _ = _cell_points(nodes, u.shape[1] + 1)
    return float(np.sum(w * evaluate(u, nodes, x, basis)))


def total_energy(u, nodes, basis: str = "orthonormal") -> float:
    u = np.asarray(u, dtype=float)
    x, w, _ = _cell_points(nodes, u.shape[1] + 1)
    return float(np.sum(w * evaluate(u, nodes, x, basis) ** 2))


def periodic_gaussian(x_left: float = -6.0, x_right: float = 6.0, speed: float = 1.0):
    """Exact solution ``exp(-(x - a t)^2)`` wrapped onto the periodic domain."""
    L = x_right - x_left

    def exact(x, t=0.0):
        y = np.mod(np.asarray(x, dtype=float) - speed * t - x_left, L) + x_left
        return np.exp(-(y**2))

    return exact


# --- time stepping -----------------------------------------------------------------


@dataclass
class RunResult:
    u: np.ndarray
    nodes: np.ndarray
    time: float
    steps: int
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    newton_iterations: int = 0


def evolve(
    u0: np.ndarray,
    mesh: MovingMesh,
    flux: FluxDef,
    scheme: str = "explicit",
    final_time: float | None = None,
    n_steps: int | None = None,
    delta: float = 0.0,
    pattern: str = "interior",
    ghost=None,
    picard: PicardConfig = PicardConfig(),
    newton: NewtonConfig = NewtonConfig(),
    monitor: bool = True,
    backend=None,
) -> RunResult:
    """Advance ``u0`` (working-basis coefficients) on a uniformly moving mesh.

    ``mesh`` describes the first slab; later slabs keep the node velocity.
    With ``final_time`` the last step is shortened to land on it exactly.
    Slabs are reused while the geometry repeats and the boundary state is
    time independent.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if (final_time is None) == (n_steps is None):
        raise ValueError("give exactly one of final_time and n_steps")
    u = np.array(u0, dtype=float)
    N = u.shape[1] - 1
    dt = mesh.dt
    t = mesh.t0
    velocity = (mesh.nodes_new - mesh.nodes_old) / mesh.dt
    res = RunResult(u, mesh.nodes_old.copy(), t, 0)
    if monitor:
        res.times.append(t)
        res.mass.append(total_mass(u, mesh.nodes_old))
        res.energy.append(total_energy(u, mesh.nodes_old))
    slab = None
    q_prev = None
    step = 0
    nodes = mesh.nodes_old
    while True:
        if final_time is not None:
            remaining = final_time - t
            if remaining <= 1e-12 * max(1.0, abs(final_time)):
                break
            h = min(dt, remaining)
        else:
            if step >= n_steps:
                break
            h = dt
        cur = MovingMesh(nodes, nodes + velocity * h, h, mesh.periodic, t)
        reuse = slab is not None and ghost is None and cur.is_static and slab.dt == h
        prev_slab = slab
        if not reuse:
            slab = Slab(N, cur, make_slivers(cur, pattern, delta), ghost=ghost)
        if scheme == "explicit":
            u, _ = step_explicit_slab(slab, u, flux, picard, backend)
        else:
            r = solve_implicit_slab(slab, u, flux, newton, q_prev, prev_slab)
            u, q_prev = r.u_new, r.q
            res.newton_iterations += r.newton_iterations
        t = t + h
        step += 1
        nodes = cur.nodes_new
        if monitor:
            res.times.append(t)
            res.mass.append(total_mass(u, nodes))
            res.energy.append(total_energy(u, nodes))
    res.u, res.nodes, res.time, res.steps = u, np.array(nodes), t, step
    return res


# --- convergence ------------------------------------------------------------------------


# doubling sequences with a whole number of implicit steps up to T = 1 on [-6, 6]
DEFAULT_NE = {0: (48, 96, 192), 1: (48, 96, 192), 2: (24, 48, 96), 3: (24, 48, 96), 4: (24, 48, 96)}
DEFAULT_NE.update({N: (12, 24, 48) for N in range(5, 10)})


def default_dt(scheme: str, N: int, dx: float, speed: float = 1.0) -> float:
    cfl = 0.9 * CFL_MAX[N] if scheme == "explicit" else IMPLICIT_CFL
    return cfl * dx / abs(speed)


@dataclass(frozen=True)
class ConvergenceCase:
    scheme: str = "explicit"
    N: int = 1
    ne_list: tuple = (32, 64, 128)
    domain: tuple = (-6.0, 6.0)
    speed: float = 1.0
    final_time: float = 1.0
    delta: float = 0.0
    pattern: str = "interior"
    velocity: float = 0.0
    saturation: float = 1e-12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.N <= 9:
            raise ValueError("N must lie in 0..9")
        if len(self.ne_list) < 2 or any(n < 2 for n in self.ne_list):
            raise ValueError("need at least two element counts, each >= 2")
        if self.domain[1] <= self.domain[0]:
            raise ValueError("empty domain")


@dataclass
class ConvergenceReport:
    case: ConvergenceCase
    ne: list
    dx: list
    dt: list
    errors: list
    orders: list  # orders[k] between ne[k-1] and ne[k]; nan for k = 0

    @property
    def observed_order(self) -> float:
        """Order of the finest pair whose finer error is above the saturation level."""
        ok = [k for k in range(1, len(self.errors)) if self.errors[k] >= self.case.saturation]
        if not ok:
            return float("nan")
        return self.orders[ok[-1]]

    def rows(self):
        for k, ne in enumerate(self.ne):
            yield {
                "scheme": self.case.scheme + ("-sliver" if self.case.delta > 0 else ""),
                "N": self.case.N,
                "Ne": ne,
                "dx": self.dx[k],
                "dt": self.dt[k],
                "l2_error": self.errors[k],
                "observed_order": self.orders[k],
            }


class ConvergenceError(RuntimeError):
    pass


def run_case(case: ConvergenceCase, ne: int, backend=None) -> tuple[float, float, float]:
    """Run one resolution; returns ``(dx, dt, l2_error)``."""
    a, b = case.domain
    dx = (b - a) / ne
    dt = default_dt(case.scheme, case.N, dx, case.speed)
    exact = periodic_gaussian(a, b, case.speed)
    mesh = MovingMesh.uniform(a, b, ne, dt, velocity=case.velocity)
    u0 = project_initial(exact, mesh.nodes_old, case.N)
    res = evolve(u0, mesh, linear_advection(case.speed), case.scheme, final_time=case.final_time, delta=case.delta, pattern=case.pattern, monitor=False, backend=backend)
    err = l2_error(res.u, lambda x: exact(x, res.time), res.nodes)
    return dx, dt, err


def run_convergence(case: ConvergenceCase, backend=None) -> ConvergenceReport:
    dxs, dts, errs = [], [], []
    for ne in case.ne_list:
        try:
            dx, dt, e = run_case(case, ne, backend)
        except Exception as exc:
            raise ConvergenceError(f"solver failed for Ne={ne}: {exc}") from exc
        dxs.append(dx)
        dts.append(dt)
        errs.append(e)
    orders = [float("nan")]
    for k in range(1, len(errs)):
        ratio = case.ne_list[k] / case.ne_list[k - 1]
        orders.append(math.log(errs[k - 1] / errs[k]) / math.log(ratio) if errs[k] > 0 and errs[k - 1] > 0 else float("nan"))
    return ConvergenceReport(case, list(case.ne_list), dxs, dts, errs, orders)


def energy_series(
    u0: np.ndarray,
    mesh: MovingMesh,
    n_steps: int,
    flux: FluxDef | None = None,
    scheme: str = "implicit",
    delta: float = 0.0,
    pattern: str = "every-other",
    ghost=None,
) -> RunResult:
    """Per-step discrete energies ``int u^2 dx`` (and masses) over ``n_steps``."""
    flux = linear_advection(1.0) if flux is None else flux
    return evolve(u0, mesh, flux, scheme, n_steps=n_steps, delta=delta, pattern=pattern, ghost=ghost)


def is_non_increasing(values, rtol: float = 1e-10) -> bool:
    v = np.asarray(values, dtype=float)
    scale = max(float(np.max(np.abs(v))), np.finfo(float).tiny)
    return bool(np.all(np.diff(v) <= rtol * scale))


def mass_drift(result: RunResult) -> float:
    m = np.asarray(result.mass)
    return float(np.max(np.abs(m - m[0])) / max(abs(m[0]), np.finfo(float).tiny))


# --- CSV ---------------------------------------------------------------------------------

CONVERGENCE_HEADER = ["scheme", "N", "Ne", "dx", "dt", "l2_error", "observed_order"]
ENERGY_HEADER = ["step", "time", "energy"]


def write_convergence_csv(path, reports):
    write_csv(path, CONVERGENCE_HEADER, [r for rep in reports for r in rep.rows()])


def write_energy_csv(path, result: RunResult):
    rows = [{"step": k, "time": t, "energy": e} for k, (t, e) in enumerate(zip(result.times, result.energy))]
    write_csv(path, ENERGY_HEADER, rows)
