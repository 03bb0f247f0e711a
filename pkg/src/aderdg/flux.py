"""Scalar flux functions and the ALE Rusanov numerical flux."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels


@dataclass(frozen=True)
class FluxDef:
    """A scalar flux ``f`` with its derivative.

    ``kind`` selects a compiled kernel (``kernels.LINEAR`` / ``kernels.BURGERS``);
    ``-1`` means only the Python callables are available.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    kind: int = -1
    speed: float = 0.0

    @property
    def is_linear(self) -> bool:
        return self.kind == kernels.LINEAR


def linear_advection(a: float = 1.0) -> FluxDef:
    a = float(a)
    return FluxDef(
        "lae",
        lambda q: a * np.asarray(q, dtype=float),
        lambda q: np.full_like(np.asarray(q, dtype=float), a),
        kernels.LINEAR,
        a,
    )


def burgers() -> FluxDef:
    return FluxDef(
        "burgers",
        lambda q: 0.5 * np.asarray(q, dtype=float) ** 2,
        lambda q: np.asarray(q, dtype=float),
        kernels.BURGERS,
    )


def get_flux(name: str, speed: float = 1.0) -> FluxDef:
    if name == "lae":
        return linear_advection(speed)
    if name == "burgers":
        return burgers()
    raise ValueError(f"unknown flux {name!r}")


def rusanov_ale_flux(q_minus, q_plus, normal, flux: FluxDef, backend=None):
    """Rusanov flux through a spacetime face with unit normal ``(n_x, n_t)``.

    ``q_minus`` is the inner trace, ``q_plus`` the outer one.  The dissipation
    is ``max |f'(q) n_x + n_t|`` over both traces, i.e. the characteristic
    speed relative to the face velocity ``-n_t / n_x`` scaled by ``|n_x|``;
    it is dropped on faces with ``n_x == 0``.
    """
    n = np.asarray(normal, dtype=float)
    nx, nt = n[..., 0], n[..., 1]
    if flux.kind >= 0:
        return kernels.rusanov(q_minus, q_plus, nx, nt, flux.kind, flux.speed, backend)
    qm = np.asarray(q_minus, dtype=float)
    qp = np.asarray(q_plus, dtype=float)
    s = np.maximum(np.abs(flux.df(qm) * nx + nt), np.abs(flux.df(qp) * nx + nt))
    s = np.where(nx == 0.0, 0.0, s)
    return 0.5 * (flux.f(qp) + flux.f(qm)) * nx + 0.5 * (qp + qm) * nt - 0.5 * s * (qp - qm)


def rusanov_partials(q_minus, q_plus, nx, nt, flux: FluxDef):
    """Derivatives of the Rusanov flux w.r.t. both traces, dissipation frozen."""
    qm = np.asarray(q_minus, dtype=float)
    qp = np.asarray(q_plus, dtype=float)
    dm = flux.df(qm)
    dp = flux.df(qp)
    s = np.maximum(np.abs(dm * nx + nt), np.abs(dp * nx + nt))
    s = np.where(nx == 0.0, 0.0, s)
    return 0.5 * dm * nx + 0.5 * nt + 0.5 * s, 0.5 * dp * nx + 0.5 * nt - 0.5 * s
