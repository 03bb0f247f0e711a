"""Compare the numba and numpy backends on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once to trigger compilation, then timed; results of both
backends are checked against each other before timing.
"""

import argparse
import time

import numpy as np

from aderdg import kernels, vonneumann
from aderdg.explicit import _predictor_operators
from aderdg.flux import burgers, linear_advection
from aderdg.geometry import MovingMesh
from aderdg.slab import Slab


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    # spectral radii of a theta sweep of amplification matrices
    th = np.linspace(0.0, 2.0 * np.pi, 1001)
    A = vonneumann.amplification_explicit(6, 0.03, th)
    yield "spectral_radii N=6 x1001", lambda b: kernels.spectral_radii(A, b), 1e-10

    # element predictor fixed point
    mesh = MovingMesh.uniform(-6.0, 6.0, 256, 0.002, velocity=0.2)
    slab = Slab(4, mesh)
    u = rng.normal(scale=0.05, size=(slab.nc, slab.n_sp))
    for flux in (linear_advection(1.0), burgers()):
        src, H = _predictor_operators(slab, flux)
        s = np.einsum("ckl,cl->ck", src, u)
        q0 = slab.embed_space(u)
        if flux.is_linear:
            fn = lambda b, s=s, H=H, q0=q0: kernels.picard_linear(s, H, slab.TH, q0, 1e-12, 1e-14, 100, b)[0]  # noqa: E731
        else:
            fn = lambda b, s=s, H=H, q0=q0: kernels.picard_nonlinear(s, H, slab.TH, kernels.BURGERS, 0.0, q0, 1e-12, 1e-14, 100, b)[0]  # noqa: E731
        yield f"picard {flux.name} N=4 x256", fn, 1e-12

    qm, qp = rng.normal(size=(2, 200_000))
    nx = rng.choice([-1.0, 1.0], size=qm.size)
    nt = rng.normal(scale=0.3, size=qm.size)
    yield "rusanov burgers x2e5", lambda b: kernels.rusanov(qm, qp, nx, nt, kernels.BURGERS, 0.0, b), 1e-14


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, fn, tol in cases(rng):
        a, b = fn("numpy"), fn("numba")
        err = np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1.0)
        if not err <= tol:
            raise SystemExit(f"{name}: backends disagree ({err:.2e})")
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        print(f"{name:32s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f}")


if __name__ == "__main__":
    main()
