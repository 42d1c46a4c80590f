"""Time the numba element kernels against the pure-numpy fallback.

Usage: ``python benchmarks/bench_kernels.py [--h 0.015625] [--repeat 5]``
"""

import argparse
import time

import numpy as np

from heavylayer import _kernels
from heavylayer.geometry import BoundaryPatch, DomainConfig, build_domain
from heavylayer.materials import DissipationSpec


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation for the jit path
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - start)
    return min(times), out


def max_rel_diff(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    scale = max(np.max(np.abs(a)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, default=1.0 / 64, help="bulk cell size")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=2, choices=(2, 3))
    args = ap.parse_args(argv)

    if args.dim == 2:
        dom = DomainConfig(h_bulk=args.h, eps=0.125, m_layer=8, m_refbox=8)
    else:
        dom = DomainConfig(
            dim=3,
            extents=((0.0, 1.0), (0.0, 1.0), (-1.0, 1.0)),
            eps0=0.4,
            eps=0.125,
            h_bulk=args.h,
            m_layer=4,
            m_refbox=4,
            dirichlet_patches=(BoundaryPatch(2, "lo"),),
            neumann_patches=(BoundaryPatch(2, "hi"),),
        )
    grid = build_domain(dom).bulk
    rng = np.random.default_rng(0)
    n_cells = grid.wdet.shape[0]
    lam = rng.uniform(0.5, 2.0, n_cells)
    mu = rng.uniform(0.5, 2.0, n_cells)
    rho = rng.uniform(0.5, 2.0, n_cells)
    spec = DissipationSpec(p=1.5, eta=1e-6)
    d = grid.dim
    strain = rng.standard_normal((n_cells * grid.wdet.shape[1], d, d))
    strain = 0.5 * (strain + np.swapaxes(strain, 1, 2))

    cases = {
        "elastic": (grid.gradients, grid.gradients, grid.wdet, lam, mu),
        "mass": (grid.shape_values, grid.wdet, rho, d),
        "dissipation": (strain, spec.coefs, spec.exponents, spec.eta),
    }
    print(f"mesh: {grid.n_nodes} nodes, {n_cells} cells, dim {d}; numba available: {_kernels._HAVE_NUMBA}")
    print(f"{'kernel':<12} {'numpy [ms]':>11} {'numba [ms]':>11} {'speed-up':>9} {'max rel diff':>13}")
    for name, kargs in cases.items():
        t_np, out_np = best_of(_kernels.NUMPY_IMPL[name], kargs, args.repeat)
        t_jit, out_jit = best_of(_kernels.JIT_IMPL[name], kargs, args.repeat)
        outs_np = out_np if isinstance(out_np, tuple) else (out_np,)
        outs_jit = out_jit if isinstance(out_jit, tuple) else (out_jit,)
        diff = max(max_rel_diff(a, b) for a, b in zip(outs_np, outs_jit))
        print(f"{name:<12} {1e3 * t_np:11.2f} {1e3 * t_jit:11.2f} {t_np / t_jit:9.1f} {diff:13.1e}")


if __name__ == "__main__":
    main()
