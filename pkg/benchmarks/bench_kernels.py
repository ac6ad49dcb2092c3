"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from mlcurv import _kernels_py, kernels
from mlcurv.grid import NodalField, build_band_grid
from mlcurv.levelset import evaluate_levelset, reinitialize, subcell_distances
from mlcurv.surfaces import Sphere


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    h = 1.0 / 64
    s = Sphere(0.3, pad=4 * h)
    g = build_band_grid(s, h)
    phi = evaluate_levelset(g, s).values * 1.5
    sgn = phi / np.sqrt(phi * phi + h * h)
    sp, sm = subcell_distances(g, phi)
    nb = np.ascontiguousarray(g.reinit_table())
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(-0.3, 0.3, (2, 20000))
    prm = np.array([0.1, 12.0, 20.0])
    Z = _kernels_py.monge_eval(kernels.SINUSOID, prm, X, Y)[0] + rng.uniform(-0.05, 0.05, X.size)
    return {
        f"reinit_rhs ({g.n} nodes)": lambda k, m: m.reinit_rhs(phi, sgn, nb, sp, sm, h),
        "monge_newton (20000 points)": lambda k, m: m.monge_newton(kernels.SINUSOID, prm, X, Y, Z, X.copy(), Y.copy()),
        "reinitialize nu=10": lambda k, m: reinitialize(g, NodalField(g, phi), 10, backend=k),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    mods = {"python": kernels.backend_module("python")}
    try:
        mods["cython"] = kernels.backend_module("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':32s} " + " ".join(f"{k:>10s}" for k in mods) + ("    speedup" if len(mods) == 2 else ""))
    for name, fn in cases().items():
        t = {k: best_of(lambda: fn(k, m), args.repeat) for k, m in mods.items()}
        line = f"{name:32s} " + " ".join(f"{t[k]:9.4f}s" for k in mods)
        if len(mods) == 2:
            line += f"  {t['python'] / t['cython']:8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
