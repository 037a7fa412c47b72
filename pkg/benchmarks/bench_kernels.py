"""Time the numba kernels against their numpy fallbacks on identical inputs.

Both implementations are called directly, so the result does not depend on
BILLIARD_MME_NO_NUMBA.  Discrete outputs (scatterer, address, status) must
agree exactly; floats differ by rounding only, amplified by the expansion of
the map in the multi-step ``follow`` kernel.  The numba timing excludes
compilation (one warm-up call).

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from billiard_mme import defaults, kernels
from billiard_mme.billiard import Billiard
from billiard_mme.table import REFERENCE_TABLE


def best_time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def compare(a, b):
    """(integer outputs identical, max |difference| over finite float outputs)."""
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    exact, diff = True, 0.0
    for x, y in zip(a, b):
        x, y = np.asarray(x), np.asarray(y)
        if x.dtype.kind == "f":
            exact &= bool(np.array_equal(np.isfinite(x), np.isfinite(y)))
            fin = np.isfinite(x) & np.isfinite(y)
            if fin.any():
                diff = max(diff, float(np.max(np.abs(x[fin] - y[fin]))))
        else:
            exact &= bool(np.array_equal(x, y))
    return exact, diff


def cases(n, rng):
    b = Billiard(REFERENCE_TABLE)
    g = b.geom
    disk = rng.integers(0, b.n_scatterers, n).astype(np.int64)
    r = rng.uniform(0, 1, n) * b.perimeter[disk]
    phi = np.arcsin(rng.uniform(-0.99, 0.99, n))
    geo = (g.radius, g.cand_x, g.cand_y, g.cand_r, g.cand_disk)
    yield ("collide", kernels._collide_nb, kernels._collide_np,
           (disk, r, phi, *geo, g.n_cand, defaults.GEOM_TOL))

    steps = 8
    d, rr, pp, _, addr, status = b.step_arrays(disk, r, phi)
    ok = status == kernels.OK
    addrs = [addr]
    for _ in range(steps - 1):
        d, rr, pp, _, addr, status = b.step_arrays(d, np.where(ok, rr, 0.0),
                                                   np.where(ok, pp, 0.0))
        ok &= status == kernels.OK
        addrs.append(addr)
    sel = np.flatnonzero(ok)
    A = np.ascontiguousarray(np.stack(addrs, axis=1)[sel])
    yield ("follow", kernels._follow_nb, kernels._follow_np,
           (disk[sel], r[sel], phi[sel], A, *geo))

    lengths = rng.integers(1, 50, n // 4).astype(np.int64)
    yield ("expand", kernels._expand_nb, kernels._expand_np, (3, lengths, n))

    u = rng.standard_normal(n)
    lags = np.arange(0, 33, dtype=np.int64)
    n_eff = n - int(lags.max())
    yield ("lag_batches", kernels._lag_batches_nb, kernels._lag_batches_np,
           (u, u, lags, n_eff, 100))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<12} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  "
          f"{'discrete':>8} {'max float diff':>14}")
    rows = []
    for name, nb, npf, fargs in cases(args.n, rng):
        nb(*fargs)  # compile
        t_nb, out_nb = best_time(nb, fargs, args.repeat)
        t_np, out_np = best_time(npf, fargs, args.repeat)
        exact, diff = compare(out_nb, out_np)
        rows.append((name, t_nb, t_np, exact, diff))
        print(f"{name:<12} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}  "
              f"{str(exact):>8} {diff:>14.2e}")
    return rows


if __name__ == "__main__":
    main()
