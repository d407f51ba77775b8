"""Time the compiled pair kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points 600] [--pairs 200000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from laplace_metric.kernels import available_backends
from laplace_metric.net import NetSpec, batch_jacobians, init_params


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=600)
    ap.add_argument("--pairs", type=int, default=200_000)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    spec = NetSpec((2, args.hidden, 3))
    params = init_params(spec, 0)
    X = rng.normal(size=(args.points, 2))
    I = rng.integers(0, args.points, size=args.pairs)
    J_ = rng.integers(0, args.points, size=args.pairs)
    w = rng.normal(size=args.pairs)

    backends = available_backends()
    print(f"{args.points} points, {args.pairs} pairs, {spec.last_layer()[1] - spec.last_layer()[0]} active params")
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for split in ("euclidean", "arccos"):
        arccos = split == "arccos"
        E, Jac = batch_jacobians(spec, params, X, split, "last")
        cases = {
            f"loss/{split}": lambda m: m.pair_loss(E, I, J_, w, arccos),
            f"grad/{split}": lambda m: m.pair_output_grad(E, I, J_, w, arccos),
            f"ggn fix/{split}": lambda m: m.pair_ggn_diag(E, Jac, I, J_, w, arccos, False),
            f"ggn full/{split}": lambda m: m.pair_ggn_diag(E, Jac, I, J_, w, arccos, True),
        }
        for name, fn in cases.items():
            times, outs = {}, {}
            for bname, mod in backends.items():
                times[bname], outs[bname] = best_of(lambda: fn(mod), args.repeat)
            ref = np.asarray(outs["python"])
            for bname, out in outs.items():
                err = float(np.max(np.abs(np.asarray(out) - ref)) / max(1.0, float(np.max(np.abs(ref)))))
                assert err < 1e-9, f"{name}: {bname} disagrees with python ({err:.2e})"
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<28}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
