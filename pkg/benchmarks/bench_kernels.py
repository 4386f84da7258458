"""Time the compiled per-pixel kernels against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 20]

Prints one line per kernel with the best-of-``repeat`` time of each
backend and the speedup.  Both backends are checked for agreement first.
"""
import argparse
import timeit

import numpy as np

from bpfidelity.kernels import backend_module


def cases(size, rng):
    x = rng.standard_normal((size, size))
    px, py = rng.standard_normal((2, size, size))
    state = [np.ascontiguousarray(rng.standard_normal((size, size)) * 0.1) for _ in range(4)]
    return {
        "grad2d": lambda k: k.grad2d(x),
        "grad2d_adjoint": lambda k: k.grad2d_adjoint(px, py),
        "tv_norm": lambda k: k.tv_norm(x),
        "sb_shrink_update": lambda k: k.sb_shrink_update(x, *[s.copy() for s in state], 0.5),
        "haar_forward": lambda k: k.haar_forward(x),
        "haar_inverse": lambda k: k.haar_inverse(x),
    }


def _as_arrays(out):
    if isinstance(out, tuple):
        return [np.asarray(o) for o in out]
    return [np.asarray(out)]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    py = backend_module("python")
    try:
        cy = backend_module("cython")
    except ImportError:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.size, rng).items():
        for a, b in zip(_as_arrays(fn(py)), _as_arrays(fn(cy))):
            if not np.allclose(a, b, rtol=1e-12, atol=1e-10):
                raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_py:>12.3f}{t_cy:>12.3f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
