"""Time the numba kernels against the numpy fallback on campaign-sized inputs.

Run with ``python3 benchmarks/bench_kernels.py``. Both backends are checked
for identical results before timing; compile time is excluded by a warm-up
call.
"""
import argparse
import timeit

import numpy as np

from rnntest import kernels


def workloads(rng):
    """Argument tuples sized like one char-LM input (T=32, L=2, E=64, V=65, D=32)."""
    values = rng.normal(size=(64, 64))
    valid = np.ones(64, dtype=bool)
    u = np.tanh(rng.normal(scale=2.0, size=32 * 2 * 64))
    edges = np.linspace(-1.0, 1.0, 6)
    a = rng.integers(0, 40, size=30)
    b = rng.integers(0, 40, size=28)
    embs = rng.normal(size=(65, 32))
    # a short gradient keeps the scan running through many scales
    grad = rng.normal(scale=1e-3, size=32)
    return {
        "max_mask": (values, valid),
        "section_index": (u, edges),
        "levenshtein": (a, b),
        "nearest_scan": (embs, 3, grad, 100),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    args = parser.parse_args()

    impls = kernels.IMPLEMENTATIONS
    if "numba" not in impls:
        print("numba backend disabled (RNNTEST_DISABLE_NUMBA set or numba missing); timing numpy only")
    backends = sorted(impls)
    cases = workloads(np.random.default_rng(0))
    print(f"{'kernel':<14}" + "".join(f"{b + ' us/call':>18}" for b in backends) + f"{'speedup':>10}")
    for name, call_args in cases.items():
        results = [impls[b][name](*call_args) for b in backends]
        for r in results[1:]:
            assert np.array_equal(np.asarray(r), np.asarray(results[0])), f"{name}: backends disagree"
        times = {}
        for b in backends:
            fn = impls[b][name]
            best = min(timeit.repeat(lambda: fn(*call_args), repeat=args.repeat, number=args.number))
            times[b] = best / args.number * 1e6
        speed = f"{times['numpy'] / times['numba']:.1f}x" if "numba" in times else "-"
        print(f"{name:<14}" + "".join(f"{times[b]:>18.2f}" for b in backends) + f"{speed:>10}")


if __name__ == "__main__":
    main()
