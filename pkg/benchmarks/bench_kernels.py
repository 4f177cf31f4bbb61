"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from iedpuf import kernels


def cases(rng):
    volts = rng.normal(512, 6, 12)
    full = np.arange(12, dtype=np.intp)
    part = rng.permutation(12).astype(np.intp)[:9]
    ref = rng.integers(0, 2, 132).astype(np.uint8)
    a, b = rng.integers(0, 2, (2, 154)).astype(np.uint8)
    fleet = rng.integers(0, 2, (200, 154)).astype(np.uint8)
    seqs = np.stack([rng.permutation(12) for _ in range(10_000)]).astype(np.intp)
    return {
        "comparison_bits (m=12)": lambda k: k.comparison_bits(volts, full),
        "gather_partial (m=9)": lambda k: k.gather_partial(ref, part, 12),
        "hamming_count (154 bits)": lambda k: k.hamming_count(a, b),
        "hamming_matrix (200 x 154)": lambda k: k.hamming_matrix(fleet),
        "occurrence_table (10k x 12)": lambda k: k.occurrence_table(seqs, 12),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    impls = kernels.backends()
    names = sorted(impls)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<30}" + "".join(f"{n:>14}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    for label, fn in cases(np.random.default_rng(args.seed)).items():
        best = {}
        for n in names:
            timer = timeit.Timer(lambda: fn(impls[n]))
            loops, _ = timer.autorange()
            best[n] = min(timer.repeat(args.repeat, loops)) / loops
        row = f"{label:<30}" + "".join(f"{best[n] * 1e6:>11.2f} us" for n in names)
        if len(names) == 2:
            row += f"   {best['python'] / best['cython']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
