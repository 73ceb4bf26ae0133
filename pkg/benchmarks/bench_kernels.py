#!/usr/bin/env python3
"""Benchmark the compiled spot-rendering kernel against the numpy fallback.

Runs identical lobe workloads through both backends, times them, and checks
that the outputs agree bit-for-bit within floating-point tolerance. Example:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --patch 41 --lobes 2 --repeats 2000
"""

import argparse
import sys
import time

import numpy as np

from dhrb.kernels import _lobes_np

try:
    from dhrb.kernels import _lobes_c
except ImportError:
    _lobes_c = None


def make_workload(patch_px, n_lobes, n_cases, seed):
    rng = np.random.default_rng(seed)
    half = patch_px // 2
    cases = []
    for _ in range(n_cases):
        lobes = np.column_stack([
            rng.uniform(-half / 2, half / 2, n_lobes),   # dr
            rng.uniform(-half / 2, half / 2, n_lobes),   # dc
            rng.uniform(0.8, 3.0, n_lobes),              # sigma
            rng.uniform(0.2, 1.0, n_lobes),              # weight
        ])
        cases.append(np.ascontiguousarray(lobes))
    return cases


def time_backend(impl, cases, patch_px, repeats):
    out = np.empty((patch_px, patch_px), dtype=np.float64)
    # warm up (allocation, code paths)
    for lobes in cases:
        impl.eval_lobes_into(out, lobes)
    start = time.perf_counter()
    for _ in range(repeats):
        for lobes in cases:
            impl.eval_lobes_into(out, lobes)
    elapsed = time.perf_counter() - start
    return elapsed / (repeats * len(cases)), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--patch", type=int, default=25,
                        help="patch side, px (odd)")
    parser.add_argument("--lobes", type=int, default=2,
                        help="lobes per evaluation")
    parser.add_argument("--cases", type=int, default=32,
                        help="distinct lobe sets per repeat")
    parser.add_argument("--repeats", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    cases = make_workload(args.patch, args.lobes, args.cases, args.seed)
    per_call_np, out_np = time_backend(_lobes_np, cases, args.patch,
                                       args.repeats)
    print(f"workload: {args.cases} lobe sets x {args.repeats} repeats, "
          f"patch {args.patch}x{args.patch}, {args.lobes} lobes")
    print(f"numpy fallback : {per_call_np * 1e6:9.2f} us/call")

    if _lobes_c is None:
        print("compiled       : not available (build the extension "
              "to compare)")
        return 1

    per_call_c, out_c = time_backend(_lobes_c, cases, args.patch,
                                     args.repeats)
    # both backends must compute the same patch for the last case
    check = np.empty_like(out_np)
    _lobes_np.eval_lobes_into(check, cases[-1])
    if not np.allclose(out_c, check, rtol=1e-12, atol=1e-300):
        print("ERROR: backends disagree on the final case", file=sys.stderr)
        return 2

    print(f"compiled       : {per_call_c * 1e6:9.2f} us/call")
    print(f"speedup        : {per_call_np / per_call_c:9.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
