"""Benchmark the compiled box kernels against the pure-numpy fallback.

Runs ``iou_matrix``, ``nms_indices``, and ``greedy_match`` on random box sets
of increasing size, checks that both routes agree, and prints per-kernel
timings with speedups.  If the compiled extension is unavailable, only the
fallback is timed.

Usage:
    python3 benchmarks/bench_boxops.py [--sizes 100,300,1000,3000] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rgbdet.boxops import reference

try:
    from rgbdet.boxops import _kernels
except ImportError:
    _kernels = None


def random_boxes(rng: np.random.Generator, n: int, extent: float = 1000.0) -> np.ndarray:
    """Uniformly placed boxes with moderate sizes."""
    xy = rng.uniform(0.0, extent, size=(n, 2))
    wh = rng.uniform(10.0, 80.0, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def clustered_boxes(rng: np.random.Generator, n: int, extent: float = 1000.0) -> np.ndarray:
    """Boxes bunched around a few centers so NMS actually suppresses."""
    centers = rng.uniform(100.0, extent - 100.0, size=(max(n // 12, 1), 2))
    idx = rng.integers(0, len(centers), size=n)
    cxy = centers[idx] + rng.uniform(-25.0, 25.0, size=(n, 2))
    wh = rng.uniform(20.0, 90.0, size=(n, 2))
    return np.concatenate([cxy - wh / 2.0, cxy + wh / 2.0], axis=1)


def best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def check_agreement(case: str, ref, fast) -> None:
    ref = np.asarray(ref)
    fast = np.asarray(fast)
    if ref.dtype.kind == "f":
        ok = ref.shape == fast.shape and np.allclose(ref, fast, rtol=0.0, atol=1e-12)
    else:
        ok = np.array_equal(ref, fast)
    if not ok:
        raise AssertionError(f"backend disagreement in {case}")


def run(sizes: list[int], repeats: int) -> None:
    rng = np.random.default_rng(0)
    have_ext = _kernels is not None
    if not have_ext:
        print("compiled extension not built; timing the pure-python fallback only\n")

    header = f"{'kernel':<14}{'n':>7}{'python':>12}{'compiled':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))

    for n in sizes:
        uniform = random_boxes(rng, n)
        uniform_b = random_boxes(rng, max(n // 3, 1))
        clustered = clustered_boxes(rng, n)
        scores = rng.random(n)
        preds = clustered_boxes(rng, n)
        gts = clustered_boxes(rng, max(n // 3, 1))

        cases = [
            ("iou_matrix", lambda impl: impl.iou_matrix(uniform, uniform_b)),
            ("nms_indices", lambda impl: impl.nms_indices(clustered, scores, 0.5)),
            ("greedy_match", lambda impl: impl.greedy_match(preds, gts, 0.5)),
        ]
        for name, call in cases:
            ref_out = call(reference)
            t_ref = best_time(lambda: call(reference), repeats)
            if have_ext:
                fast_out = call(_kernels)
                check_agreement(f"{name} (n={n})", ref_out, fast_out)
                t_fast = best_time(lambda: call(_kernels), repeats)
                print(
                    f"{name:<14}{n:>7}{t_ref * 1e3:>10.2f}ms{t_fast * 1e3:>10.2f}ms"
                    f"{t_ref / t_fast:>8.1f}x"
                )
            else:
                print(f"{name:<14}{n:>7}{t_ref * 1e3:>10.2f}ms{'-':>12}{'-':>9}")
        print()

    if have_ext:
        print("outputs verified identical across backends for every case above")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--sizes",
        default="100,300,1000,3000",
        help="comma-separated box-set sizes to benchmark",
    )
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best is kept)")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    run(sizes, args.repeats)


if __name__ == "__main__":
    main()
