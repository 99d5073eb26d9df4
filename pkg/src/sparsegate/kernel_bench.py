"""Compare the compiled kernel core against the pure-numpy fallback.

Run as ``python -m sparsegate.kernel_bench``. Note the fallback's
``dense_matmul`` delegates to BLAS, so compiled wins are expected on the
CSR and pooling kernels, not on dense matmul.
"""

import argparse
import time

import numpy as np

from .backend import HAVE_COMPILED, get_backend
from .sparse import CsrMatrix


def _median_ms(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1e3


def run(m=512, n=512, p=8, sparsity=95.0, reps=20, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, n)).astype(np.float32)
    w[rng.random((m, n)) < sparsity / 100.0] = 0.0
    a = CsrMatrix.from_dense(w)
    x = rng.standard_normal((n, p)).astype(np.float32)
    img = rng.standard_normal((16, 8, 24, 24)).astype(np.float32)

    cases = [
        ("dense_matmul", lambda k: k.dense_matmul(w, x)),
        (
            f"csr_matmat ({sparsity:.0f}% sparse)",
            lambda k: k.csr_matmat(a.row_ptr, a.col_idx, a.values, x),
        ),
        ("maxpool2_fwd", lambda k: k.maxpool2_fwd(img)),
    ]
    backends = ["python"] + (["compiled"] if HAVE_COMPILED else [])
    rows = []
    for name, fn in cases:
        timings = {}
        for b in backends:
            kern = get_backend(b)
            fn(kern)  # warm-up
            timings[b] = _median_ms(lambda: fn(kern), reps)
        rows.append((name, timings))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--m", type=int, default=512)
    parser.add_argument("--n", type=int, default=512)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--sparsity", type=float, default=95.0)
    args = parser.parse_args(argv)
    if not HAVE_COMPILED:
        print("compiled kernels not built; showing python fallback only")
    rows = run(args.m, args.n, args.batch, args.sparsity, args.reps)
    width = max(len(name) for name, _ in rows) + 2
    print(f"{'kernel':<{width}}{'python ms':>12}{'compiled ms':>13}{'ratio':>8}")
    for name, t in rows:
        py = t["python"]
        if "compiled" in t:
            print(f"{name:<{width}}{py:>12.3f}{t['compiled']:>13.3f}{py / t['compiled']:>8.2f}")
        else:
            print(f"{name:<{width}}{py:>12.3f}{'-':>13}{'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
