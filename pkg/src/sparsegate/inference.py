"""Feedforward evaluation of pruned models on CSR kernels, plus the
dense-vs-sparse microbenchmark.

Dense layers multiply through the CSR payload touching only stored
entries; conv layers run the dense kernel with masked weights. The
benchmark times a loop-based dense product against the CSR product on
identical data, so the measured ratio reflects the operation-count
saving (m*n*p vs nnz*p) rather than implementation tricks; every timed
configuration is correctness-gated against the dense output first.
"""

import time
from dataclasses import dataclass

import numpy as np

from .backend import get_backend
from .sparse import CsrMatrix, SparseModel
from .tensor import ShapeError, conv2d_np


class BenchCorrectnessError(RuntimeError):
    """Sparse and dense outputs disagreed; timings would be meaningless."""


def csr_matvec(a, x, backend="auto"):
    """y = A @ x touching only the nnz stored entries."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 1 or x.shape[0] != a.cols:
        raise ShapeError(f"csr_matvec: vector {x.shape} does not fit {a.rows}x{a.cols}")
    kern = get_backend(backend)
    return kern.csr_matvec(a.row_ptr, a.col_idx, a.values, x)


def csr_matmat(a, x, backend="auto"):
    """Y = A @ X for dense X[n,p], touching only the nnz stored entries."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != a.cols:
        raise ShapeError(f"csr_matmat: matrix {x.shape} does not fit {a.rows}x{a.cols}")
    kern = get_backend(backend)
    return kern.csr_matmat(a.row_ptr, a.col_idx, a.values, x)


def infer(model, x, backend="auto"):
    """Logits of a SparseModel for a batch; deterministic and pure.

    Matches the source gated network's eval-mode forward to within
    float32 rounding (reassociation between BLAS and the CSR kernel).
    """
    kern = get_backend(backend)
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x.reshape(x.shape[0], *model.spec.input_shape)
    if x.ndim != 4 or x.shape[1:] != tuple(model.spec.input_shape):
        raise ShapeError(
            f"infer: input {x.shape} does not match model input "
            f"{tuple(model.spec.input_shape)}"
        )
    out = x
    for ls, payload in zip(model.spec.layers, model.payloads):
        if payload.kind == "conv":
            y = conv2d_np(out, payload.kernel)
            y += payload.bias.reshape(1, -1, 1, 1)
        else:
            flat = out.reshape(out.shape[0], -1)
            if flat.shape[1] != payload.matrix.cols:
                raise ShapeError(
                    f"{payload.name}: input has {flat.shape[1]} features, "
                    f"expected {payload.matrix.cols}"
                )
            y = csr_matmat(payload.matrix, np.ascontiguousarray(flat.T), backend).T
            y = y + payload.bias.reshape(1, -1)
        if ls.activation == "relu":
            y = np.maximum(y, 0)
        if ls.pool:
            y, _ = kern.maxpool2_fwd(np.ascontiguousarray(y))
        out = y
    return out


@dataclass
class BenchResult:
    m: int
    n: int
    p: int
    sparsity: float  # percent of zero entries
    dense_ms: float
    sparse_ms: float
    speedup: float
    checksum: float  # sum of the dense output, for the report


BENCH_COLUMNS = ("m", "n", "p", "sparsity", "dense_ms", "sparse_ms", "speedup")


def _median_ms(fn, reps):
    times = np.empty(reps, dtype=np.float64)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    return float(np.median(times)) * 1e3


def bench(m, n, p, sparsities, reps=50, seed=0, backend="auto", tol=1e-4):
    """Median-of-reps timing of dense vs CSR products on identical data.

    One result per sparsity grid point (percent of zeros). Outputs are
    cross-checked each run; raises BenchCorrectnessError if they disagree
    beyond `tol` max abs.
    """
    if reps < 10:
        raise ValueError(f"reps must be >= 10, got {reps}")
    if m <= 0 or n <= 0 or p <= 0:
        raise ValueError("dims must be positive")
    kern = get_backend(backend)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p)).astype(np.float32)
    results = []
    for s in sparsities:
        if not 0.0 <= s <= 100.0:
            raise ValueError(f"sparsity must be a percentage in [0,100], got {s}")
        nnz = int(round((1.0 - s / 100.0) * m * n))
        w = np.zeros(m * n, dtype=np.float32)
        if nnz:
            pos = rng.choice(m * n, size=nnz, replace=False)
            vals = rng.standard_normal(nnz).astype(np.float32)
            vals[vals == 0.0] = 1.0
            w[pos] = vals
        w = w.reshape(m, n)
        a = CsrMatrix.from_dense(w)

        dense_out = kern.dense_matmul(w, x)  # warm-up doubles as reference
        sparse_out = kern.csr_matmat(a.row_ptr, a.col_idx, a.values, x)
        diff = float(np.abs(dense_out - sparse_out).max()) if dense_out.size else 0.0
        if diff > tol:
            raise BenchCorrectnessError(
                f"outputs disagree at sparsity {s}%: max abs diff {diff:g} > {tol:g}"
            )
        dense_ms = _median_ms(lambda: kern.dense_matmul(w, x), reps)
        sparse_ms = _median_ms(
            lambda: kern.csr_matmat(a.row_ptr, a.col_idx, a.values, x), reps
        )
        results.append(
            BenchResult(
                m=m,
                n=n,
                p=p,
                sparsity=float(s),
                dense_ms=dense_ms,
                sparse_ms=sparse_ms,
                speedup=dense_ms / sparse_ms,
                checksum=float(dense_out.sum(dtype=np.float64)),
            )
        )
    return results


def bench_to_csv(results):
    out = [",".join(BENCH_COLUMNS)]
    for r in results:
        out.append(
            f"{r.m},{r.n},{r.p},{repr(r.sparsity)},{repr(r.dense_ms)},"
            f"{repr(r.sparse_ms)},{repr(r.speedup)}"
        )
    return "\n".join(out) + "\n"
