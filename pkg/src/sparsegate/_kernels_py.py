"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same call signatures and semantics (float32 storage, float64
accumulation, first-max pooling ties). ``dense_matmul`` delegates to
BLAS here, so the fallback is fast for dense math but slow for the CSR
kernels, which loop over rows in Python.
"""

import numpy as np

COMPILED = False


def dense_matmul(a, b):
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def csr_matvec(row_ptr, col_idx, values, x):
    rows = row_ptr.shape[0] - 1
    y = np.empty(rows, dtype=np.float32)
    v64 = values.astype(np.float64)
    x64 = x.astype(np.float64)
    for i in range(rows):
        s, e = row_ptr[i], row_ptr[i + 1]
        y[i] = v64[s:e] @ x64[col_idx[s:e]]
    return y


def csr_matmat(row_ptr, col_idx, values, x):
    rows = row_ptr.shape[0] - 1
    y = np.empty((rows, x.shape[1]), dtype=np.float32)
    v64 = values.astype(np.float64)
    x64 = x.astype(np.float64)
    for i in range(rows):
        s, e = row_ptr[i], row_ptr[i + 1]
        y[i] = v64[s:e] @ x64[col_idx[s:e]]
    return y


def maxpool2_fwd(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    windows = (
        x[:, :, : 2 * ho, : 2 * wo]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    idx = windows.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_bwd(dy, idx, h, w):
    n, c, ho, wo = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    b, ch, i, j = np.indices((n, c, ho, wo), sparse=False)
    rows = 2 * i + (idx >> 1)
    cols = 2 * j + (idx & 1)
    np.add.at(dx, (b, ch, rows, cols), dy)
    return dx
