"""Prune gated networks into explicit sparse models and serialize them.

Pruning draws the deterministic threshold mask, multiplies it into the
weights, converts dense layers to CSR, and stores conv kernels dense
with a packed gate bitmask (conv layers compress poorly, so the simple
representation wins). Gates are discarded: the exported model is the
elementwise product only.

SPNN file layout (little-endian throughout):

    bytes 0..3   magic "SPNN"
    bytes 4..5   version (u16)
    bytes 6..9   manifest length (u32)
    manifest     JSON: network spec, metadata, per-layer payload table
    payloads     per layer, in spec order:
      dense:  row_ptr u64[rows+1], col_idx u32[nnz], values f32[nnz],
              bias f32[units]
      conv:   kernel f32[F*C*kh*kw] (masked, dense), bitmask u8
              (8 gates/byte, LSB = lowest flat index), bias f32[F]

File size is exactly header + manifest + the per-layer section sums, so
it is testable in closed form.
"""

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gates import draw_ml
from .layers import Network, NetworkSpec

SPNN_MAGIC = b"SPNN"
SPNN_VERSION = 1


class SpnnError(Exception):
    """A sparse-model file could not be read."""


class SpnnMagicError(SpnnError):
    pass


class SpnnVersionError(SpnnError):
    pass


class SpnnTruncatedError(SpnnError):
    pass


class CsrInvariantError(SpnnError):
    """A CSR payload violates the format invariants."""


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix; values hold no exact zeros."""

    rows: int
    cols: int
    row_ptr: np.ndarray  # int64 [rows+1]
    col_idx: np.ndarray  # int32 [nnz]
    values: np.ndarray  # float32 [nnz]

    @property
    def nnz(self):
        return int(self.values.size)

    def validate(self):
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if self.rows <= 0 or self.cols <= 0:
            raise CsrInvariantError(f"bad dims {self.rows}x{self.cols}")
        if rp.shape != (self.rows + 1,):
            raise CsrInvariantError(f"row_ptr length {rp.shape[0]} != rows+1")
        if rp[0] != 0 or rp[-1] != v.size or ci.size != v.size:
            raise CsrInvariantError("row_ptr endpoints do not frame the payload")
        if np.any(np.diff(rp) < 0):
            raise CsrInvariantError("row_ptr must be non-decreasing")
        if v.size:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise CsrInvariantError("column index out of range")
            for r in range(self.rows):
                row = ci[rp[r] : rp[r + 1]]
                if row.size > 1 and np.any(np.diff(row) <= 0):
                    raise CsrInvariantError(
                        f"column indices not strictly increasing in row {r}"
                    )
            if np.any(v == 0.0):
                raise CsrInvariantError("stored values must be nonzero")
        return self

    @classmethod
    def from_dense(cls, w):
        """CSR of a dense matrix; exact zeros are dropped."""
        w = np.asarray(w, dtype=np.float32)
        rows, cols = w.shape
        r, c = np.nonzero(w)
        counts = np.bincount(r, minlength=rows)
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        return cls(
            rows=rows,
            cols=cols,
            row_ptr=row_ptr,
            col_idx=c.astype(np.int32),
            values=w[r, c],
        ).validate()

    def densify(self):
        out = np.zeros((self.rows, self.cols), dtype=np.float32)
        for r in range(self.rows):
            s, e = self.row_ptr[r], self.row_ptr[r + 1]
            out[r, self.col_idx[s:e]] = self.values[s:e]
        return out


@dataclass
class DenseLayerPayload:
    name: str
    matrix: CsrMatrix
    bias: np.ndarray  # float32 [units]

    kind = "dense"

    @property
    def nnz(self):
        return self.matrix.nnz


@dataclass
class ConvLayerPayload:
    name: str
    kernel: np.ndarray  # float32 [F,C,kh,kw], already masked
    mask_bits: np.ndarray  # uint8 packed, LSB-first over the flat kernel
    bias: np.ndarray  # float32 [F]

    kind = "conv"

    @property
    def nnz(self):
        return int(np.count_nonzero(self.kernel))

    def mask(self):
        flat = np.unpackbits(self.mask_bits, bitorder="little")[: self.kernel.size]
        return flat.reshape(self.kernel.shape).astype(np.float32)


@dataclass
class SparseModel:
    """A pruned network: spec + per-layer sparse payloads + metadata."""

    spec: NetworkSpec
    payloads: list
    metadata: dict = field(default_factory=dict)

    @property
    def total_nnz(self):
        return int(sum(p.nnz for p in self.payloads))


def prune(net, metadata=None):
    """Threshold-draw the masks and export W * mask as a SparseModel.

    Ungated layers are exported with an all-ones mask (fully dense).
    """
    payloads = []
    for layer in net.layers:
        if layer.gates is not None:
            mask = draw_ml(layer.gates).gs
        else:
            mask = np.ones_like(layer.w.data)
        ws = layer.w.data * mask
        bias = layer.b.data.astype(np.float32).copy()
        if layer.kind == "dense":
            payloads.append(
                DenseLayerPayload(layer.name, CsrMatrix.from_dense(ws), bias)
            )
        else:
            bits = np.packbits(
                mask.ravel().astype(np.uint8), bitorder="little"
            )
            payloads.append(
                ConvLayerPayload(layer.name, ws.astype(np.float32), bits, bias)
            )
    meta = dict(metadata or {})
    model = SparseModel(spec=net.spec, payloads=payloads, metadata=meta)
    model.metadata.setdefault("total_nnz", model.total_nnz)
    return model


def storage_cost(model):
    """Parameter-plus-index accounting used in the compression tables.

    One index unit is counted per stored value, doubling the effective
    count; conv layers count the nonzero entries of the masked kernel.
    """
    values_count = model.total_nnz
    return {
        "values_count": values_count,
        "index_count": values_count,
        "effective_count": 2 * values_count,
    }


def compression_rate(model, dense_param_count):
    """Dense parameter count over stored values, e.g. 24.0 for "24x"."""
    if dense_param_count <= 0:
        raise ValueError("dense_param_count must be positive")
    values = storage_cost(model)["values_count"]
    if values == 0:
        warnings.warn("model stores no values; compression rate is infinite")
        return float("inf")
    return dense_param_count / values


def sparsity_table(obj):
    """Per-layer report rows {layer, initial, final, sparsity_pct} + total.

    `obj` is a SparseModel (final = stored mask/nnz) or a Network
    (final = threshold-mask survivors). Counts cover weights only;
    percentages use full precision, display rounds to one decimal.
    """
    rows = []
    if isinstance(obj, SparseModel):
        names = [p.name for p in obj.payloads]
        initial = [
            (p.matrix.rows * p.matrix.cols) if p.kind == "dense" else p.kernel.size
            for p in obj.payloads
        ]
        final = [
            p.nnz if p.kind == "dense" else int(p.mask().sum())
            for p in obj.payloads
        ]
    elif isinstance(obj, Network):
        names, initial, final = [], [], []
        for layer in obj.layers:
            names.append(layer.name)
            initial.append(int(layer.w.data.size))
            if layer.gates is not None:
                final.append(draw_ml(layer.gates).nnz)
            else:
                final.append(int(layer.w.data.size))
    else:
        raise TypeError(f"expected SparseModel or Network, got {type(obj).__name__}")
    for name, ini, fin in zip(names, initial, final):
        rows.append(
            {
                "layer": name,
                "initial_params": int(ini),
                "final_params": int(fin),
                "sparsity_pct": 100.0 * (1.0 - fin / ini),
            }
        )
    tot_i, tot_f = sum(initial), sum(final)
    rows.append(
        {
            "layer": "total",
            "initial_params": int(tot_i),
            "final_params": int(tot_f),
            "sparsity_pct": 100.0 * (1.0 - tot_f / tot_i) if tot_i else 0.0,
        }
    )
    return rows


def format_sparsity_table(rows):
    """Aligned-text rendering of sparsity_table rows."""
    header = f"{'layer':<8}{'initial':>12}{'final':>12}{'sparsity %':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['layer']:<8}{r['initial_params']:>12}{r['final_params']:>12}"
            f"{r['sparsity_pct']:>12.1f}"
        )
    return "\n".join(lines)


def sparsity_table_csv(rows):
    out = ["layer,initial_params,final_params,sparsity_pct"]
    for r in rows:
        out.append(
            f"{r['layer']},{r['initial_params']},{r['final_params']},"
            f"{repr(r['sparsity_pct'])}"
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# SPNN serialization


def _layer_manifest(p):
    if p.kind == "dense":
        return {
            "name": p.name,
            "kind": "dense",
            "rows": p.matrix.rows,
            "cols": p.matrix.cols,
            "nnz": p.matrix.nnz,
            "bias_len": int(p.bias.size),
        }
    return {
        "name": p.name,
        "kind": "conv",
        "shape": list(p.kernel.shape),
        "mask_bytes": int(p.mask_bits.size),
        "bias_len": int(p.bias.size),
    }


def save(model, path):
    """Write a SparseModel in the SPNN byte format."""
    manifest = {
        "spec": model.spec.to_dict(),
        "metadata": model.metadata,
        "layers": [_layer_manifest(p) for p in model.payloads],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(SPNN_MAGIC)
        f.write(struct.pack("<HI", SPNN_VERSION, len(blob)))
        f.write(blob)
        for p in model.payloads:
            if p.kind == "dense":
                f.write(p.matrix.row_ptr.astype("<u8").tobytes())
                f.write(p.matrix.col_idx.astype("<u4").tobytes())
                f.write(p.matrix.values.astype("<f4").tobytes())
                f.write(p.bias.astype("<f4").tobytes())
            else:
                f.write(np.ascontiguousarray(p.kernel, dtype="<f4").tobytes())
                f.write(p.mask_bits.tobytes())
                f.write(p.bias.astype("<f4").tobytes())


def expected_file_size(model):
    """Closed-form SPNN byte size for a model (header + manifest + payloads)."""
    manifest = {
        "spec": model.spec.to_dict(),
        "metadata": model.metadata,
        "layers": [_layer_manifest(p) for p in model.payloads],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    size = 4 + 2 + 4 + len(blob)
    for p in model.payloads:
        if p.kind == "dense":
            size += 8 * (p.matrix.rows + 1) + 4 * p.matrix.nnz + 4 * p.matrix.nnz
            size += 4 * p.bias.size
        else:
            size += 4 * p.kernel.size + p.mask_bits.size + 4 * p.bias.size
    return size


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.offset = 0

    def take(self, n, what):
        chunk = self.raw[self.offset : self.offset + n]
        if len(chunk) != n:
            raise SpnnTruncatedError(
                f"truncated reading {what}: wanted {n} bytes, "
                f"had {len(self.raw) - self.offset}"
            )
        self.offset += n
        return chunk

    def array(self, dtype, count, what):
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize, what), dtype=dtype).copy()


def load(path):
    """Read an SPNN file back into a SparseModel; validates everything."""
    with open(path, "rb") as f:
        raw = f.read()
    rd = _Reader(raw)
    if rd.take(4, "magic") != SPNN_MAGIC:
        raise SpnnMagicError(f"bad magic {raw[:4]!r}, expected {SPNN_MAGIC!r}")
    (version,) = struct.unpack("<H", rd.take(2, "version"))
    if version != SPNN_VERSION:
        raise SpnnVersionError(f"unsupported version {version}, expected {SPNN_VERSION}")
    (blob_len,) = struct.unpack("<I", rd.take(4, "manifest length"))
    try:
        manifest = json.loads(rd.take(blob_len, "manifest").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SpnnError(f"manifest is not valid JSON: {e}") from e
    spec = NetworkSpec.from_dict(manifest["spec"])
    payloads = []
    for lm in manifest["layers"]:
        name = lm["name"]
        if lm["kind"] == "dense":
            rows, cols, nnz = lm["rows"], lm["cols"], lm["nnz"]
            row_ptr = rd.array("<u8", rows + 1, f"{name}.row_ptr").astype(np.int64)
            col_idx = rd.array("<u4", nnz, f"{name}.col_idx").astype(np.int32)
            values = rd.array("<f4", nnz, f"{name}.values")
            bias = rd.array("<f4", lm["bias_len"], f"{name}.bias")
            matrix = CsrMatrix(rows, cols, row_ptr, col_idx, values)
            matrix.validate()
            payloads.append(DenseLayerPayload(name, matrix, bias))
        elif lm["kind"] == "conv":
            shape = tuple(lm["shape"])
            count = int(np.prod(shape))
            kernel = rd.array("<f4", count, f"{name}.kernel").reshape(shape)
            if lm["mask_bytes"] != (count + 7) // 8:
                raise SpnnError(
                    f"{name}: mask_bytes {lm['mask_bytes']} does not fit kernel {shape}"
                )
            mask_bits = rd.array("<u1", lm["mask_bytes"], f"{name}.mask")
            bias = rd.array("<f4", lm["bias_len"], f"{name}.bias")
            payloads.append(ConvLayerPayload(name, kernel, mask_bits, bias))
        else:
            raise SpnnError(f"{name}: unknown payload kind {lm['kind']!r}")
    if rd.offset != len(raw):
        raise SpnnError(f"{len(raw) - rd.offset} trailing bytes after payloads")
    return SparseModel(spec=spec, payloads=payloads, metadata=manifest["metadata"])
