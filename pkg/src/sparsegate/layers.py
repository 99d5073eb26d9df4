"""Gated dense and conv layers composed into small feed-forward nets.

A network is described by a :class:`NetworkSpec` (JSON-serializable
layer list) and realized as a :class:`Network` holding weight, bias and
gate tensors. Gating is per-element on the weight/kernel tensors;
biases are never gated (they are a fraction of a percent of the
parameters and contribute nothing to compression).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import gates as gm
from .tensor import (
    ShapeError,
    Tensor,
    add_bias,
    conv2d,
    matmul,
    maxpool2,
    relu,
    reshape,
    transpose,
)

CHECKPOINT_MAGIC = b"SGCK"
CHECKPOINT_VERSION = 1

FORWARD_MODES = ("train_ml", "train_sampled", "eval")


class ConfigError(ValueError):
    """Invalid network or training configuration."""


class CheckpointError(Exception):
    """A checkpoint file is malformed."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "dense" | "conv"
    units: int  # dense width, or conv filter count
    kernel: int = 0  # conv kernel size (square); 0 for dense
    activation: str | None = None  # None | "relu"
    pool: int | None = None  # None | 2 (2x2 stride-2 max pool)
    gated: bool = True

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "units": self.units,
            "kernel": self.kernel,
            "activation": self.activation,
            "pool": self.pool,
            "gated": self.gated,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors plus the input shape (C, H, W)."""

    input_shape: tuple
    layers: tuple

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
        )

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


class GatedDense:
    """Fully connected layer W[out,in], bias[out], optional gates on W."""

    kind = "dense"

    def __init__(self, name, in_features, out_features, gated=True):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self.w = Tensor(
            np.zeros((out_features, in_features), np.float32),
            requires_grad=True,
            name=f"{name}.w",
        )
        self.b = Tensor(np.zeros(out_features, np.float32), requires_grad=True, name=f"{name}.b")
        self.gates = (
            gm.make_gates(self.w.data.shape, 1.0, name=f"{name}.gates") if gated else None
        )

    def initialize(self, rng):
        fan_in = self.in_features
        std = np.sqrt(2.0 / fan_in)
        self.w.data = (rng.standard_normal(self.w.data.shape) * std).astype(np.float32)
        self.b.data = np.zeros_like(self.b.data)

    def forward(self, x, mask=None):
        if x.data.ndim == 4:
            x = reshape(x, (x.data.shape[0], -1))
        if x.data.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name}: input has {x.data.shape[1]} features, expected {self.in_features}"
            )
        w = self.w if mask is None else gm.apply_mask_ste(self.w, self.gates, mask)
        return add_bias(matmul(x, transpose(w)), self.b)


class GatedConv2d:
    """Conv layer K[F,C,kh,kw], bias[F], optional per-element kernel gates."""

    kind = "conv"

    def __init__(self, name, in_channels, filters, kernel, gated=True):
        self.name = name
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.w = Tensor(
            np.zeros((filters, in_channels, kernel, kernel), np.float32),
            requires_grad=True,
            name=f"{name}.w",
        )
        self.b = Tensor(np.zeros(filters, np.float32), requires_grad=True, name=f"{name}.b")
        self.gates = (
            gm.make_gates(self.w.data.shape, 1.0, name=f"{name}.gates") if gated else None
        )

    def initialize(self, rng):
        fan_in = self.in_channels * self.kernel * self.kernel
        std = np.sqrt(2.0 / fan_in)
        self.w.data = (rng.standard_normal(self.w.data.shape) * std).astype(np.float32)
        self.b.data = np.zeros_like(self.b.data)

    def forward(self, x, mask=None):
        k = self.w if mask is None else gm.apply_mask_ste(self.w, self.gates, mask)
        return add_bias(conv2d(x, k), self.b)


class Network:
    """A realized NetworkSpec: layers, activations and pooling in order."""

    def __init__(self, spec):
        self.spec = spec
        self.layers = []
        shape = tuple(spec.input_shape)
        if len(shape) != 3 or any(int(s) <= 0 for s in shape):
            raise ConfigError(f"input_shape must be 3 positive dims (C,H,W), got {shape}")
        for ls in spec.layers:
            if ls.kind == "conv":
                c, h, w = shape
                if ls.kernel <= 0 or ls.units <= 0:
                    raise ConfigError(f"{ls.name}: conv needs positive filters and kernel")
                if ls.kernel > h or ls.kernel > w:
                    raise ConfigError(
                        f"{ls.name}: kernel {ls.kernel} larger than input {h}x{w}"
                    )
                self.layers.append(GatedConv2d(ls.name, c, ls.units, ls.kernel, ls.gated))
                h, w = h - ls.kernel + 1, w - ls.kernel + 1
                if ls.pool:
                    h, w = h // ls.pool, w // ls.pool
                    if h == 0 or w == 0:
                        raise ConfigError(f"{ls.name}: pooled away to nothing")
                shape = (ls.units, h, w)
            elif ls.kind == "dense":
                if ls.units <= 0:
                    raise ConfigError(f"{ls.name}: dense needs positive units")
                in_features = int(np.prod(shape))
                self.layers.append(GatedDense(ls.name, in_features, ls.units, ls.gated))
                shape = (ls.units, 1, 1)
            else:
                raise ConfigError(f"{ls.name}: unknown layer kind {ls.kind!r}")
        if not self.layers:
            raise ConfigError("network has no layers")
        self.output_dim = spec.layers[-1].units

    # -- parameter bookkeeping -------------------------------------------

    def initialize(self, rng, gate_init=0.6):
        """He-init weights, zero biases, constant gate values."""
        for layer in self.layers:
            layer.initialize(rng)
            if layer.gates is not None:
                layer.gates.data = np.full_like(layer.gates.data, np.float32(gate_init))

    def trainable_params(self, include_gates=True):
        params = []
        for layer in self.layers:
            params.append(layer.w)
            params.append(layer.b)
            if include_gates and layer.gates is not None:
                params.append(layer.gates)
        return params

    def gated_layers(self):
        return [l for l in self.layers if l.gates is not None]

    def project_gates(self):
        """Clamp every gate into [0,1] (valid bernoulli parameters)."""
        for layer in self.gated_layers():
            np.clip(layer.gates.data, 0.0, 1.0, out=layer.gates.data)

    def weight_count(self):
        """Weight-tensor entries across layers (biases excluded)."""
        return int(sum(l.w.data.size for l in self.layers))

    def param_count(self):
        """All weight and bias entries (gates excluded)."""
        return int(sum(l.w.data.size + l.b.data.size for l in self.layers))

    def trainable_count(self):
        return int(sum(p.data.size for p in self.trainable_params()))

    # -- forward ----------------------------------------------------------

    def draw_masks(self, mode, rng=None):
        """One mask per gated layer for the given forward mode."""
        if mode not in FORWARD_MODES:
            raise ConfigError(f"unknown forward mode {mode!r}, expected {FORWARD_MODES}")
        masks = {}
        for layer in self.gated_layers():
            if mode == "train_sampled":
                if rng is None:
                    raise ConfigError("train_sampled mode needs a seeded generator")
                masks[layer.name] = gm.draw_unbiased(layer.gates, rng)
            else:
                masks[layer.name] = gm.draw_ml(layer.gates)
        return masks

    def forward(self, x, mode="eval", rng=None, masks=None):
        """Run the network; gated layers multiply by freshly drawn masks.

        `train_ml` and `eval` use the deterministic threshold draw and
        are bitwise identical; `train_sampled` draws one unbiased mask
        per gated layer from `rng`.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if masks is None:
            masks = self.draw_masks(mode, rng)
        out = x
        for ls, layer in zip(self.spec.layers, self.layers):
            out = layer.forward(out, masks.get(layer.name))
            if ls.activation == "relu":
                out = relu(out)
            elif ls.activation is not None:
                raise ConfigError(f"{ls.name}: unknown activation {ls.activation!r}")
            if ls.pool:
                if ls.pool != 2:
                    raise ConfigError(f"{ls.name}: only 2x2 pooling is supported")
                out = maxpool2(out)
        return out


# ---------------------------------------------------------------------------
# builders


def build_mlp(dims, gated=True):
    """MLP from a full dimension chain [in, hidden..., out].

    `gated` is True/False for all layers, or an iterable of layer names
    (fc1, fc2, ...) to gate selectively.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigError(f"mlp needs >= 2 positive dims, got {dims}")
    layers = []
    for i, units in enumerate(dims[1:], start=1):
        name = f"fc{i}"
        last = i == len(dims) - 1
        layers.append(
            LayerSpec(
                name=name,
                kind="dense",
                units=units,
                activation=None if last else "relu",
                gated=_is_gated(gated, name),
            )
        )
    spec = NetworkSpec(input_shape=(1, 1, dims[0]), layers=tuple(layers))
    return Network(spec)


def build_lenet5(gated=True):
    """LeNet-5-small: 20 and 50 5x5 conv filters, then 500- and 10-unit
    dense layers; 28x28 single-channel input.

    Weight counts per layer are 0.5K/25K/400K/5K (430.5K total).
    """
    specs = (
        LayerSpec("conv1", "conv", 20, kernel=5, activation="relu", pool=2,
                  gated=_is_gated(gated, "conv1")),
        LayerSpec("conv2", "conv", 50, kernel=5, activation="relu", pool=2,
                  gated=_is_gated(gated, "conv2")),
        LayerSpec("fc1", "dense", 500, activation="relu", gated=_is_gated(gated, "fc1")),
        LayerSpec("fc2", "dense", 10, gated=_is_gated(gated, "fc2")),
    )
    return Network(NetworkSpec(input_shape=(1, 28, 28), layers=specs))


def _is_gated(gated, name):
    if isinstance(gated, bool):
        return gated
    return name in set(gated)


def param_report(net):
    """Per-layer {weights, gates, masked_nonzeros, sparsity_pct} rows.

    Nonzeros come from the deterministic threshold draw; ungated layers
    report all weights surviving.
    """
    rows = []
    for layer in net.layers:
        weights = int(layer.w.data.size)
        if layer.gates is not None:
            nnz = gm.draw_ml(layer.gates).nnz
            gates = int(layer.gates.data.size)
        else:
            nnz = weights
            gates = 0
        rows.append(
            {
                "layer": layer.name,
                "weights": weights,
                "gates": gates,
                "masked_nonzeros": nnz,
                "sparsity_pct": 100.0 * (1.0 - nnz / weights),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# checkpoint io (deterministic byte layout; no timestamps)


def _net_arrays(net):
    arrays = []
    for layer in net.layers:
        arrays.append((f"{layer.name}.w", layer.w))
        arrays.append((f"{layer.name}.b", layer.b))
        if layer.gates is not None:
            arrays.append((f"{layer.name}.gates", layer.gates))
    return arrays


def save_checkpoint(net, path, meta=None):
    """Write spec + all parameter arrays as little-endian float32."""
    arrays = _net_arrays(net)
    manifest = {
        "spec": net.spec.to_dict(),
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(t.data.shape)} for n, t in arrays],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, t in arrays:
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild a Network from a checkpoint; returns (net, meta)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r}")
    version, blob_len = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    blob = raw[10 : 10 + blob_len]
    if len(blob) != blob_len:
        raise CheckpointError("truncated checkpoint manifest")
    manifest = json.loads(blob.decode())
    net = Network(NetworkSpec.from_dict(manifest["spec"]))
    offset = 10 + blob_len
    by_name = {n: t for n, t in _net_arrays(net)}
    for entry in manifest["arrays"]:
        t = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise CheckpointError(
                f"{entry['name']}: stored shape {shape} != expected {t.data.shape}"
            )
        nbytes = int(np.prod(shape)) * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated payload for {entry['name']}")
        t.data = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after payload")
    return net, manifest["meta"]
