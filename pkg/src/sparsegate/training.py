"""Optimization loop for gated networks.

Minibatch momentum SGD on data loss + gate penalties, with
straight-through gate gradients, projection of gates into [0,1] after
every step, a hyperparameter sweep harness, sampled-sparsity
measurement, and pre-initialization of gates from pretrained weights.

Runs are bitwise reproducible from (config, dataset): all randomness
flows from generators spawned off the config seed, and no wall-clock
values enter the records.
"""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import batches
from .gates import draw_ml
from .layers import ConfigError
from .regularizers import (
    PenaltyWeights,
    bimodal_penalty,
    gate_l1_penalty,
    mask_variance,
    penalty_terms,
)
from .tensor import Tensor, softmax_xent

DRAW_MODES = ("ml", "unbiased")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; names the epoch and batch it happened in."""

    def __init__(self, epoch, batch, value):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: loss={value!r}"
        )
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    draw_mode: str = "ml"  # "ml" (threshold) | "unbiased" (one draw per batch)
    gate_init: float = 0.6  # constant init; pre-init is applied before train()
    train_gates: bool = True
    gated_layers: tuple = None  # None = gate per network spec; names otherwise
    sample_draws: int = 100  # S for sampled-sparsity statistics

    def validate(self):
        PenaltyWeights(self.lambda1, self.lambda2, self.lambda3)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0,1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.draw_mode not in DRAW_MODES:
            raise ConfigError(f"draw_mode must be one of {DRAW_MODES}")
        if not 0.0 <= self.gate_init <= 1.0:
            raise ConfigError("gate_init must be a valid bernoulli parameter in [0,1]")
        if self.sample_draws < 2:
            raise ConfigError("sample_draws must be >= 2")

    def to_dict(self):
        d = asdict(self)
        if d["gated_layers"] is not None:
            d["gated_layers"] = list(d["gated_layers"])
        return d


@dataclass
class RunRecord:
    """Everything a run produced: per-epoch metrics and final summary."""

    config: dict
    epochs: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_jsonl(self):
        lines = [json.dumps(e, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"final": self.final}, sort_keys=True))
        return "\n".join(lines) + "\n"


def sgd_step(params, velocities, lr, momentum):
    """One momentum-SGD update: v <- momentum*v + grad; p <- p - lr*v."""
    for p, v in zip(params, velocities):
        if p.grad is None:
            raise ConfigError(f"missing gradient for parameter {p.name or '<unnamed>'}")
        v *= momentum
        v += p.grad
        p.data -= lr * v


def evaluate(net, ds, batch_size=256):
    """Deterministic eval-mode accuracy over a dataset."""
    if len(ds) == 0:
        return 0.0
    correct = 0
    for start in range(0, len(ds), batch_size):
        x = ds.images[start : start + batch_size]
        y = ds.labels[start : start + batch_size]
        logits = net.forward(Tensor(x), "eval")
        correct += int((logits.data.argmax(axis=1) == y).sum())
    return correct / len(ds)


def sparsity_snapshot(net):
    """Per-gated-layer and total sparsity (%) from the threshold draw."""
    per_layer = {}
    nnz_total = 0
    size_total = 0
    for layer in net.gated_layers():
        mask = draw_ml(layer.gates)
        per_layer[layer.name] = 100.0 * (1.0 - mask.nnz / mask.size)
        nnz_total += mask.nnz
        size_total += mask.size
    total = 100.0 * (1.0 - nnz_total / size_total) if size_total else 0.0
    return per_layer, total


def measure_sampled_sparsity(net, draws, rng):
    """Mean and unbiased variance of sparsity (%) over unbiased mask draws."""
    if draws < 2:
        raise ConfigError("need at least 2 draws for a variance")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    gated = net.gated_layers()
    if not gated:
        return 0.0, 0.0
    size_total = sum(l.gates.data.size for l in gated)
    vals = np.empty(draws, dtype=np.float64)
    for s in range(draws):
        masks = net.draw_masks("train_sampled", rng)
        nnz = sum(m.nnz for m in masks.values())
        vals[s] = 100.0 * (1.0 - nnz / size_total)
    return float(vals.mean()), float(vals.var(ddof=1))


def train(net, train_ds, cfg, eval_ds=None, reinit=True):
    """Train a gated network; returns the full RunRecord.

    One mask draw happens per minibatch in unbiased mode; threshold mode
    recomputes the deterministic mask each batch. Gates are projected
    into [0,1] after every optimizer step. Non-finite loss aborts with
    a diagnostic naming the epoch and batch.
    """
    cfg.validate()
    if len(train_ds) == 0:
        raise ConfigError("training dataset is empty")
    root = np.random.default_rng(cfg.seed)
    init_rng, shuffle_rng, draw_rng, sample_rng = root.spawn(4)
    if reinit:
        net.initialize(init_rng, gate_init=cfg.gate_init)
    pw = PenaltyWeights(cfg.lambda1, cfg.lambda2, cfg.lambda3)
    params = net.trainable_params(include_gates=cfg.train_gates)
    velocities = [np.zeros_like(p.data) for p in params]
    mode = "train_ml" if cfg.draw_mode == "ml" else "train_sampled"
    gated = net.gated_layers()
    record = RunRecord(config=cfg.to_dict())
    eval_set = eval_ds if eval_ds is not None else train_ds

    for epoch in range(cfg.epochs):
        loss_sum = 0.0
        data_sum = 0.0
        steps = 0
        for bi, (bx, by) in enumerate(batches(train_ds, cfg.batch_size, shuffle_rng)):
            logits = net.forward(Tensor(bx), mode, rng=draw_rng)
            data_loss = softmax_xent(logits, by)
            penalty = penalty_terms(
                [l.gates for l in gated], [l.w for l in gated], pw
            )
            loss = data_loss if penalty is None else data_loss + penalty
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, bi, value)
            for p in params:
                p.grad = None
            loss.backward()
            sgd_step(params, velocities, cfg.lr, cfg.momentum)
            net.project_gates()
            loss_sum += value
            data_sum += float(data_loss.data)
            steps += 1
        per_layer, total_sp = sparsity_snapshot(net)
        accuracy = evaluate(net, eval_set)
        record.epochs.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / steps,
                "data_loss": data_sum / steps,
                "bimodal_sum": sum(bimodal_penalty(l.gates) for l in gated),
                "gate_l1_sum": sum(gate_l1_penalty(l.gates) for l in gated),
                "gate_variance_sum": float(
                    sum(
                        np.sum(mask_variance(l.gates), dtype=np.float64)
                        for l in gated
                    )
                ),
                "weight_l2_sum": float(
                    sum(
                        np.sum(
                            l.w.data.astype(np.float64) ** 2, dtype=np.float64
                        )
                        for l in gated
                    )
                ),
                "accuracy": accuracy,
                "sparsity_by_layer": per_layer,
                "total_sparsity": total_sp,
            }
        )

    record.final = {
        "accuracy": record.epochs[-1]["accuracy"],
        "total_sparsity": record.epochs[-1]["total_sparsity"],
        "sparsity_by_layer": record.epochs[-1]["sparsity_by_layer"],
    }
    if cfg.draw_mode == "unbiased":
        mean, var = measure_sampled_sparsity(net, cfg.sample_draws, sample_rng)
        record.final["sparsity_mean"] = mean
        record.final["sparsity_var"] = var
    return record


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = (
    "lambda1",
    "lambda2",
    "init",
    "mode",
    "final_accuracy",
    "final_sparsity",
    "sparsity_mean",
    "sparsity_var",
)


def sweep(lambda1_grid, lambda2_grid, init_grid, base_cfg, build_net, train_ds,
          eval_ds=None, draws=0):
    """One training run per grid point, fixed seed policy (same seed each).

    Returns a list of row dicts matching SWEEP_COLUMNS. Diverged cells
    are kept with empty metrics and marked failed.
    """
    if not lambda1_grid or not lambda2_grid or not init_grid:
        raise ConfigError("sweep grids must be nonempty")
    rows = []
    for init in init_grid:
        for l1 in lambda1_grid:
            for l2 in lambda2_grid:
                cfg = replace(base_cfg, lambda1=l1, lambda2=l2, gate_init=init)
                net = build_net()
                row = {
                    "lambda1": l1,
                    "lambda2": l2,
                    "init": init,
                    "mode": cfg.draw_mode,
                    "final_accuracy": None,
                    "final_sparsity": None,
                    "sparsity_mean": None,
                    "sparsity_var": None,
                    "failed": False,
                }
                try:
                    rec = train(net, train_ds, cfg, eval_ds=eval_ds)
                except TrainingDiverged:
                    row["failed"] = True
                    rows.append(row)
                    continue
                row["final_accuracy"] = rec.final["accuracy"]
                row["final_sparsity"] = rec.final["total_sparsity"]
                if draws > 0:
                    mean, var = measure_sampled_sparsity(
                        net, draws, np.random.default_rng([cfg.seed, 1])
                    )
                    row["sparsity_mean"] = mean
                    row["sparsity_var"] = var
                elif cfg.draw_mode == "unbiased":
                    row["sparsity_mean"] = rec.final.get("sparsity_mean")
                    row["sparsity_var"] = rec.final.get("sparsity_var")
                rows.append(row)
    return rows


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_to_csv(rows):
    """Render sweep rows as CSV text with the stable column schema."""
    out = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        out.append(",".join(_csv_cell(row.get(col)) for col in SWEEP_COLUMNS))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# pre-initialization from pretrained weights


def preinit_gates(net, pretrained, keep_fractions):
    """Copy pretrained weights and pre-set gates from weight magnitudes.

    Per gated layer, the gates of the top keep_fraction of weights by
    |w| are set to 1.0 and all others to 0.49 (off, but close enough to
    the threshold that training can revive them). Ties at the cutoff
    keep the lower flat index. `keep_fractions` is a single fraction, a
    {layer name: fraction} map, or a sequence aligned with gated layers.
    """
    src_layers = pretrained.layers if hasattr(pretrained, "layers") else pretrained
    if len(src_layers) != len(net.layers):
        raise ConfigError(
            f"pretrained net has {len(src_layers)} layers, expected {len(net.layers)}"
        )
    gated_names = [l.name for l in net.gated_layers()]
    fractions = _normalize_fractions(keep_fractions, gated_names)
    for layer, src in zip(net.layers, src_layers):
        if src.w.data.shape != layer.w.data.shape:
            raise ConfigError(
                f"{layer.name}: pretrained weight shape {src.w.data.shape} "
                f"!= {layer.w.data.shape}"
            )
        layer.w.data = src.w.data.copy()
        layer.b.data = src.b.data.copy()
        if layer.gates is None:
            continue
        f = fractions[layer.name]
        flat = np.abs(layer.w.data).ravel()
        k = int(round(f * flat.size))
        # stable sort on -|w|: equal magnitudes keep the lower flat index
        order = np.argsort(-flat, kind="stable")
        g = np.full(flat.size, 0.49, dtype=np.float32)
        g[order[:k]] = 1.0
        layer.gates.data = g.reshape(layer.w.data.shape)
    return net


def _normalize_fractions(keep, gated_names):
    if isinstance(keep, (int, float)):
        fractions = {name: float(keep) for name in gated_names}
    elif isinstance(keep, dict):
        fractions = {name: float(keep[name]) for name in gated_names}
    else:
        vals = list(keep)
        if len(vals) != len(gated_names):
            raise ConfigError(
                f"got {len(vals)} keep fractions for {len(gated_names)} gated layers"
            )
        fractions = {name: float(v) for name, v in zip(gated_names, vals)}
    for name, f in fractions.items():
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"{name}: keep fraction must lie in (0,1], got {f}")
    return fractions
