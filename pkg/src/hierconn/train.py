"""Optimization loop: decoupled-weight-decay adaptive optimizer, cosine
learning-rate annealing, mixup batches, early stopping on a validation
metric, and bit-reproducible checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .checkpoint import save_checkpoint
from .data import SubjectRecord, mixup
from .errors import EmptyDataset, NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from .losses import LossWeights, total_loss_graph
from .metrics import compute_metrics
from .model import ModelConfig, ModelParams, forward_batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_min: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 30  # 0 disables early stopping
    early_stop_metric: str = "auc"
    grad_clip_norm: float | None = None
    mixup_enabled: bool = True
    mixup_alpha: float = 1.0  # Beta(a, a); 1.0 is a uniform lambda
    seed: int = 0

    def __post_init__(self):
        if not self.lr > self.lr_min > 0:
            raise ValueError("need lr > lr_min > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.early_stop_metric not in ("auc", "acc"):
            raise ValueError("early_stop_metric must be 'auc' or 'acc'")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "weight_decay": self.weight_decay, "lr_min": self.lr_min,
            "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "early_stop_patience": self.early_stop_patience,
            "early_stop_metric": self.early_stop_metric,
            "grad_clip_norm": self.grad_clip_norm,
            "mixup_enabled": self.mixup_enabled, "mixup_alpha": self.mixup_alpha,
            "seed": self.seed,
        }


class OptimizerState:
    """Per-parameter first/second moment accumulators and step counter."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(params[name].data) for name in params.names()}
        self.v = {name: np.zeros_like(params[name].data) for name in params.names()}
        self.step = 0


@dataclass
class TrainReport:
    best_epoch: int
    best_val_metric: float
    epochs_run: int
    total_steps: int
    skipped_batches: int
    history: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
            "epochs_run": self.epochs_run,
            "total_steps": self.total_steps,
            "skipped_batches": self.skipped_batches,
            "history": self.history,
            "checkpoint_path": self.checkpoint_path,
        }


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float) -> float:
    """Cosine annealing from lr at step 0 down to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def optimizer_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr_t: float,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay adaptive step over every named tensor.

    Weight decay multiplies parameters directly (never enters the moment
    estimates); moments are bias-corrected. Raises NonFiniteGradient before
    touching any state so a failed batch can be skipped cleanly.
    """
    names = params.names()
    for name in names:
        if name not in grads:
            raise ShapeMismatch(f"missing gradient for {name}")
        if grads[name].shape != params[name].data.shape:
            raise ShapeMismatch(
                f"{name}: grad shape {grads[name].shape} != param shape "
                f"{params[name].data.shape}"
            )
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    if cfg.grad_clip_norm is not None:
        total_sq = sum(float(np.sum(g * g)) for g in grads.values())
        norm = math.sqrt(total_sq)
        if norm > cfg.grad_clip_norm:
            scale = cfg.grad_clip_norm / norm
            grads = {name: g * scale for name, g in grads.items()}
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for name in names:
        p = params[name]
        g = grads[name]
        if cfg.weight_decay:
            p.data = p.data * (1.0 - lr_t * cfg.weight_decay)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        p.data = p.data - lr_t * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def collect_gradients(params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients after backward; a missing gradient is a wiring bug."""
    grads = {}
    for name in params.names():
        grad = params[name].grad
        if grad is None:
            raise NonFiniteGradient(f"no gradient reached {name}")
        grads[name] = grad
    return grads


def _stack(records: list[SubjectRecord]) -> tuple[np.ndarray, np.ndarray]:
    matrices = np.stack([rec.matrix.values for rec in records])
    labels = np.array([rec.label for rec in records], dtype=np.int64)
    return matrices, labels


def predict_scores(
    matrices: np.ndarray, params: ModelParams, config: ModelConfig
) -> np.ndarray:
    """Positive-class probability from the graph head, eval mode."""
    with no_grad():
        out = forward_batch(matrices, params, config, mode="eval")
    logits = out.z_g.data
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs[:, 1]


def _val_metric(kind: str, scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(primary, secondary) validation ranking key.

    The secondary metric only breaks ties: once the primary saturates
    (common on strong synthetic signal), checkpoint selection keeps
    following calibration instead of freezing at the first plateau epoch.
    """
    metrics = compute_metrics(scores, labels)
    if kind == "auc":
        return metrics.auc, metrics.acc
    return metrics.acc, metrics.auc


def fit(
    train_records: list[SubjectRecord],
    val_records: list[SubjectRecord],
    params: ModelParams,
    config: ModelConfig,
    cfg: TrainConfig,
    weights: LossWeights,
    out_dir: str | Path | None = None,
) -> TrainReport:
    """Train to convergence or patience; restores the best-metric weights.

    Deterministic given ``cfg.seed`` on one thread: batch order, mixup draws,
    and dropout masks all come from seed-derived generators.
    """
    if not train_records or not val_records:
        raise EmptyDataset("fit needs nonempty train and validation sets")
    x_train, y_train = _stack(train_records)
    x_val, y_val = _stack(val_records)
    if x_train.shape[1] != config.n or x_val.shape[1] != config.n:
        raise ShapeMismatch("dataset node count differs from model config")

    n_train = len(train_records)
    batches_per_epoch = math.ceil(n_train / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    state = OptimizerState(params)
    one_hot = np.eye(config.class_count)[y_train]

    log_rows: list[tuple] = []
    history: list[dict] = []
    best_key = (-math.inf, -math.inf)
    best_epoch = 0
    best_state: dict[str, np.ndarray] | None = None
    skipped = 0
    epochs_run = 0
    stale = 0
    global_step = 0

    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        order = np.random.default_rng([cfg.seed, 11, epoch]).permutation(n_train)
        epoch_losses = []
        for batch_index in range(batches_per_epoch):
            idx = order[batch_index * cfg.batch_size : (batch_index + 1) * cfg.batch_size]
            xb, yb = x_train[idx], one_hot[idx]
            if cfg.mixup_enabled and len(idx) > 1:
                mix_rng = np.random.default_rng([cfg.seed, 13, epoch, batch_index])
                lam = float(mix_rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
                pair = mix_rng.permutation(len(idx))
                xb, yb = mixup(xb, xb[pair], yb, yb[pair], lam)
            lr_t = cosine_lr(global_step, total_steps, cfg.lr, cfg.lr_min)
            drop_rng = np.random.default_rng([cfg.seed, 17, epoch, batch_index])
            try:
                out = forward_batch(xb, params, config, mode="train", rng=drop_rng)
                total, breakdown = total_loss_graph(out, yb, global_step, total_steps, weights)
                params.zero_grad()
                total.backward()
                grads = collect_gradients(params)
                optimizer_step(params, grads, state, lr_t, cfg)
            except (NonFiniteActivation, NonFiniteGradient):
                # numerical blowups skip the batch without killing the run
                skipped += 1
                global_step += 1
                continue
            log_rows.append(
                (global_step, breakdown.cls, breakdown.aux, breakdown.oc,
                 breakdown.hc, breakdown.beta_t, breakdown.total, lr_t)
            )
            epoch_losses.append(breakdown.total)
            global_step += 1

        val_scores = predict_scores(x_val, params, config)
        key = _val_metric(cfg.early_stop_metric, val_scores, y_val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                "val_metric": key[0],
            }
        )
        improved = key > best_key
        if key >= best_key:
            # ties keep the latest weights: at equal validation quality the
            # longer-trained model carries the matured attention structure
            # and the ramped-in consistency refinement
            best_key = key
            best_epoch = epoch
            best_state = {name: arr.copy() for name, arr in params.state_arrays().items()}
        if improved:
            stale = 0
        else:
            stale += 1
            if cfg.early_stop_patience > 0 and stale >= cfg.early_stop_patience:
                break

    if best_state is not None:
        params.load_state_arrays(best_state)

    report = TrainReport(
        best_epoch=best_epoch,
        best_val_metric=best_key[0],
        epochs_run=epochs_run,
        total_steps=total_steps,
        skipped_batches=skipped,
        history=history,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = save_checkpoint(
            out_dir / "checkpoint.bin",
            config,
            params,
            meta={"seed": cfg.seed, "best_epoch": best_epoch, "best_val_metric": best_key[0]},
        )
        report.checkpoint_path = str(ckpt)
        write_training_log(out_dir / "training_log.csv", log_rows)
    return report


def write_training_log(path: str | Path, rows: list[tuple]) -> None:
    """Per-step loss breakdown; full-precision floats keep runs comparable."""
    with open(path, "w") as f:
        f.write("step,cls,aux,oc,hc,beta,total,lr\n")
        for row in rows:
            step, *floats = row
            f.write(",".join([str(step)] + [repr(v) for v in floats]) + "\n")
