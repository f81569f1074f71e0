"""Multinomial logistic-regression probe over fixed patch features.

The probe is a linear classifier head trained with plain SGD on 48 grid-mean
colour features. It exists to run the fine-tuning schedule (step budget,
evaluation cadence, smoothing window, per-epoch checkpoints) end to end
without a deep-learning framework.

Checkpoint layout (little endian)::

    8 bytes   magic b"XBDPROBE"
    uint16    format version (1)
    uint16    reserved (0)
    uint32    n_classes
    uint32    n_features
    float64[n_classes * n_features]  weights, row-major
    float64[n_classes]               bias

Metric log (``metrics.jsonl``): one object per optimizer step with ``step``,
``epoch``, ``loss``, ``train_acc_raw``, ``train_acc_smoothed``; rows on an
evaluation step also carry ``eval_accuracy``, ``eval_precision``,
``eval_recall``, ``eval_f1`` (weighted) and ``eval_macro_f1``.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import SampleManifestEntry, load_patch, read_manifest
from .errors import DataError, NonFiniteLoss
from .labels import NUM_CLASSES
from .metrics import ConfusionMatrix, PredictionRecord, argmax_class, report, write_predictions

log = logging.getLogger(__name__)

LEARNING_RATE_GRID = (1e-7, 1e-6, 1e-5, 5e-5, 1e-4)
BATCH_SIZE_GRID = (8, 16, 24, 32)
FROZEN_LEARNING_RATE = 1e-3
FROZEN_EPOCHS = 10
FROZEN_BATCH_SIZE = 24

GRID_CELLS = 4
N_FEATURES = GRID_CELLS * GRID_CELLS * 3

_MAGIC = b"XBDPROBE"
_HEADER = struct.Struct("<8sHHII")
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    dataset_len: int = 0
    num_epochs: int = FROZEN_EPOCHS
    train_batch_size: int = FROZEN_BATCH_SIZE
    num_devices: int = 1
    learning_rate: float = FROZEN_LEARNING_RATE
    weight_decay: float = 0.05
    eval_every: int = 20
    eval_batch_size: int = 64
    smoothing_window: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("num_epochs", "train_batch_size", "num_devices", "eval_every", "eval_batch_size",
                     "smoothing_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dataset_len < 0 or self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("dataset_len, learning_rate and weight_decay must be non-negative")

    @property
    def in_search_grid(self) -> bool:
        return self.learning_rate in LEARNING_RATE_GRID and self.train_batch_size in BATCH_SIZE_GRID


def max_steps(cfg: TrainConfig) -> int:
    """ceil(dataset_len * num_epochs / (train_batch_size * num_devices)), in integers."""
    num = cfg.dataset_len * cfg.num_epochs
    den = cfg.train_batch_size * cfg.num_devices
    return -(-num // den)


def _cell_edges(n: int) -> List[int]:
    # Uneven cells when n is not a multiple of the grid (e.g. 518 -> 129/130 px).
    return [(i * n) // GRID_CELLS for i in range(GRID_CELLS + 1)]


def featurize(pixels: np.ndarray) -> np.ndarray:
    """Per-cell mean R, G, B over a 4x4 grid, cells in row-major order.

    Values are in [0, 255]; divide by 255 before training.
    """
    px = np.asarray(pixels)[..., :3]
    h, w = px.shape[:2]
    if h < GRID_CELLS or w < GRID_CELLS:
        raise ValueError(f"patch must be at least {GRID_CELLS}x{GRID_CELLS}")
    ys, xs = _cell_edges(h), _cell_edges(w)
    out = np.empty(N_FEATURES, dtype=np.float64)
    k = 0
    for i in range(GRID_CELLS):
        for j in range(GRID_CELLS):
            cell = px[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            sums = cell.reshape(-1, 3).sum(axis=0, dtype=np.int64)
            out[k:k + 3] = sums / (cell.shape[0] * cell.shape[1])
            k += 3
    return out


@dataclass
class LinearHead:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES, n_classes: int = NUM_CLASSES) -> "LinearHead":
        return cls(np.zeros((n_classes, n_features)), np.zeros(n_classes))

    def copy(self) -> "LinearHead":
        return LinearHead(self.weights.copy(), self.bias.copy())

    def save(self, path) -> None:
        n_classes, n_features = self.weights.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, _VERSION, 0, n_classes, n_features))
            fh.write(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.bias, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "LinearHead":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise DataError(f"{path}: truncated checkpoint")
        magic, version, _, n_classes, n_features = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise DataError(f"{path}: not a probe checkpoint (v{_VERSION})")
        expected = _HEADER.size + 8 * (n_classes * n_features + n_classes)
        if len(data) != expected:
            raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
        params = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        w = params[:n_classes * n_features].reshape(n_classes, n_features)
        return cls(w.copy(), params[n_classes * n_features:].copy())


def forward(head: LinearHead, features: np.ndarray) -> np.ndarray:
    """Logits ``W x + b``; works on a single vector or a (n, F) batch."""
    return features @ head.weights.T + head.bias


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(head: LinearHead, features: np.ndarray, labels: np.ndarray,
                  weight_decay: float) -> Tuple[float, LinearHead]:
    """Mean softmax cross-entropy plus ``weight_decay / 2 * ||W||^2``.

    The bias is not decayed. Gradients come back as a :class:`LinearHead`.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).ravel()
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    logp = _log_softmax(forward(head, x))
    loss = -logp[np.arange(n), y].mean() + 0.5 * weight_decay * float(np.sum(head.weights ** 2))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w = delta.T @ x + weight_decay * head.weights
    grad_b = delta.sum(axis=0)
    return float(loss), LinearHead(grad_w, grad_b)


def predict_classes(head: LinearHead, features: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(features), batch_size):
        logits = forward(head, features[start:start + batch_size])
        preds.extend(argmax_class(row) for row in logits)
    return np.asarray(preds, dtype=np.int64)


def _eval_fields(head: LinearHead, x: np.ndarray, y: np.ndarray, batch_size: int) -> dict:
    rep = report(ConfusionMatrix.from_pairs(y, predict_classes(head, x, batch_size)))
    return {
        "eval_accuracy": rep.accuracy,
        "eval_precision": rep.weighted.precision,
        "eval_recall": rep.weighted.recall,
        "eval_f1": rep.weighted.f1,
        "eval_macro_f1": rep.macro.f1,
    }


@dataclass
class TrainResult:
    head: LinearHead
    log: List[dict]
    checkpoints: List[Path] = field(default_factory=list)
    best_epoch: Optional[int] = None


def _batch_schedule(n: int, cfg: TrainConfig) -> List[np.ndarray]:
    """Index batches for the whole run.

    Each epoch is an independent seeded permutation; the epochs are laid end
    to end and cut into batches of ``train_batch_size * num_devices``, so the
    number of batches is exactly :func:`max_steps`.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x9A0BE])))
    stream = np.concatenate([rng.permutation(n) for _ in range(cfg.num_epochs)])
    eff = cfg.train_batch_size * cfg.num_devices
    return [stream[i:i + eff] for i in range(0, len(stream), eff)]


def train_arrays(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    x_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
    out_dir=None,
    head: Optional[LinearHead] = None,
    on_step: Optional[Callable[[dict, LinearHead], None]] = None,
) -> TrainResult:
    """SGD over already-normalised features; ``cfg.dataset_len`` is taken from ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(x)
    if n == 0:
        raise DataError("no training samples")
    cfg = replace(cfg, dataset_len=n)
    head = head.copy() if head is not None else LinearHead.zeros(x.shape[1])
    has_val = x_val is not None and len(x_val) > 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    batches = _batch_schedule(n, cfg)
    assert len(batches) == max_steps(cfg)
    recent = deque(maxlen=cfg.smoothing_window)
    rows: List[dict] = []
    checkpoints: List[Path] = []
    epoch_scores = []
    seen = 0
    for step, idx in enumerate(batches, 1):
        xb, yb = x[idx], y[idx]
        loss, grad = loss_and_grad(head, xb, yb, cfg.weight_decay)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {step}")
        acc = float(np.mean(predict_classes(head, xb, len(xb)) == yb))
        recent.append(acc)
        smoothed = math.fsum(recent) / len(recent)
        if cfg.learning_rate:
            with np.errstate(over="ignore", invalid="ignore"):
                head.weights -= cfg.learning_rate * grad.weights
                head.bias -= cfg.learning_rate * grad.bias
        if not (np.isfinite(head.weights).all() and np.isfinite(head.bias).all()):
            raise NonFiniteLoss(f"parameters became non-finite at step {step}")
        seen += len(idx)
        row = {"step": step, "epoch": seen / n, "loss": loss,
               "train_acc_raw": acc, "train_acc_smoothed": smoothed}
        if has_val and step % cfg.eval_every == 0:
            row.update(_eval_fields(head, x_val, y_val, cfg.eval_batch_size))
        rows.append(row)
        if on_step is not None:
            on_step(row, head)

        finished = seen // n
        while len(epoch_scores) < finished:
            epoch = len(epoch_scores) + 1
            val_acc = _eval_fields(head, x_val, y_val, cfg.eval_batch_size)["eval_accuracy"] if has_val else 0.0
            epoch_scores.append((val_acc, smoothed))
            if out_dir is not None:
                path = out_dir / f"checkpoint-epoch-{epoch}.ckpt"
                head.save(path)
                checkpoints.append(path)

    best_epoch = None
    if epoch_scores:
        # Highest validation accuracy, then smoothed training accuracy; earliest on ties.
        best_epoch = max(range(len(epoch_scores)), key=lambda i: (epoch_scores[i], -i)) + 1
        if out_dir is not None:
            shutil.copyfile(checkpoints[best_epoch - 1], out_dir / "best.ckpt")
    if out_dir is not None:
        with open(out_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return TrainResult(head, rows, checkpoints, best_epoch)


def load_features(manifest_dir, entries: Sequence[SampleManifestEntry]) -> Tuple[np.ndarray, np.ndarray]:
    """Featurised, [0, 1]-normalised patches and their labels."""
    if not entries:
        return np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64)
    x = np.stack([featurize(load_patch(manifest_dir, e)) for e in entries]) / 255.0
    y = np.array([e.label for e in entries], dtype=np.int64)
    return x, y


def train(cfg: TrainConfig, manifest_path, out_dir, on_step=None) -> TrainResult:
    manifest_path = Path(manifest_path)
    entries, _ = read_manifest(manifest_path)
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "val"]
    x, y = load_features(manifest_path.parent, train_entries)
    xv, yv = load_features(manifest_path.parent, val_entries)
    return train_arrays(x, y, cfg, xv, yv, out_dir=out_dir, on_step=on_step)


def predict_records(head: LinearHead, manifest_dir, entries: Sequence[SampleManifestEntry]) -> List[PredictionRecord]:
    x, y = load_features(manifest_dir, entries)
    if not len(x):
        return []
    logits = forward(head, x)
    return [PredictionRecord(e.sample_id, tuple(float(v) for v in row), int(label))
            for e, row, label in zip(entries, logits, y)]


def predict(checkpoint, manifest_path, split: str, out_path) -> int:
    manifest_path = Path(manifest_path)
    head = LinearHead.load(checkpoint)
    entries, _ = read_manifest(manifest_path)
    chosen = [e for e in entries if e.split == split]
    return write_predictions(predict_records(head, manifest_path.parent, chosen), out_path)
