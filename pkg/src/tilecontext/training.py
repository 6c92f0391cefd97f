"""Supervised training and evaluation on the synthetic task."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ContractViolation, InvalidNumerics, TrainingDiverged
from .optim import AdamW, cosine_decay
from .pipeline import Model
from .synthetic import SyntheticDataset

CURVE_CSV_HEADER = "epoch,loss,acc"


@dataclass
class TrainResult:
    curve: list  # (epoch, mean loss, train accuracy)
    steps: int

    def write_csv(self, path):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CURVE_CSV_HEADER.split(","))
        for epoch, loss, acc in self.curve:
            writer.writerow([epoch, f"{loss:.10g}", f"{acc:.6g}"])
        Path(path).write_text(buf.getvalue())


def train(model: Model, dataset: SyntheticDataset, *, epochs: int,
          batch_size: int = 16, lr: float = 1e-4, weight_decay: float = 0.0,
          seed: int = 0, cosine: bool = True, warmup_steps: int = 0,
          stop_at_train_acc: float | None = None,
          verbose: bool = False) -> TrainResult:
    """AdamW training with warmup and a cosine learning-rate multiplier.

    Deterministic for a fixed seed and thread count; raises TrainingDiverged
    if the loss goes non-finite. ``stop_at_train_acc`` ends training early
    once the epoch train accuracy reaches the bound (a deterministic rule
    that never looks at held-out data).
    """
    n = len(dataset)
    if n == 0:
        raise ContractViolation("empty dataset")
    opt = AdamW(model.params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    steps_per_epoch = -(-n // batch_size)
    total_steps = epochs * steps_per_epoch
    step = 0
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        correct = 0
        for b in range(steps_per_epoch):
            ids = order[b * batch_size:(b + 1) * batch_size]
            images = T.tensor(dataset.images[ids])
            labels = dataset.labels[ids]
            try:
                logits = model.logits(images, seed=seed * 1013904223 + step)
                loss = T.cross_entropy(logits, labels)
            except InvalidNumerics as exc:
                raise TrainingDiverged(
                    f"non-finite values at step {step}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at step {step}")
            losses.append(value)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            opt.zero_grad()
            loss.backward()
            lr_scale = cosine_decay(step, total_steps) if cosine else 1.0
            if warmup_steps > 0 and step < warmup_steps:
                lr_scale *= (step + 1) / warmup_steps
            opt.step(lr_scale)
            step += 1
        curve.append((epoch, float(np.mean(losses)), correct / n))
        if verbose:
            print(f"epoch {epoch}: loss {curve[-1][1]:.4f} acc {curve[-1][2]:.3f}")
        if stop_at_train_acc is not None and curve[-1][2] >= stop_at_train_acc:
            break
    return TrainResult(curve=curve, steps=step)


def evaluate(model: Model, dataset: SyntheticDataset, batch_size: int = 64,
             seed: int = 0) -> float:
    """Top-1 accuracy, forward only."""
    n = len(dataset)
    correct = 0
    with T.no_grad():
        for start in range(0, n, batch_size):
            ids = np.arange(start, min(start + batch_size, n))
            logits = model.logits(T.tensor(dataset.images[ids]), seed=seed)
            correct += int((logits.data.argmax(axis=1) == dataset.labels[ids]).sum())
    return correct / n
