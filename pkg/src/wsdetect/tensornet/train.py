"""Training loop and the finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wsdetect.tensornet.graph import ModelGraph
from wsdetect.tensornet.losses import ClassWeights, SoftmaxCrossEntropy
from wsdetect.tensornet.optim import AdamState, adam_step


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class FitHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def final_accuracy(self) -> float:
        return self.epochs[-1].accuracy if self.epochs else 0.0


def _slice_inputs(inputs, idx):
    if isinstance(inputs, tuple):
        return tuple(part[idx] for part in inputs)
    return inputs[idx]


def _num_rows(inputs) -> int:
    if isinstance(inputs, tuple):
        return len(inputs[0])
    return len(inputs)


def fit(model: ModelGraph, inputs, labels, *, epochs: int, batch_size: int,
        learning_rate: float, seed: int = 0,
        weights: ClassWeights | None = None) -> FitHistory:
    """Adam + softmax cross-entropy training, deterministic per seed.

    `inputs` is one array or a tuple of arrays sharing their first axis;
    `labels` are 0/1 ints. Shuffling, dropout masks and everything else
    stochastic comes from one seeded generator.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n = _num_rows(inputs)
    if n == 0:
        raise ValueError("cannot fit on an empty dataset")
    if len(labels) != n:
        raise ValueError("inputs and labels disagree on length")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")

    rng = np.random.default_rng(seed)
    head = SoftmaxCrossEntropy(weights)
    opt = AdamState(lr=learning_rate)
    history = FitHistory()

    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        seen = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) == 1 and start > 0:
                # a trailing single sample cannot batch-normalize; it
                # rejoins a full batch on the next shuffle
                continue
            batch_in = _slice_inputs(inputs, idx)
            batch_labels = labels[idx]
            model.zero_grads()
            logits = model.forward(batch_in, mode="train", rng=rng)
            loss, probs = head.forward(logits, batch_labels)
            model.backward(head.backward())
            adam_step(opt, model.parameters(), model.gradients())
            total_loss += loss * len(idx)
            correct += int((probs.argmax(axis=1) == batch_labels).sum())
            seen += len(idx)
        history.epochs.append(EpochStats(
            epoch=epoch, loss=total_loss / seen, accuracy=correct / seen))
    return history


def grad_check(model: ModelGraph, inputs, labels, *, h: float = 1e-5,
               weights: ClassWeights | None = None) -> float:
    """Max relative error between analytic and central-difference grads.

    Runs the model in "gradcheck" mode: dropout disabled, batch norm on
    batch statistics with running estimates untouched, so every probe
    evaluates the same function.
    """
    labels = np.asarray(labels, dtype=np.intp)
    head = SoftmaxCrossEntropy(weights)

    def loss_only():
        logits = model.forward(inputs, mode="gradcheck")
        loss, _ = head.forward(logits, labels)
        return loss

    model.zero_grads()
    logits = model.forward(inputs, mode="gradcheck")
    _, _ = head.forward(logits, labels)
    model.backward(head.backward())
    analytic = {name: g.copy() for name, g in model.gradients().items()}

    worst = 0.0
    params = model.parameters()
    frozen = model.frozen_masks()
    for name, p in params.items():
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        skip = frozen[name].reshape(-1) if name in frozen else None
        for i in range(flat.size):
            if skip is not None and skip[i]:
                continue
            keep = flat[i]
            flat[i] = keep + h
            up = loss_only()
            flat[i] = keep - h
            down = loss_only()
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            a = a_flat[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
