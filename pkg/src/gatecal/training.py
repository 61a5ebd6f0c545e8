"""Rectified-flow training for the toy model.

Linear noise-to-data paths: x_t = (1-t) x0 + t x1 with x0 ~ N(0, I),
t ~ U(0, 1); the network regresses the constant path velocity x1 - x0.
The condition is dropped to the null class with fixed probability so the
trained model supports classifier-free guidance.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import DatasetSpec, sample_batch
from .errors import ContractError, NumericError, TrainingDivergedError
from .model import DitModel, model_forward, patchify
from .rng import Rng
from .tensor import Tensor

COND_DROPOUT = 0.1


def flow_matching_loss(
    model: DitModel,
    images: np.ndarray,
    class_ids: np.ndarray,
    rng: Rng,
    cond_dropout: float = COND_DROPOUT,
) -> Tensor:
    """Mean squared error between predicted and true path velocity.

    Draws, in order: noise x0, times t, condition-dropout mask."""
    if len(images) == 0:
        raise ContractError("flow_matching_loss needs a non-empty batch")
    x1 = np.asarray(images, dtype=np.float64)
    x0 = rng.normal(x1.shape)
    t = rng.uniform(len(x1))
    dropped = np.where(rng.uniform(len(x1)) < cond_dropout,
                       model.arch.null_class, np.asarray(class_ids, dtype=np.int64))
    x_t = (1.0 - t)[:, None, None] * x0 + t[:, None, None] * x1
    target = Tensor(patchify(x1 - x0, model.arch.patch))
    pred = model_forward(model, patchify(x_t, model.arch.patch), t, dropped)
    return T.tmean(T.square(T.sub(pred, target)))


class Adam:
    """Plain Adam with bias correction; state keyed by parameter order."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.shape) for _, p in params]
        self.v = [np.zeros(p.shape) for _, p in params]

    def step(self, grads: list[np.ndarray]):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for i, ((_, p), g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


def train(
    model: DitModel,
    dataset: DatasetSpec,
    steps: int,
    rng: Rng,
    lr: float = 3e-4,
    batch: int = 64,
    cond_dropout: float = COND_DROPOUT,
) -> list[float]:
    """Train in place; returns the per-step loss curve.

    Deterministic under a fixed rng; steps=0 leaves the model untouched."""
    if dataset.class_count > model.arch.class_count:
        raise ContractError("dataset has more classes than the model supports")
    params = model.params()
    tensors = [p for _, p in params]
    optimizer = Adam(params, lr=lr)
    data_rng = rng.derive("train-data")
    loss_rng = rng.derive("train-loss")
    curve: list[float] = []
    model.set_trainable(True)
    try:
        for step in range(steps):
            class_ids, images = sample_batch(dataset, data_rng, batch)
            try:
                loss = flow_matching_loss(model, images, class_ids, loss_rng, cond_dropout)
                grads = T.gradients(loss, tensors)
            except NumericError as exc:
                raise TrainingDivergedError(step, f"training diverged at step {step}: {exc}")
            optimizer.step(grads)
            curve.append(loss.item())
    finally:
        model.set_trainable(False)
    return curve
