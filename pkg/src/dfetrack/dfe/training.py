"""Deterministic training loop for the crop autoencoder.

Given the seed, shuffle order, initialization, and therefore the whole
loss curve are reproducible; resuming from a checkpoint continues the
identical trajectory because model state, optimizer state, and the epoch
counter all live in the checkpoint file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, NumericError
from .model import CaeConfig, CaeModel, load_model, save_model
from .optim import AdamaxState, adamax_step


@dataclass
class TrainResult:
    model: CaeModel
    loss_curve: list[tuple[int, float]]  # (epoch, training mse)
    state: AdamaxState


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(epoch,))))
    return rng.permutation(n)


def train(
    config: CaeConfig,
    dataset,
    epochs: int,
    batch_size: int,
    lr: float = 0.002,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    resume_from=None,
    log=None,
) -> TrainResult:
    """Fit the autoencoder on a crop dataset.

    ``dataset`` is anything indexable to (3, 31, 31) float crops with a
    length; an (N, 3, 31, 31) array works.  The per-epoch training MSE is
    the mean of the minibatch losses seen during that epoch.
    """
    n = len(dataset)
    if n < 1:
        raise InvalidInputError("empty training dataset")
    if batch_size < 2:
        raise InvalidInputError("batch size must be at least 2 for batch norm")
    if epochs < 1:
        raise InvalidInputError("need at least one epoch")

    start_epoch = 0
    loss_curve: list[tuple[int, float]] = []
    if resume_from is not None:
        model, meta = load_model(resume_from)
        extra = meta.pop("_extra_arrays")
        state = AdamaxState.for_params(model.parameters(), lr=lr)
        for i in range(len(state.m)):
            state.m[i][...] = extra[f"optim.m.{i}"]
            state.u[i][...] = extra[f"optim.u.{i}"]
        state.step = int(meta["optim_step"])
        start_epoch = int(meta["epochs_done"])
        loss_curve = [tuple(e) for e in meta.get("loss_curve", [])]
    else:
        model = CaeModel(config)
        state = AdamaxState.for_params(model.parameters(), lr=lr)

    params = model.parameters()
    for epoch in range(start_epoch, epochs):
        order = _epoch_order(model.config.seed, epoch, n)
        batch_losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            if len(idx) < 2:
                continue  # a trailing singleton cannot be batch-normalized
            batch = np.stack([np.asarray(dataset[int(i)]) for i in idx])
            loss, grads = model.backward(batch)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            adamax_step(params, grads, state)
            batch_losses.append(loss)
        epoch_mse = float(np.mean(batch_losses))
        loss_curve.append((epoch, epoch_mse))
        if log is not None:
            log(epoch, epoch_mse)
        done = epoch + 1
        if checkpoint_path is not None and checkpoint_every > 0 and (
            done % checkpoint_every == 0 or done == epochs
        ):
            save_checkpoint(model, state, done, loss_curve, checkpoint_path)
    return TrainResult(model=model, loss_curve=loss_curve, state=state)


def save_checkpoint(model: CaeModel, state: AdamaxState, epochs_done: int, loss_curve, path) -> None:
    extra = [(f"optim.m.{i}", m) for i, m in enumerate(state.m)]
    extra += [(f"optim.u.{i}", u) for i, u in enumerate(state.u)]
    save_model(
        model,
        path,
        metadata={
            "epochs_done": epochs_done,
            "optim_step": state.step,
            "loss_curve": [[e, v] for e, v in loss_curve],
        },
        extra_arrays=extra,
    )


def loss_curve_to_csv(loss_curve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mse\n")
        for epoch, mse in loss_curve:
            fh.write(f"{epoch},{repr(float(mse))}\n")
