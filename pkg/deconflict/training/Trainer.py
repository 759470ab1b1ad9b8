"""Trainer module: Instrumented policy training.

Classes
-------
TrainConfig
    Optimizer, batch and schedule settings.
SimRecord
    One gradient-similarity measurement.
GradTrace
    Sequence of SimRecords plus the training loss curve.

Functions
---------
loss_and_grad(model, batch)
    Mean squared action error and its flat parameter gradient.
benign_loss(model, batch), backdoor_loss(model, poisoned_batch)
    The two training objectives.
measure_sim(model, benign_batch, poison_batch)
    Cosine of the two objectives' gradients on the adapter parameters.
train_joint(model, mixed_dataset, cfg, probes)
    Mini-batch training on a (possibly poisoned) dataset with a Sim trace.
clean_finetune(model, clean_set, cfg)
    Standard training on clean data only.
"""

# Standard imports
from collections import namedtuple
from dataclasses import dataclass
import logging

# Third-party imports
import numpy as np
import pandas as pd
from tqdm import tqdm

# Local imports
from deconflict.core.Program import DifferentiableProgram
from deconflict.core.tensor import check_finite, cosine, norm
from deconflict.core.Variable import constant
from deconflict.env.Datasets import Batch, make_batch
from deconflict.exceptions import (ConfigError, ContractError, DataError, DegenerateGradientError,
                                   DivergenceError)
from deconflict.models.PolicyModel import forward_batch, policy_forward
from deconflict.training.Optimizer import OPTIMIZERS, clip_by_norm, make_optimizer

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "sim", "g_benign_norm", "g_backdoor_norm", "loss_benign",
                 "loss_backdoor", "degenerate_flag"]

SimRecord = namedtuple("SimRecord", ["sim", "g_benign_norm", "g_backdoor_norm", "loss_benign",
                                     "loss_backdoor", "degenerate"])

@dataclass
class TrainConfig:
    """Training settings; optimizer is "sgd" or "adaptive-moment"."""

    lr: float = 1e-2
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    optimizer: str = "sgd"
    freeze_vision: bool = True
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    sim_every: int = 10
    probe_size: int = 32
    divergence: float = 1e6
    progress: bool = False

    def validate(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer: {self.optimizer}", key="train.optimizer")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive", key="train.lr")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1", key="train.batch_size")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", key="train.epochs")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative", key="train.weight_decay")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative", key="train.grad_clip")
        if self.sim_every < 1:
            raise ConfigError("sim_every must be at least 1", key="train.sim_every")

class GradTrace:
    """Gradient-similarity trace of one training run.

    Attributes
    ----------
    rows: list
        one dict per measurement with the TRACE_COLUMNS keys
    losses: list
        training loss of every optimisation step
    final_loss: float
        mean training loss over the last epoch (None before training)

    Methods
    -------
    append(step, record)
        add a SimRecord measured at step
    to_frame()
        return the trace as a pandas DataFrame
    mean_sim(tail)
        mean Sim over the last tail fraction of non-degenerate rows
    """

    def __init__(self):
        self.rows = []
        self.losses = []
        self.final_loss = None

    def __len__(self):
        return len(self.rows)

    def append(self, step, record):
        self.rows.append({
            "step": int(step),
            "sim": record.sim,
            "g_benign_norm": record.g_benign_norm,
            "g_backdoor_norm": record.g_backdoor_norm,
            "loss_benign": record.loss_benign,
            "loss_backdoor": record.loss_backdoor,
            "degenerate_flag": bool(record.degenerate),
        })

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def mean_sim(self, tail=0.5):
        """Return the mean Sim of the last tail fraction of rows, or None."""

        if not self.rows:
            return None
        start = int(np.floor(len(self.rows) * (1.0 - tail)))
        values = [r["sim"] for r in self.rows[start:] if not r["degenerate_flag"]]
        return float(np.mean(values)) if values else None

# Functions
def as_batch(batch, vocab=None):
    """Return batch as a Batch, stacking a list of Samples."""

    if isinstance(batch, Batch):
        if batch.images.shape[0] == 0:
            raise DataError("empty batch")
        return batch
    return make_batch(list(batch), vocab)

def subset(batch, idx):
    return Batch(batch.images[idx], batch.bags[idx], batch.labels[idx], batch.poisoned[idx])

def mse_fn(images, bags, labels):
    """Return the program body: mean over the batch of |a - label|^2."""

    def fn(leaves):
        action, _ = policy_forward(leaves, images, bags)
        err = action - constant(labels)
        return (err * err).sum(axis=1).mean()
    return fn

def loss_and_grad(model, batch, vocab=None):
    """Return (loss, flat gradient over every parameter group)."""

    batch = as_batch(batch, vocab)
    program = DifferentiableProgram(mse_fn(batch.images, batch.bags, batch.labels), model.params)
    value, grads = program.value_and_grad(model.GROUPS)
    g = np.concatenate([grads[name].ravel() for name in model.GROUPS])
    check_finite(g, "loss gradient", DivergenceError)
    return value, g

def mse(model, batch, vocab=None):
    """Return the mean squared action error of model on batch."""

    batch = as_batch(batch, vocab)
    actions, _ = forward_batch(model, batch.images, batch.bags)
    err = actions - batch.labels
    return float(np.mean(np.sum(err * err, axis=1)))

def benign_loss(model, batch, vocab=None):
    """Return the mean squared error against the expert labels."""

    return mse(model, batch, vocab)

def backdoor_loss(model, poisoned_batch, vocab=None):
    """Return the mean squared error against the target actions."""

    batch = as_batch(poisoned_batch, vocab)
    if not np.all(batch.poisoned):
        raise ContractError("backdoor_loss needs a batch of poisoned items only")
    return mse(model, batch, vocab)

def measure_sim(model, benign_batch, poison_batch, vocab=None):
    """Return a SimRecord for the adapter-restricted gradient cosine.

    A zero-norm gradient yields a record with degenerate set and sim None.
    The model is only read.
    """

    start, stop = model.adapter_range()
    loss_b, g_b = loss_and_grad(model, benign_batch, vocab)
    loss_p, g_p = loss_and_grad(model, poison_batch, vocab)
    g_b = g_b[start:stop]
    g_p = g_p[start:stop]
    try:
        sim = cosine(g_b, g_p)
        degenerate = False
    except DegenerateGradientError:
        sim = None
        degenerate = True
    return SimRecord(sim, norm(g_b), norm(g_p), loss_b, loss_p, degenerate)

def default_probes(samples, size):
    """Return (benign, poisoned) probe lists drawn from samples, or None."""

    benign = [s for s in samples if not s.poisoned][:size]
    poisoned = [s for s in samples if s.poisoned][:size]
    if not benign or not poisoned:
        return None
    return benign, poisoned

def train_joint(model, mixed_dataset, cfg=None, probes=None, vocab=None):
    """Train on a mixed dataset, tracing gradient similarity.

    Parameters
    ----------
    model: PolicyModel
        starting model (not modified)
    mixed_dataset: list
        Samples, poisoned items included
    cfg: TrainConfig
        training settings
    probes: tuple
        fixed (benign, poisoned) probe samples for measure_sim; no trace is
        recorded when None
    vocab: Vocabulary
        vocabulary the model was built for

    Returns
    -------
    tuple of the trained PolicyModel and its GradTrace
    """

    cfg = cfg or TrainConfig()
    cfg.validate()
    trace = GradTrace()
    if cfg.epochs == 0:
        return model, trace
    samples = list(mixed_dataset)
    n = len(samples)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if cfg.batch_size > n:
        raise ContractError(f"batch size {cfg.batch_size} exceeds dataset size {n}")
    data = make_batch(samples, vocab)
    if probes is not None:
        probes = (make_batch(probes[0], vocab), make_batch(probes[1], vocab))
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.weight_decay)
    where = slice(model.group_slice("embed.E")[0], None) if cfg.freeze_vision else slice(None)
    rng = np.random.default_rng(cfg.seed)
    theta = model.flat()
    step = 0
    epoch_losses = []
    for epoch in tqdm(range(cfg.epochs), desc="train", disable=not cfg.progress):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            current = model.with_flat(theta)
            if probes is not None and step % cfg.sim_every == 0:
                record = measure_sim(current, probes[0], probes[1], vocab)
                if record.degenerate:
                    logger.warning("step %d: degenerate gradient, Sim not defined", step)
                trace.append(step, record)
            try:
                value, g = loss_and_grad(current, subset(data, order[start:start + cfg.batch_size]))
            except DivergenceError:
                value = float("nan")
            if not np.isfinite(value) or value > cfg.divergence:
                logger.error("step %d: training diverged (loss %s)", step, value)
                raise DivergenceError(f"training diverged at step {step}", partial=trace)
            theta = optimizer.step(theta, clip_by_norm(g, cfg.grad_clip), where)
            trace.losses.append(value)
            epoch_losses.append(value)
            step += 1
        logger.info("epoch %d: mean loss %.6f", epoch, float(np.mean(epoch_losses)))
    trace.final_loss = float(np.mean(epoch_losses))
    return model.with_flat(theta), trace

def clean_finetune(model, clean_set, cfg=None, vocab=None):
    """Return model after standard training on the unpoisoned items of clean_set."""

    clean = [s for s in clean_set if not s.poisoned]
    return train_joint(model, clean, cfg, None, vocab)[0]
