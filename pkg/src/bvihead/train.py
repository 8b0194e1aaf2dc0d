"""Variational training loop: single-sample ELBO estimate per mini-batch.

The loss is NLL plus a weighted KL term; the weight mode controls how the
full-dataset KL is spread across batches. Everything is deterministic
given the config seed: shuffling and per-batch noise derive their own
sub-seeded generators from (seed, epoch, batch).
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledFeatureSet, batches
from .errors import ConfigError, ContractError, NumericError
from .fsio import atomic_write_text
from .layers import TRAIN
from .model import Head, draw_noise_bundle, forward
from .tensor import Tensor, nll

SGD = "sgd"
ADAM = "adam"

KL_ONE_OVER_N = "one-over-n"
KL_ONE_OVER_BATCHES = "one-over-batches"
KL_CONSTANT = "constant"
KL_MODES = (KL_ONE_OVER_N, KL_ONE_OVER_BATCHES, KL_CONSTANT)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = ADAM
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    kl_weight_mode: str = KL_ONE_OVER_N
    kl_weight_const: float = 1.0
    seed: int = 7
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in (SGD, ADAM):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.kl_weight_mode not in KL_MODES:
            raise ConfigError(f"unknown kl_weight_mode {self.kl_weight_mode!r}")
        if self.kl_weight_const < 0:
            raise ConfigError(f"kl_weight_const must be >= 0, got {self.kl_weight_const}")


@dataclass
class EpochStats:
    epoch: int
    nll: float
    kl: float
    loss: float
    accuracy: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,nll,kl,loss,accuracy,seconds\n")
        for e in self.epochs:
            buf.write(
                f"{e.epoch},{e.nll!r},{e.kl!r},{e.loss!r},{e.accuracy!r},{e.seconds!r}\n"
            )
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def elbo_loss(log_probs: Tensor, labels, kl_total: Tensor, kl_weight: float) -> Tensor:
    """Negated single-sample ELBO: mean NLL plus kl_weight * KL."""
    if kl_weight < 0:
        raise ConfigError(f"kl_weight must be >= 0, got {kl_weight}")
    data_term = nll(log_probs, labels)
    if kl_weight == 0.0:
        return data_term
    return data_term + kl_total * kl_weight


def kl_weight_for(cfg: TrainConfig, n_examples: int, n_batches: int) -> float:
    if cfg.kl_weight_mode == KL_ONE_OVER_N:
        return 1.0 / n_examples
    if cfg.kl_weight_mode == KL_ONE_OVER_BATCHES:
        return 1.0 / n_batches
    return cfg.kl_weight_const


# ---- optimizers ------------------------------------------------------------


class Sgd:
    def __init__(self, learning_rate: float, momentum: float = 0.0):
        self.lr = learning_rate
        self.momentum = momentum
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: list[Tensor], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p.data) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            _check_shapes(p, g)
            v *= self.momentum
            v -= self.lr * g
            p.data = p.data + v


class Adam:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[Tensor], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
        if self.m is None:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            _check_shapes(p, g)
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _check_shapes(p: Tensor, g: np.ndarray) -> None:
    if p.data.shape != g.shape:
        raise ContractError(
            f"gradient shape {g.shape} does not match parameter {p.data.shape}"
        )


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == SGD:
        return Sgd(cfg.learning_rate, cfg.momentum)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


# ---- training loop -----------------------------------------------------------


def train(head: Head, data: LabeledFeatureSet, cfg: TrainConfig) -> tuple[Head, TrainReport]:
    """Mini-batch training of any head variant; returns the mutated head.

    One fresh noise draw per batch; a NaN/Inf loss aborts with the epoch
    and batch index.
    """
    if data.n == 0:
        raise ConfigError("training data is empty")
    if data.is_ood.any():
        raise ConfigError("training data must not contain OOD rows")
    k = head.config.num_classes
    if data.labels.min() < 0 or data.labels.max() >= k:
        raise ConfigError(
            f"labels range [{data.labels.min()}, {data.labels.max()}] outside [0, {k})"
        )

    optimizer = make_optimizer(cfg)
    params = head.parameters()
    report = TrainReport()

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        epoch_batches = batches(
            data,
            cfg.batch_size,
            seed=int(np.random.default_rng((cfg.seed, epoch)).integers(2**31)),
            shuffle=cfg.shuffle,
        )
        kl_weight = kl_weight_for(cfg, data.n, len(epoch_batches))
        sum_nll = 0.0
        sum_kl = 0.0
        sum_loss = 0.0
        correct = 0
        for b_idx, batch in enumerate(epoch_batches):
            noise_rng = np.random.default_rng((cfg.seed, epoch, b_idx))
            bundle = draw_noise_bundle(head, batch.n, noise_rng)
            x = Tensor(batch.features)
            try:
                log_probs, kl_total = forward(head, x, bundle, TRAIN)
                loss = elbo_loss(log_probs, batch.labels, kl_total, kl_weight)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}: {exc}"
                ) from exc
            loss.backward()
            grads = [p.grad for p in params]
            optimizer.step(params, grads)

            batch_nll = float(nll_value(log_probs.data, batch.labels))
            sum_nll += batch_nll * batch.n
            sum_kl += float(kl_total.data) * batch.n
            sum_loss += float(loss.data) * batch.n
            correct += int((log_probs.data.argmax(axis=1) == batch.labels).sum())
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                nll=sum_nll / data.n,
                kl=sum_kl / data.n,
                loss=sum_loss / data.n,
                accuracy=correct / data.n,
                seconds=time.perf_counter() - start,
            )
        )
    return head, report


def nll_value(log_probs: np.ndarray, labels) -> float:
    rows = np.arange(log_probs.shape[0])
    return float(-log_probs[rows, np.asarray(labels)].mean())
