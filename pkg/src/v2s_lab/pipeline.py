"""The four training procedures: ASV, ASR, parallel VC and the V2S attack.

All trainers work in z-scored feature space and fold the normalisation into
the first (and, for VC, last) layer before returning, so every returned
network consumes and produces raw features.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, feature_stats
from .errors import ContractError, DivergedError, ShapeError, ValidationError
from .losses import DEFAULT_OMEGA, LossValue, label_sce_loss, mse_loss, v2s_loss
from .models import ArchSpec, build_model, identity_init
from .nncore import (
    AdaGradState,
    Network,
    adagrad_step,
    fold_input_affine,
    fold_output_affine,
    network_backward,
    network_forward,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    epochs: int = 25
    omega: float = DEFAULT_OMEGA
    batch_size: int = 1
    seed: int = 0
    shuffle: bool = True
    # VC initialisation: "random" (Glorot) or "identity"
    init: str = "identity"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.omega < 0:
            raise ValidationError("omega must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.init not in ("random", "identity"):
            raise ValidationError(f"unknown init {self.init!r}")

    def replace(self, **kw) -> "TrainingConfig":
        return TrainingConfig(**{**asdict(self), **kw})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainingHistory:
    losses: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    metric_name: str = ""
    initial_loss: float = float("nan")

    def records(self) -> list[dict]:
        return [
            {"epoch": i + 1, "loss": loss, "metric": m, "metric_name": self.metric_name}
            for i, (loss, m) in enumerate(zip(self.losses, self.metrics))
        ]


# step(index) -> (loss value, gradient bundle, metric contribution)
StepFn = Callable[[int], tuple]


def _run_epochs(stage: str, net: Network, n_items: int, step: StepFn, config: TrainingConfig, history: TrainingHistory):
    rng = np.random.default_rng(config.seed)
    state = AdaGradState.for_network(net)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_items) if config.shuffle else np.arange(n_items)
        total, metric = 0.0, 0.0
        for start in range(0, n_items, config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = None
            for i in batch:
                value, g, m = step(int(i))
                if not np.isfinite(value):
                    raise DivergedError(stage, epoch, value)
                total += value
                metric += m
                grads = g if grads is None else grads + g
            adagrad_step(net, grads.scaled(1.0 / len(batch)), state, config.learning_rate)
        history.losses.append(total / n_items)
        history.metrics.append(metric / n_items)
        log.debug("%s epoch %d loss %.6f %s %.4f", stage, epoch, history.losses[-1], history.metric_name, history.metrics[-1])
    return history


def _check_frozen(*nets: Network) -> None:
    if any(n.trainable for n in nets):
        raise ContractError("ASV/ASR models must be frozen before they are used as attack oracles")


def train_classifier(
    stage: str,
    inputs: Sequence[np.ndarray],
    labels: Sequence[np.ndarray],
    arch: ArchSpec,
    config: TrainingConfig,
) -> tuple[Network, TrainingHistory]:
    """Frame-level softmax classifier; shared by ASV and ASR training."""
    if arch.input_dim != inputs[0].shape[1]:
        raise ShapeError(f"{stage}: arch input {arch.input_dim} vs features {inputs[0].shape[1]}")
    mu, sd = feature_stats(inputs)
    xs = [(x - mu) / sd for x in inputs]
    ys = [np.asarray(y, dtype=np.int64) for y in labels]
    if max(int(y.max()) for y in ys) >= arch.output_dim:
        raise ShapeError(f"{stage}: labels exceed output dimension {arch.output_dim}")
    net = build_model(arch, config.seed)

    def loss_of(i: int) -> tuple[LossValue, np.ndarray, object]:
        out, cache = network_forward(net, xs[i])
        return label_sce_loss(ys[i], out, cache.log_output()), out, cache

    history = TrainingHistory(metric_name="frame_accuracy")
    history.initial_loss = float(np.mean([loss_of(i)[0].value for i in range(len(xs))]))

    def step(i: int):
        loss, out, cache = loss_of(i)
        grads = network_backward(net, cache, loss.gradient, wrt="logits")
        return loss.value, grads, float(np.mean(out.argmax(axis=1) == ys[i]))

    _run_epochs(stage, net, len(xs), step, config, history)
    return fold_input_affine(net, mu, sd).freeze(), history


def train_asv(corpus: Corpus, arch: ArchSpec, config: TrainingConfig) -> tuple[Network, TrainingHistory]:
    if arch.output_dim != corpus.n_speakers:
        raise ShapeError(f"ASV output {arch.output_dim} != {corpus.n_speakers} speakers")
    utts = corpus.select(split="train")
    return train_classifier(
        "train_asv", [u.features for u in utts], [np.full(u.n_frames, u.speaker) for u in utts], arch, config
    )


def train_asr(corpus: Corpus, arch: ArchSpec, config: TrainingConfig) -> tuple[Network, TrainingHistory]:
    if arch.output_dim != corpus.n_phonemes:
        raise ShapeError(f"ASR output {arch.output_dim} != {corpus.n_phonemes} phonemes")
    utts = corpus.select(split="train")
    return train_classifier("train_asr", [u.features for u in utts], [u.phoneme_labels for u in utts], arch, config)


def _vc_model(arch: ArchSpec, config: TrainingConfig) -> Network:
    net = build_model(arch, config.seed)
    if config.init == "identity":
        identity_init(net)
    return net


def train_parallel_vc(
    parallel_pairs: Sequence[tuple[np.ndarray, np.ndarray]], arch: ArchSpec, config: TrainingConfig
) -> tuple[Network, TrainingHistory]:
    """Frame-aligned regression from source to target features (MSE objective)."""
    if not parallel_pairs:
        raise ValidationError("no parallel pairs given")
    for k, (x, y) in enumerate(parallel_pairs):
        if x.shape != y.shape:
            raise ShapeError(f"pair {k} is not frame-aligned: {x.shape} vs {y.shape}")
    mu, sd = feature_stats(x for x, _ in parallel_pairs)
    xs = [(x - mu) / sd for x, _ in parallel_pairs]
    ys = [(y - mu) / sd for _, y in parallel_pairs]
    net = _vc_model(arch, config)

    history = TrainingHistory(metric_name="raw_mse")
    history.initial_loss = float(np.mean([mse_loss(net(x), y).value for x, y in zip(xs, ys)]))

    def step(i: int):
        out, cache = network_forward(net, xs[i])
        loss = mse_loss(out, ys[i])
        grads = network_backward(net, cache, loss.gradient)
        # metric: the same per-frame squared error, in raw feature units
        raw = float(np.sum(((out - ys[i]) * sd) ** 2) / out.shape[0])
        return loss.value, grads, raw

    _run_epochs("train_parallel_vc", net, len(xs), step, config, history)
    return fold_output_affine(fold_input_affine(net, mu, sd), mu, sd), history


def train_v2s(
    source_utterances: Sequence[np.ndarray],
    target: np.ndarray,
    asv: Network,
    asr: Network,
    arch: ArchSpec,
    config: TrainingConfig,
) -> tuple[Network, TrainingHistory]:
    """Train a converter from source features alone, steered by frozen ASV and ASR.

    ``target`` is the one-hot code of the speaker to impersonate; no target
    features are accepted anywhere in this signature.
    """
    _check_frozen(asv, asr)
    if not source_utterances:
        raise ValidationError("no source utterances given")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.size != asv.output_dim:
        raise ShapeError(f"target code length {target.size} vs ASV output {asv.output_dim}")
    D = source_utterances[0].shape[1]
    if not (arch.input_dim == arch.output_dim == D == asv.input_dim == asr.input_dim):
        raise ShapeError("VC/ASV/ASR dimensions are inconsistent")
    t_idx = int(np.argmax(target))
    mu, sd = feature_stats(source_utterances)
    raw = [np.asarray(x, dtype=np.float64) for x in source_utterances]
    xs = [(x - mu) / sd for x in raw]
    asr_x = [asr(x) for x in raw]
    net = _vc_model(arch, config)

    def loss_of(i: int):
        out, cache = network_forward(net, xs[i])
        y_hat = out * sd + mu
        return v2s_loss(raw[i], y_hat, target, asv, asr, config.omega, asr_x[i]), y_hat, cache

    history = TrainingHistory(metric_name="target_posterior")
    history.initial_loss = float(np.mean([loss_of(i)[0].value for i in range(len(xs))]))

    def step(i: int):
        loss, y_hat, cache = loss_of(i)
        grads = network_backward(net, cache, loss.gradient * sd)
        return loss.value, grads, float(np.mean(loss.posterior[:, t_idx]))

    _run_epochs("train_v2s", net, len(xs), step, config, history)
    return fold_output_affine(fold_input_affine(net, mu, sd), mu, sd), history
