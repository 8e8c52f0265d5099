"""Training objectives: frame MSE, softmax cross-entropy, and the V2S composite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError, ValidationError
from .nncore import Network, network_backward, network_forward

PROB_FLOOR = 1e-12
DEFAULT_OMEGA = 0.01


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray
    # "logits" when the gradient is w.r.t. the pre-softmax activations
    wrt: str = "output"


def mse_loss(y_hat: np.ndarray, y: np.ndarray) -> LossValue:
    """Squared error summed over frames and dimensions, divided by frame count."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y_hat.ndim != 2:
        raise ShapeError(f"mse_loss: shapes {y_hat.shape} and {y.shape} differ")
    T = y_hat.shape[0]
    diff = y_hat - y
    return LossValue(float(np.sum(diff * diff) / T), (2.0 / T) * diff)


def _code_index(code: np.ndarray, n_classes: int) -> int:
    code = np.asarray(code)
    if code.ndim != 1 or code.size != n_classes:
        raise ShapeError(f"code of length {code.size} vs {n_classes} classes")
    if not (np.all((code == 0) | (code == 1)) and code.sum() == 1):
        raise ValidationError("code must be one-hot")
    return int(np.argmax(code))


def sce_loss(code: np.ndarray, posterior: np.ndarray, log_posterior: np.ndarray | None = None) -> LossValue:
    """Mean per-frame cross-entropy of ``posterior`` against a one-hot code.

    The gradient is with respect to the logits of the softmax layer that
    produced ``posterior``: row t is ``(v_t - l) / T``. When the producing
    network's log-probabilities are available pass them as
    ``log_posterior`` for a stable value; otherwise the posterior is clamped
    at ``PROB_FLOOR`` before the log.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    if posterior.ndim != 2:
        raise ShapeError(f"posterior must be (T, S), got {posterior.shape}")
    T, S = posterior.shape
    s = _code_index(code, S)
    if not np.allclose(posterior.sum(axis=1), 1.0, rtol=0.0, atol=1e-6) or np.any(posterior < 0):
        raise ValidationError("posterior rows are not probability vectors")
    if log_posterior is not None:
        logp = np.maximum(log_posterior[:, s], np.log(PROB_FLOOR))
    else:
        logp = np.log(np.maximum(posterior[:, s], PROB_FLOOR))
    value = -float(np.sum(logp)) / T
    grad = posterior.copy()
    grad[:, s] -= 1.0
    return LossValue(value, grad / T, wrt="logits")


def label_sce_loss(labels: np.ndarray, posterior: np.ndarray, log_posterior: np.ndarray | None = None) -> LossValue:
    """Frame-wise cross-entropy where each frame has its own class label."""
    posterior = np.asarray(posterior, dtype=np.float64)
    T = posterior.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (T,):
        raise ShapeError(f"{labels.shape[0]} labels for {T} frames")
    rows = np.arange(T)
    if log_posterior is not None:
        logp = np.maximum(log_posterior[rows, labels], np.log(PROB_FLOOR))
    else:
        logp = np.log(np.maximum(posterior[rows, labels], PROB_FLOOR))
    grad = posterior.copy()
    grad[rows, labels] -= 1.0
    return LossValue(-float(np.sum(logp)) / T, grad / T, wrt="logits")


@dataclass
class V2SLoss(LossValue):
    deception: float = 0.0
    retention: float = 0.0
    posterior: np.ndarray | None = None  # ASV output on y_hat


def v2s_loss(
    x: np.ndarray,
    y_hat: np.ndarray,
    code: np.ndarray,
    asv: Network,
    asr: Network,
    omega: float = DEFAULT_OMEGA,
    asr_x: np.ndarray | None = None,
) -> V2SLoss:
    """Deception through the frozen ASV plus weighted posteriorgram retention.

    The gradient is with respect to ``y_hat`` only; the ASR posteriorgram of
    the clean input is a constant (pass it as ``asr_x`` to skip recomputing).
    """
    if asv.trainable or asr.trainable:
        raise ContractError("v2s_loss needs frozen ASV and ASR models")
    if omega < 0:
        raise ValidationError("omega must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if x.shape != y_hat.shape:
        raise ShapeError(f"source {x.shape} and converted {y_hat.shape} differ")

    v, v_cache = network_forward(asv, y_hat)
    dec = sce_loss(code, v, v_cache.log_output())
    grad = network_backward(asv, v_cache, dec.gradient, wrt="logits").input_gradient

    if asr_x is None:
        asr_x = network_forward(asr, x)[0]
    r_hat, r_cache = network_forward(asr, y_hat)
    ret = mse_loss(r_hat, asr_x)
    if omega:
        grad = grad + omega * network_backward(asr, r_cache, ret.gradient).input_gradient
    return V2SLoss(dec.value + omega * ret.value, grad, "output", dec.value, ret.value, v)
