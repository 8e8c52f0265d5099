"""Objective scoring of converted utterances and the evaluation report.

Per-utterance scores are means over that utterance's frames; every
aggregate is the unweighted mean of the per-utterance scores.

Deception is this package's own proxy for speaker similarity: the frozen
ASV's posterior for the target speaker on converted frames (``target_posterior``)
and the fraction of frames where the target wins the argmax (``target_top1``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .losses import mse_loss
from .nncore import Network

REPORT_SCHEMA_VERSION = 1
MCD_CONST = 10.0 / math.log(10.0)

METRICS = ("target_posterior", "target_top1", "retention_mse", "mcd_vs_target", "mcd_vs_source")

METRIC_DEFINITIONS = {
    "target_posterior": "mean over frames of the ASV posterior for the target speaker on converted features",
    "target_top1": "fraction of frames whose ASV argmax is the target speaker",
    "retention_mse": "squared error between ASR posteriorgrams of source and converted features, summed per frame, averaged over frames",
    "mcd_vs_target": "mel-cepstral distortion (dB, statics only) between converted and frame-aligned target features",
    "mcd_vs_source": "mel-cepstral distortion (dB, statics only) between converted and source features",
}


def _features(u) -> np.ndarray:
    return np.asarray(getattr(u, "features", u), dtype=np.float64)


def _convert(vc: Optional[Network], x: np.ndarray) -> np.ndarray:
    return x if vc is None else vc(x)


def _check_dims(vc: Optional[Network], model: Network, x: np.ndarray) -> None:
    d = x.shape[1]
    if vc is not None and (vc.input_dim != d or vc.output_dim != d):
        raise ShapeError(f"VC maps {vc.input_dim}->{vc.output_dim}, features have {d} dims")
    if model.input_dim != d:
        raise ShapeError(f"model expects {model.input_dim} dims, features have {d}")


def _target_index(target, n: int) -> int:
    t = np.asarray(target)
    if t.ndim == 0:
        idx = int(t)
    else:
        if t.size != n:
            raise ShapeError(f"target code length {t.size} vs ASV output {n}")
        idx = int(np.argmax(t))
    if not 0 <= idx < n:
        raise ValidationError(f"target {idx} out of range")
    return idx


def deception_scores(vc: Optional[Network], asv: Network, utterances, target) -> list[tuple[float, float]]:
    """Per-utterance (target posterior mean, target top-1 rate); ``vc=None`` is the identity."""
    t = _target_index(target, asv.output_dim)
    out = []
    for u in utterances:
        x = _features(u)
        _check_dims(vc, asv, x)
        post = asv(_convert(vc, x))
        out.append((float(post[:, t].mean()), float(np.mean(post.argmax(axis=1) == t))))
    return out


def deception_metrics(vc: Optional[Network], asv: Network, utterances, target) -> tuple[float, float]:
    scores = deception_scores(vc, asv, utterances, target)
    if not scores:
        raise ValidationError("no utterances to score")
    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def retention_scores(vc: Optional[Network], asr: Network, utterances) -> list[float]:
    out = []
    for u in utterances:
        x = _features(u)
        _check_dims(vc, asr, x)
        out.append(mse_loss(asr(_convert(vc, x)), asr(x)).value)
    return out


def retention_mse(vc: Optional[Network], asr: Network, utterances) -> float:
    scores = retention_scores(vc, asr, utterances)
    if not scores:
        raise ValidationError("no utterances to score")
    return float(np.mean(scores))


def mcd(a: np.ndarray, b: np.ndarray) -> float:
    """Mean frame mel-cepstral distortion in dB over the static half of the features."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"mcd: shapes {a.shape} and {b.shape} differ")
    d = a.shape[1] // 2 or a.shape[1]
    diff = a[:, :d] - b[:, :d]
    return float(np.mean(MCD_CONST * np.sqrt(2.0 * np.sum(diff * diff, axis=1))))


def classifier_accuracy(net: Network, utterances, labels_of) -> float:
    """Mean per-utterance frame accuracy of a frozen classifier."""
    accs = [float(np.mean(net(_features(u)).argmax(axis=1) == labels_of(u))) for u in utterances]
    return float(np.mean(accs))


@dataclass
class EvalCondition:
    method: str
    source: int
    target: int
    omega: Optional[float] = None
    n_utts: Optional[int] = None
    config_hash: str = ""
    per_utterance: list = field(default_factory=list)

    @property
    def key(self) -> str:
        parts = [self.method, f"{self.source}->{self.target}"]
        if self.n_utts is not None:
            parts.append(f"utts={self.n_utts}")
        if self.omega is not None:
            parts.append(f"omega={self.omega:g}")
        return "|".join(parts)

    def aggregate(self) -> dict:
        out = {}
        for m in METRICS:
            vals = [row[m] for row in self.per_utterance if row.get(m) is not None]
            out[m] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "method": self.method,
            "source": self.source,
            "target": self.target,
            "omega": self.omega,
            "n_utts": self.n_utts,
            "config_hash": self.config_hash,
            "aggregate": self.aggregate(),
            "per_utterance": self.per_utterance,
        }


def evaluate_condition(
    vc: Optional[Network],
    asv: Network,
    asr: Network,
    sources: Sequence,
    target: int,
    references: Optional[Sequence] = None,
    *,
    method: str,
    source: int,
    omega: Optional[float] = None,
    n_utts: Optional[int] = None,
    config_hash: str = "",
) -> EvalCondition:
    """Score one converter on held-out source utterances.

    ``references`` are the frame-aligned target utterances; without them the
    ``mcd_vs_target`` column is left empty.
    """
    if references is not None and len(references) != len(sources):
        raise ShapeError("references must align one-to-one with sources")
    dec = deception_scores(vc, asv, sources, target)
    ret = retention_scores(vc, asr, sources)
    rows = []
    for i, u in enumerate(sources):
        x = _features(u)
        y_hat = _convert(vc, x)
        rows.append(
            {
                "utterance": int(getattr(u, "index", i)),
                "target_posterior": dec[i][0],
                "target_top1": dec[i][1],
                "retention_mse": ret[i],
                "mcd_vs_target": None if references is None else mcd(y_hat, _features(references[i])),
                "mcd_vs_source": mcd(y_hat, x),
            }
        )
    return EvalCondition(method, source, target, omega, n_utts, config_hash, rows)


@dataclass
class EvalReport:
    conditions: list
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "metric_definitions": METRIC_DEFINITIONS,
            "conditions": [c.to_dict() for c in sorted(self.conditions, key=lambda c: c.key)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        """Tab-separated conditions x aggregate metrics."""
        head = ["condition", "method", "source", "target", "n_utts", "omega", *METRICS]
        lines = ["\t".join(head)]
        for c in sorted(self.conditions, key=lambda c: c.key):
            agg = c.aggregate()
            cells = [c.key, c.method, str(c.source), str(c.target), _cell(c.n_utts), _cell(c.omega)]
            cells += [_cell(agg[m]) for m in METRICS]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report_hash(conditions: Sequence[EvalCondition]) -> str:
    h = hashlib.sha256()
    for c in sorted(conditions, key=lambda c: c.key):
        h.update(f"{c.key}:{c.config_hash}\n".encode())
    return h.hexdigest()[:16]


def emit_report(conditions: Sequence[EvalCondition], path, config_hash: Optional[str] = None, figures: bool = True) -> EvalReport:
    """Write ``path`` (JSON), a sibling ``.tsv`` table and, optionally, PNG figures."""
    if not conditions:
        raise ValidationError("a report needs at least one evaluated condition")
    keys = [c.key for c in conditions]
    if len(set(keys)) != len(keys):
        raise ValidationError(f"duplicate condition keys in report: {sorted(keys)}")
    report = EvalReport(list(conditions), config_hash or report_hash(conditions))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json())
        path.with_suffix(".tsv").write_text(report.table())
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    if figures:
        from .plotting import plot_report

        plot_report(report, path.with_suffix(""))
    return report


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
