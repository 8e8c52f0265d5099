"""Synthetic multi-speaker feature corpus and its `.v2sc` container.

Each frame's static vector is a phoneme centroid plus a speaker offset plus
white noise; deltas are appended with a centered difference. Utterance ``i``
of every speaker shares one phoneme-label sequence, so any two speakers form
a frame-aligned parallel pair.

Container layout (little-endian)::

    magic  b"V2SC"
    u32    version (=1)
    u32    S, P, D, N_utterances, train_per_speaker
    u32    spec_json_len, then that many UTF-8 bytes (the CorpusSpec)
    N times:
        u32  speaker, index, T
        f64  features, row-major T*D
        u32  phoneme labels * T
        f64  f0 (Hz, 0 = unvoiced) * T
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import InsufficientDataError, MagicError, TruncationError, ValidationError, VersionError

FRAME_SHIFT_MS = 5.0
F0_STD_FLOOR = 1e-6
CORPUS_MAGIC = b"V2SC"
CORPUS_VERSION = 1

_STREAM_LABELS, _STREAM_NOISE, _STREAM_F0 = 1, 2, 3


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 8
    n_phonemes: int = 10
    static_dim: int = 8
    utterances_per_speaker: int = 30
    heldout_per_speaker: int = 8
    min_frames: int = 40
    max_frames: int = 80
    noise_std: float = 0.3
    speaker_offset_scale: float = 2.0
    # even speaker ids are "male", odd "female"; a shared offset separates the groups
    gender_offset_scale: float = 1.0
    voiced_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        counts = ("n_speakers", "n_phonemes", "static_dim", "utterances_per_speaker", "min_frames")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.heldout_per_speaker < 0:
            raise ValidationError("heldout_per_speaker must be >= 0")
        if self.max_frames < self.min_frames:
            raise ValidationError("max_frames < min_frames")
        if self.noise_std < 0 or self.speaker_offset_scale < 0 or self.gender_offset_scale < 0:
            raise ValidationError("noise/offset scales must be non-negative")
        if not 0.0 <= self.voiced_fraction <= 1.0:
            raise ValidationError("voiced_fraction must lie in [0, 1]")

    @classmethod
    def full_dims(cls, **overrides) -> "CorpusSpec":
        """Full-size dimensions: 260 speakers, 56 phonemes, 39 statics, 200 utterances."""
        base = dict(n_speakers=260, n_phonemes=56, static_dim=39, utterances_per_speaker=200, heldout_per_speaker=25)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown corpus spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @property
    def feature_dim(self) -> int:
        return 2 * self.static_dim


@dataclass
class Utterance:
    features: np.ndarray  # (T, D) statics then deltas
    speaker: int
    phoneme_labels: np.ndarray  # (T,)
    f0: np.ndarray  # (T,) Hz, 0 for unvoiced
    index: int = 0

    def __post_init__(self):
        T = self.features.shape[0]
        if self.phoneme_labels.shape != (T,) or self.f0.shape != (T,):
            raise ValidationError("labels/f0 length must equal frame count")
        if np.any(self.f0 < 0):
            raise ValidationError("f0 must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    spec: CorpusSpec
    utterances: list

    @property
    def n_speakers(self) -> int:
        return self.spec.n_speakers

    @property
    def n_phonemes(self) -> int:
        return self.spec.n_phonemes

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    @property
    def digest(self) -> str:
        return self.spec.digest()

    def select(self, speaker: Optional[int] = None, split: str = "train") -> list:
        if split not in ("train", "heldout", "all"):
            raise ValueError(f"unknown split {split!r}")
        n_train = self.spec.utterances_per_speaker
        out = []
        for u in self.utterances:
            if speaker is not None and u.speaker != speaker:
                continue
            if split == "train" and u.index >= n_train:
                continue
            if split == "heldout" and u.index < n_train:
                continue
            out.append(u)
        return out

    def parallel_pairs(self, source: int, target: int, split: str = "train", n: Optional[int] = None) -> list:
        """Frame-aligned (source, target) feature pairs sharing utterance indices."""
        src = {u.index: u for u in self.select(source, split)}
        tgt = {u.index: u for u in self.select(target, split)}
        idx = sorted(set(src) & set(tgt))
        if n is not None:
            if n > len(idx):
                raise InsufficientDataError(f"asked for {n} parallel pairs, only {len(idx)} available")
            idx = idx[:n]
        return [(src[i].features, tgt[i].features) for i in idx]


def append_deltas(statics: np.ndarray) -> np.ndarray:
    """Append centered-difference deltas with edge replication: (T, d) -> (T, 2d)."""
    statics = np.asarray(statics, dtype=np.float64)
    if statics.ndim != 2 or statics.shape[0] < 1:
        raise ValidationError("append_deltas needs a non-empty (T, d) matrix")
    padded = np.concatenate([statics[:1], statics, statics[-1:]], axis=0)
    deltas = (padded[2:] - padded[:-2]) / 2.0
    return np.concatenate([statics, deltas], axis=1)


def one_hot(speaker: int, n: int) -> np.ndarray:
    if not 0 <= speaker < n:
        raise ValidationError(f"speaker {speaker} out of range [0, {n})")
    code = np.zeros(n)
    code[speaker] = 1.0
    return code


@dataclass(frozen=True)
class F0Stats:
    mean: float  # of ln(Hz)
    std: float


def f0_stats(f0: np.ndarray) -> F0Stats:
    """Log-domain mean and unbiased std over voiced frames."""
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = f0[f0 > 0]
    if voiced.size < 2:
        raise InsufficientDataError(f"need at least 2 voiced frames, got {voiced.size}")
    lf = np.log(voiced)
    return F0Stats(float(lf.mean()), max(float(lf.std(ddof=1)), F0_STD_FLOOR))


def convert_f0(f0: np.ndarray, src: F0Stats, tgt: F0Stats) -> np.ndarray:
    """Linear mean/variance conversion of log-F0; unvoiced frames stay 0."""
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros_like(f0)
    voiced = f0 > 0
    out[voiced] = np.exp((tgt.std / src.std) * (np.log(f0[voiced]) - src.mean) + tgt.mean)
    return out


def feature_stats(seqs: Iterable[np.ndarray], floor: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std pooled over all frames."""
    stacked = np.concatenate(list(seqs), axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), floor)


def _label_runs(rng: np.random.Generator, T: int, P: int) -> np.ndarray:
    labels = np.empty(T, dtype=np.int64)
    t, prev = 0, -1
    while t < T:
        run = int(rng.integers(3, 11))
        ph = int(rng.integers(P))
        if P > 1:
            while ph == prev:
                ph = int(rng.integers(P))
        labels[t : t + run] = ph
        t += run
        prev = ph
    return labels


def synth_corpus(spec: CorpusSpec) -> Corpus:
    S, P, d = spec.n_speakers, spec.n_phonemes, spec.static_dim
    base = np.random.default_rng([spec.seed, 0])
    centroids = base.standard_normal((P, d))
    gender_dir = base.standard_normal(d)
    gender_dir /= max(np.linalg.norm(gender_dir), 1e-12)
    offsets = spec.speaker_offset_scale * base.standard_normal((S, d))
    signs = np.where(np.arange(S) % 2 == 0, -1.0, 1.0)
    offsets += spec.gender_offset_scale * np.sqrt(d) * signs[:, None] * gender_dir
    voiced_ph = base.random(P) < spec.voiced_fraction
    # log-F0 per speaker: ~120 Hz for even ids, ~220 Hz for odd ids
    f0_mu = np.where(signs < 0, np.log(120.0), np.log(220.0)) + 0.1 * base.standard_normal(S)
    f0_sigma = base.uniform(0.08, 0.2, S)

    n_total = spec.utterances_per_speaker + spec.heldout_per_speaker
    utts = []
    for i in range(n_total):
        lr = np.random.default_rng([spec.seed, _STREAM_LABELS, i])
        T = int(lr.integers(spec.min_frames, spec.max_frames + 1))
        labels = _label_runs(lr, T, P)
        clean = centroids[labels]
        for s in range(S):
            nr = np.random.default_rng([spec.seed, _STREAM_NOISE, s, i])
            statics = clean + offsets[s] + spec.noise_std * nr.standard_normal((T, d))
            fr = np.random.default_rng([spec.seed, _STREAM_F0, s, i])
            f0 = np.exp(f0_mu[s] + f0_sigma[s] * fr.standard_normal(T))
            f0[~voiced_ph[labels]] = 0.0
            utts.append(Utterance(append_deltas(statics), s, labels.copy(), f0, i))
    utts.sort(key=lambda u: (u.speaker, u.index))
    return Corpus(spec, utts)


def corpus_to_bytes(corpus: Corpus) -> bytes:
    spec_json = corpus.spec.to_json().encode()
    D = corpus.feature_dim
    parts = [
        CORPUS_MAGIC,
        struct.pack(
            "<6I",
            CORPUS_VERSION,
            corpus.n_speakers,
            corpus.n_phonemes,
            D,
            len(corpus.utterances),
            corpus.spec.utterances_per_speaker,
        ),
        struct.pack("<I", len(spec_json)),
        spec_json,
    ]
    for u in corpus.utterances:
        parts.append(struct.pack("<3I", u.speaker, u.index, u.n_frames))
        parts.append(np.ascontiguousarray(u.features, dtype="<f8").tobytes())
        parts.append(np.asarray(u.phoneme_labels, dtype="<u4").tobytes())
        parts.append(np.asarray(u.f0, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(what, self.pos + n, len(self.buf))
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def corpus_from_bytes(buf: bytes) -> Corpus:
    r = _Reader(buf)
    if r.take(4, "corpus magic") != CORPUS_MAGIC:
        raise MagicError("not a V2SC corpus (bad magic)")
    version, S, P, D, N, n_train = struct.unpack("<6I", r.take(24, "corpus header"))
    if version != CORPUS_VERSION:
        raise VersionError(f"corpus version {version}, this build reads {CORPUS_VERSION}")
    (jlen,) = struct.unpack("<I", r.take(4, "corpus header"))
    spec = CorpusSpec.from_dict(json.loads(r.take(jlen, "corpus spec").decode()))
    if (spec.n_speakers, spec.n_phonemes, spec.feature_dim, spec.utterances_per_speaker) != (S, P, D, n_train):
        raise ValidationError("corpus header disagrees with embedded spec")
    utts = []
    for _ in range(N):
        spk, idx, T = struct.unpack("<3I", r.take(12, "utterance header"))
        feats = np.frombuffer(r.take(8 * T * D, "features"), dtype="<f8").reshape(T, D).astype(np.float64)
        labels = np.frombuffer(r.take(4 * T, "labels"), dtype="<u4").astype(np.int64)
        f0 = np.frombuffer(r.take(8 * T, "f0"), dtype="<f8").astype(np.float64)
        utts.append(Utterance(feats, spk, labels, f0, idx))
    return Corpus(spec, utts)


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_bytes(corpus_to_bytes(corpus))


def load_corpus(path) -> Corpus:
    return corpus_from_bytes(Path(path).read_bytes())
