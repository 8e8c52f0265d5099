"""Architecture presets for the VC, ASV and ASR networks plus the `.v2sm` checkpoint.

Checkpoint layout (little-endian)::

    magic   b"V2SM"
    u32     version (=1)
    u32     header_len, then header_len bytes of JSON {"arch": ..., "meta": ..., "trainable": ...}
    u64     n_params, then n_params f64 in canonical order W0, b0, W1, b1, ...
    u32     CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ChecksumError, MagicError, TruncationError, ValidationError, VersionError
from .nncore import DenseLayer, Network, dense_network

MODEL_MAGIC = b"V2SM"
MODEL_VERSION = 1
ROLES = ("vc", "asv", "asr")


@dataclass(frozen=True)
class ArchSpec:
    role: str
    input_dim: int
    hidden: tuple  # of (units, activation)
    output_dim: int
    output_activation: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        object.__setattr__(self, "hidden", tuple((int(n), str(a)) for n, a in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(n < 1 for n, _ in self.hidden):
            raise ValidationError("layer sizes must be positive")
        expected = "identity" if self.role == "vc" else "softmax"
        if self.output_activation != expected:
            raise ValidationError(f"{self.role} networks end in {expected}, not {self.output_activation}")
        if any(a == "softmax" for _, a in self.hidden):
            raise ValidationError("softmax is only allowed on the output layer")

    @property
    def sizes(self) -> tuple:
        return (self.input_dim,) + tuple(n for n, _ in self.hidden) + (self.output_dim,)

    @property
    def activations(self) -> tuple:
        return tuple(a for _, a in self.hidden) + (self.output_activation,)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "input_dim": self.input_dim,
            "hidden": [list(h) for h in self.hidden],
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(d["role"], int(d["input_dim"]), tuple(tuple(h) for h in d["hidden"]), int(d["output_dim"]), d["output_activation"])

    def with_dims(self, input_dim: int, output_dim: int) -> "ArchSpec":
        return ArchSpec(self.role, input_dim, self.hidden, output_dim, self.output_activation)


def vc_arch(dim: int = 16, hidden=(32, 16)) -> ArchSpec:
    return ArchSpec("vc", dim, tuple((h, "relu") for h in hidden), dim, "identity")


def asv_arch(dim: int = 16, n_speakers: int = 8, hidden=(64, 64, 64, 8)) -> ArchSpec:
    return ArchSpec("asv", dim, tuple((h, "sigmoid") for h in hidden), n_speakers, "softmax")


def asr_arch(dim: int = 16, n_phonemes: int = 10, hidden=(64, 64)) -> ArchSpec:
    return ArchSpec("asr", dim, tuple((h, "sigmoid") for h in hidden), n_phonemes, "softmax")


PRESETS = {
    "desk": {"vc": vc_arch(), "asv": asv_arch(), "asr": asr_arch()},
    "full": {
        "vc": vc_arch(78, (256, 128)),
        "asv": asv_arch(78, 260, (1024, 1024, 1024, 8)),
        "asr": asr_arch(78, 56, (1024, 1024, 1024, 1024)),
    },
}


def preset(role: str, scale: str = "desk") -> ArchSpec:
    try:
        return PRESETS[scale][role]
    except KeyError:
        raise ValidationError(f"no {scale!r} preset for role {role!r}") from None


SOFTMAX_HEAD_SCALE = 0.5


def build_model(spec: ArchSpec, seed: int | np.random.Generator = 0) -> Network:
    """Seeded network for ``spec``.

    Layers fed by sigmoid units get biases that cancel the units' 0.5 mean,
    and softmax heads are shrunk, so an untrained classifier outputs a
    near-uniform posterior.
    """
    net = dense_network(spec.sizes, spec.activations, seed, trainable=True)
    for prev, layer in zip(net.layers[:-1], net.layers[1:]):
        if prev.activation == "sigmoid":
            layer.bias = -0.5 * layer.weight.sum(axis=1)
    head = net.layers[-1]
    if head.activation == "softmax":
        head.weight *= SOFTMAX_HEAD_SCALE
        head.bias *= SOFTMAX_HEAD_SCALE
    return net


def identity_init(net: Network, margin: float = 3.0) -> Network:
    """Set a two-hidden-layer ReLU VC net to (approximately) the identity map.

    Layer 1 splits x into relu(x) and relu(-x), layer 2 recombines them as
    relu(x + margin), and the output layer subtracts the margin. Exact for
    inputs above -margin, which covers z-scored features almost always.
    """
    if len(net.layers) != 3 or net.activations != ("relu", "relu", "identity"):
        raise ValidationError("identity_init expects a relu-relu-identity network")
    D = net.input_dim
    h1, h2 = net.layers[0].out_dim, net.layers[1].out_dim
    if h1 < 2 * D or h2 < D or net.output_dim != D:
        raise ValidationError(f"hidden sizes ({h1}, {h2}) too small for identity on {D} dims")
    eye = np.eye(D)
    w1 = np.zeros((h1, D))
    w1[:D], w1[D : 2 * D] = eye, -eye
    w2 = np.zeros((h2, h1))
    w2[:D, :D], w2[:D, D : 2 * D] = eye, -eye
    b2 = np.zeros(h2)
    b2[:D] = margin
    w3 = np.zeros((D, h2))
    w3[:, :D] = eye
    net.layers[0] = DenseLayer(w1, np.zeros(h1), "relu")
    net.layers[1] = DenseLayer(w2, b2, "relu")
    net.layers[2] = DenseLayer(w3, -margin * np.ones(D), "identity")
    net.version += 1
    return net


def arch_of(net: Network, role: str) -> ArchSpec:
    hidden = tuple((l.out_dim, l.activation) for l in net.layers[:-1])
    return ArchSpec(role, net.input_dim, hidden, net.output_dim, net.layers[-1].activation)


def save_model(net: Network, meta: Optional[dict] = None, role: Optional[str] = None) -> bytes:
    meta = dict(meta or {})
    role = role or meta.get("role")
    if role is None:
        role = "vc" if net.layers[-1].activation == "identity" else "asv"
    header = json.dumps(
        {"arch": arch_of(net, role).to_dict(), "meta": meta, "trainable": net.trainable},
        sort_keys=True,
    ).encode()
    params = np.concatenate([p.reshape(-1) for p in net.parameters()]).astype("<f8")
    body = b"".join(
        [
            MODEL_MAGIC,
            struct.pack("<II", MODEL_VERSION, len(header)),
            header,
            struct.pack("<Q", params.size),
            params.tobytes(),
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body))


def load_model(buf: bytes) -> tuple[Network, dict]:
    """Parse a checkpoint; returns the network and its metadata (with ``arch``)."""
    if buf[:4] != MODEL_MAGIC:
        raise MagicError("not a V2SM checkpoint (bad magic)")
    if len(buf) < 12:
        raise TruncationError("checkpoint header", 12, len(buf))
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {MODEL_VERSION}")
    pos = 12 + hlen
    if len(buf) < pos + 8:
        raise TruncationError("checkpoint header", pos + 8, len(buf))
    try:
        header = json.loads(buf[12:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"checkpoint header is corrupt: {exc}") from None
    (n_params,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    expected = pos + 8 * n_params + 4
    if len(buf) != expected:
        if len(buf) < expected:
            raise TruncationError("checkpoint parameters", expected, len(buf))
        raise ChecksumError(f"trailing bytes: expected {expected}, got {len(buf)}")
    (crc,) = struct.unpack_from("<I", buf, expected - 4)
    if zlib.crc32(buf[: expected - 4]) != crc:
        raise ChecksumError("checkpoint CRC mismatch")

    arch = ArchSpec.from_dict(header["arch"])
    sizes = arch.sizes
    if n_params != sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:])):
        raise ValidationError("parameter count does not match architecture")
    flat = np.frombuffer(buf, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    layers, k = [], 0
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], arch.activations):
        w = flat[k : k + n_in * n_out].reshape(n_out, n_in).copy()
        k += n_in * n_out
        b = flat[k : k + n_out].copy()
        k += n_out
        layers.append(DenseLayer(w, b, act))
    meta = dict(header["meta"])
    meta["arch"] = arch
    return Network(layers, trainable=bool(header["trainable"])), meta


def write_model(path, net: Network, meta: Optional[dict] = None, role: Optional[str] = None) -> None:
    Path(path).write_bytes(save_model(net, meta, role))


def read_model(path) -> tuple[Network, dict]:
    return load_model(Path(path).read_bytes())


def describe(net: Network, meta: dict) -> str:
    """Human-readable key: value summary of a checkpoint."""
    arch = meta.get("arch") or arch_of(net, meta.get("role", "vc"))
    lines = [
        f"role: {arch.role}",
        f"layers: {' -> '.join(str(s) for s in arch.sizes)}",
        f"activations: {', '.join(arch.activations)}",
        f"parameters: {net.n_parameters()}",
        f"trainable: {str(net.trainable).lower()}",
    ]
    for key in sorted(k for k in meta if k != "arch"):
        lines.append(f"{key}: {json.dumps(meta[key], sort_keys=True)}")
    return "\n".join(lines)
