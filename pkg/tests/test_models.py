import numpy as np
import pytest

from v2s_lab.errors import ChecksumError, MagicError, TruncationError, ValidationError, VersionError
from v2s_lab.models import (
    PRESETS,
    ArchSpec,
    build_model,
    describe,
    identity_init,
    load_model,
    preset,
    read_model,
    save_model,
    write_model,
)


def test_full_vc_sizes():
    assert preset("vc", "full").sizes == (78, 256, 128, 78)
    assert preset("vc", "full").activations == ("relu", "relu", "identity")


def test_full_asv_sizes():
    arch = preset("asv", "full")
    assert tuple(n for n, _ in arch.hidden) == (1024, 1024, 1024, 8)
    assert arch.output_dim == 260 and arch.output_activation == "softmax"
    assert all(a == "sigmoid" for _, a in arch.hidden)


def test_full_asr_sizes():
    arch = preset("asr", "full")
    assert arch.sizes == (78, 1024, 1024, 1024, 1024, 56)


def test_desk_presets():
    assert preset("vc").sizes == (16, 32, 16, 16)
    assert preset("asv").sizes == (16, 64, 64, 64, 8, 8)
    assert preset("asr").sizes == (16, 64, 64, 10)


@pytest.mark.parametrize("scale", ["desk", "full"])
@pytest.mark.parametrize("role", ["vc", "asv", "asr"])
def test_every_preset_builds(scale, role):
    arch = PRESETS[scale][role]
    if scale == "full" and role != "vc":
        # structure only; building 4M-parameter nets is pointless here
        assert arch.sizes[0] == 78
        return
    net = build_model(arch, 0)
    assert net.sizes == arch.sizes


def test_same_seed_same_parameters():
    a, b = build_model(preset("asv"), 3), build_model(preset("asv"), 3)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    c = build_model(preset("asv"), 4)
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])


def test_untrained_classifier_near_uniform(rng):
    net = build_model(preset("asv"), 0)
    post = net(rng.standard_normal((200, 16)))
    assert np.abs(post.mean(axis=0) - 1 / 8).max() < 0.05


def test_arch_validation():
    with pytest.raises(ValidationError):
        ArchSpec("vc", 4, ((8, "relu"),), 4, "softmax")
    with pytest.raises(ValidationError):
        ArchSpec("asv", 4, ((8, "softmax"),), 3, "softmax")
    with pytest.raises(ValidationError):
        ArchSpec("asv", 0, (), 3, "softmax")
    with pytest.raises(ValidationError):
        preset("vc", "huge")


def test_identity_init(rng):
    net = identity_init(build_model(preset("vc"), 0))
    x = rng.uniform(-2.5, 5, (10, 16))
    np.testing.assert_allclose(net(x), x, atol=1e-12)


@pytest.mark.parametrize("role", ["vc", "asv", "asr"])
def test_round_trip_bit_identical(role, rng):
    net = build_model(preset(role), 7)
    x = rng.standard_normal((9, 16))
    back, meta = load_model(save_model(net, {"seed": 7}, role))
    assert back(x).tobytes() == net(x).tobytes()
    assert meta["seed"] == 7 and meta["arch"].role == role
    assert back.trainable


def test_round_trip_keeps_frozen_flag(tmp_path):
    net = build_model(preset("asr"), 0).freeze()
    write_model(tmp_path / "m.v2sm", net, role="asr")
    back, _ = read_model(tmp_path / "m.v2sm")
    assert not back.trainable


def test_bad_magic():
    buf = save_model(build_model(preset("vc"), 0))
    with pytest.raises(MagicError):
        load_model(b"NOPE" + buf[4:])


def test_bad_version():
    buf = bytearray(save_model(build_model(preset("vc"), 0)))
    buf[4] = 2
    with pytest.raises(VersionError):
        load_model(bytes(buf))


def test_truncation_names_lengths():
    buf = save_model(build_model(preset("vc"), 0))
    cut = buf[: len(buf) // 2]
    with pytest.raises(TruncationError) as info:
        load_model(cut)
    assert info.value.expected == len(buf)
    assert info.value.actual == len(cut)
    assert str(len(buf)) in str(info.value) and str(len(cut)) in str(info.value)


def test_checksum():
    buf = bytearray(save_model(build_model(preset("vc"), 0)))
    buf[-20] ^= 0xFF
    with pytest.raises(ChecksumError):
        load_model(bytes(buf))


def test_describe():
    net = build_model(preset("asv"), 0)
    text = describe(net, {"arch": preset("asv"), "config_hash": "abc"})
    assert "layers: 16 -> 64 -> 64 -> 64 -> 8 -> 8" in text
    assert 'config_hash: "abc"' in text
