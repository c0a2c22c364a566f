import pytest
import torch

from specnet.bundle import (
    FORMAT_VERSION,
    MAGIC,
    deserialize_bundle,
    deserialize_bundle_bytes,
    serialize_bundle,
    serialize_bundle_bytes,
)
from specnet.errors import CorruptBundle, ModelError, UnsupportedVersion


def test_round_trip_is_bit_exact(small_bundle, tmp_path):
    path = tmp_path / "m.bundle"
    serialize_bundle(small_bundle, path)
    back = deserialize_bundle(path)
    assert back.equals(small_bundle)
    for name, arr in small_bundle.tensors.items():
        assert arr.tobytes() == back.tensors[name].tobytes()
    assert back.config == small_bundle.config and back.vocab == small_bundle.vocab
    assert back.metadata == small_bundle.metadata


def test_rebuilt_model_matches_state(small_bundle):
    model = small_bundle.model()
    state = model.state_dict()
    for name, arr in small_bundle.tensors.items():
        # inference runs in float64; widening the stored float32 weights is exact
        assert state[name].dtype == torch.float64
        assert state[name].to(torch.float32).numpy().tobytes() == arr.tobytes()
    assert model.tau.item() == small_bundle.tau


def test_truncated_and_tampered_bundles(small_bundle):
    data = serialize_bundle_bytes(small_bundle)
    with pytest.raises(CorruptBundle):
        deserialize_bundle_bytes(data[:-10])
    with pytest.raises(CorruptBundle):
        deserialize_bundle_bytes(data[:40])
    flipped = bytearray(data)
    flipped[-5] ^= 0xFF
    with pytest.raises(CorruptBundle):
        deserialize_bundle_bytes(bytes(flipped))
    with pytest.raises(CorruptBundle):
        deserialize_bundle_bytes(b"hello world")


def test_unknown_version(small_bundle):
    data = serialize_bundle_bytes(small_bundle)
    head = f"{MAGIC.decode()} {FORMAT_VERSION} ".encode()
    assert data.startswith(head)
    with pytest.raises(UnsupportedVersion):
        deserialize_bundle_bytes(f"{MAGIC.decode()} 999 ".encode() + data[len(head):])


def test_unreadable_path(tmp_path):
    with pytest.raises(ModelError):
        deserialize_bundle(tmp_path / "absent.bundle")


def test_with_tau_changes_only_the_threshold(small_bundle):
    other = small_bundle.with_tau(small_bundle.tau + 1.0)
    assert other.tau == pytest.approx(small_bundle.tau + 1.0)
    for name in small_bundle.tensors:
        if name != "tau":
            assert other.tensors[name].tobytes() == small_bundle.tensors[name].tobytes()
