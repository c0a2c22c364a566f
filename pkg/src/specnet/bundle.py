"""Single-file model bundles.

Layout::

    SPECNET-BUNDLE <version> <header-bytes>\\n
    <JSON header: config, vocabulary, metadata, tensor table, sha256 of the blob>
    <blob: little-endian float32 tensors, back to back>

The header is written with sorted keys and no timestamps, so equal models
give equal files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .embeddings import EmbeddingTable, TokenVocabulary
from .errors import CorruptBundle, IoFailure, ModelError, UnsupportedVersion
from .model import SpecularNet

FORMAT_VERSION = 1
MAGIC = b"SPECNET-BUNDLE"


@dataclass
class ModelBundle:
    config: TrainConfig
    vocab: TokenVocabulary
    tensors: dict[str, np.ndarray]   # float32, includes the embedding table and tau/beta
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: SpecularNet, metadata: dict | None = None) -> "ModelBundle":
        tensors = {name: t.detach().cpu().to(torch.float32).numpy().copy()
                   for name, t in model.state_dict().items()}
        return cls(model.config, model.vocab, tensors, dict(metadata or {}))

    def model(self) -> SpecularNet:
        """Inference network in float64.

        Stored weights are float32, but scoring in float64 keeps a page's
        scores independent of the batch it is scored in (float32 rounding
        otherwise depends on the batch shape).
        """
        table = EmbeddingTable(self.vocab, self.tensors["table"])
        net = SpecularNet(self.config, table)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.tensors.items()}
        try:
            net.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise CorruptBundle(f"bundle tensors do not match the configured model: {exc}") from exc
        net.eval()
        return net.double()

    @property
    def tau(self) -> float:
        return float(self.tensors["tau"])

    def with_tau(self, tau: float) -> "ModelBundle":
        tensors = dict(self.tensors)
        tensors["tau"] = np.asarray(tau, dtype=np.float32)
        return ModelBundle(self.config, self.vocab, tensors, dict(self.metadata), self.version)

    def equals(self, other: "ModelBundle") -> bool:
        return serialize_bundle_bytes(self) == serialize_bundle_bytes(other)


def serialize_bundle_bytes(bundle: ModelBundle) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(bundle.tensors):
        arr = np.ascontiguousarray(bundle.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    blob = b"".join(blobs)
    header = {
        "config": bundle.config.to_dict(),
        "vocab": {"tags": list(bundle.vocab.tag_tokens), "attrs": list(bundle.vocab.attr_tokens),
                  "standard_list_version": bundle.vocab.standard_list_version},
        "metadata": bundle.metadata,
        "tensors": table,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + f" {bundle.version} {len(head)}\n".encode("ascii") + head + blob


def deserialize_bundle_bytes(data: bytes) -> ModelBundle:
    line, sep, rest = data.partition(b"\n")
    parts = line.split(b" ")
    if not sep or len(parts) != 3 or parts[0] != MAGIC:
        raise CorruptBundle("not a model bundle")
    try:
        version, head_len = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise CorruptBundle("malformed bundle header line") from exc
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"bundle format {version} is not supported (expected {FORMAT_VERSION})")
    if len(rest) < head_len:
        raise CorruptBundle("bundle truncated inside the header")
    try:
        header = json.loads(rest[:head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBundle("bundle header is not valid JSON") from exc
    blob = rest[head_len:]
    if len(blob) != header.get("blob_bytes"):
        raise CorruptBundle(f"bundle payload has {len(blob)} bytes, header says {header.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise CorruptBundle("bundle checksum mismatch")
    tensors = {}
    for entry in header["tensors"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
    v = header["vocab"]
    vocab = TokenVocabulary(tuple(v["tags"]), tuple(v["attrs"]), v["standard_list_version"])
    cfg = header["config"]
    cfg["mlp_hidden"] = tuple(cfg["mlp_hidden"])
    return ModelBundle(TrainConfig.from_dict(cfg), vocab, tensors, header["metadata"], version)


def serialize_bundle(bundle: ModelBundle, path: str | Path) -> None:
    try:
        Path(path).write_bytes(serialize_bundle_bytes(bundle))
    except OSError as exc:
        raise IoFailure(f"cannot write bundle {path}: {exc}") from exc


def deserialize_bundle(path: str | Path) -> ModelBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelError(f"cannot read bundle {path}: {exc}") from exc
    return deserialize_bundle_bytes(data)
