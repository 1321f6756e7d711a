"""Single-file checkpoint persistence.

Layout: 8-byte magic, little-endian uint64 header length, JSON header
(version, config snapshot, tensor manifest, scalar metadata), raw
little-endian float64 tensor payload, and a little-endian uint32 CRC32 of
the payload.  Weights round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .contrastive import PrototypeBank
from .errors import CheckpointFormatError
from .reencoder import ReEncoder
from .tokens import LabelSpace, TokenClassifier

_MAGIC = b"DRC1CKPT"
_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    reencoder: ReEncoder
    bank: PrototypeBank
    classifier: TokenClassifier
    scl_steps: int = 0
    ttc_steps: int = 0
    rng_labels: list[str] = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name in ckpt.reencoder.store.names():
        tensors.append((f"reencoder.{name}", ckpt.reencoder.store[name]))
    tensors.append(("bank.prototypes", ckpt.bank.prototypes))
    for name in ckpt.classifier.store.names():
        tensors.append((f"classifier.{name}", ckpt.classifier.store[name]))

    manifest = []
    offset = 0
    chunks = []
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)

    header = {
        "version": _VERSION,
        "config": ckpt.config,
        "tensors": manifest,
        "reencoder": {"dim": ckpt.reencoder.dim, "beta": ckpt.reencoder.beta,
                      "hidden": ckpt.reencoder.hidden},
        "bank": {"category_ids": ckpt.bank.category_ids},
        "classifier": {"dim": ckpt.classifier.dim,
                       "n_tokens": ckpt.classifier.n_tokens,
                       "layers": ckpt.classifier.layers,
                       "heads": ckpt.classifier.heads,
                       "ffn_mult": ckpt.classifier.ffn_dim // ckpt.classifier.dim,
                       "category_ids": list(ckpt.classifier.label_space.category_ids)},
        "scl_steps": ckpt.scl_steps,
        "ttc_steps": ckpt.ttc_steps,
        "rng_labels": ckpt.rng_labels,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise CheckpointFormatError("bad magic")
    (header_len,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + header_len + 4:
        raise CheckpointFormatError("truncated checkpoint")
    try:
        header = json.loads(data[16:16 + header_len])
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"corrupt header: {e}") from None
    if header.get("version") != _VERSION:
        raise CheckpointFormatError(
            f"unsupported version {header.get('version')}")
    payload = data[16 + header_len:-4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointFormatError("checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    for ent in header["tensors"]:
        shape = tuple(ent["shape"])
        size = int(np.prod(shape)) * 8 if shape else 8
        start = ent["offset"]
        if start + size > len(payload):
            raise CheckpointFormatError("truncated checkpoint")
        arr = np.frombuffer(payload[start:start + size], dtype="<f8")
        arrays[ent["name"]] = arr.reshape(shape).astype(np.float64)

    re_meta = header["reencoder"]
    reenc = ReEncoder(re_meta["dim"], beta=re_meta["beta"],
                      hidden=re_meta["hidden"])
    for name in reenc.store.names():
        reenc.store[name] = arrays[f"reencoder.{name}"]

    bank = PrototypeBank(arrays["bank.prototypes"].copy(),
                         list(header["bank"]["category_ids"]))

    cl_meta = header["classifier"]
    ls = LabelSpace(tuple(cl_meta["category_ids"]))
    clf = TokenClassifier(cl_meta["dim"], ls, n_tokens=cl_meta["n_tokens"],
                          layers=cl_meta["layers"], heads=cl_meta["heads"],
                          ffn_mult=cl_meta["ffn_mult"])
    for name in clf.store.names():
        clf.store[name] = arrays[f"classifier.{name}"]

    return Checkpoint(header["config"], reenc, bank, clf,
                      scl_steps=header.get("scl_steps", 0),
                      ttc_steps=header.get("ttc_steps", 0),
                      rng_labels=list(header.get("rng_labels", [])))
