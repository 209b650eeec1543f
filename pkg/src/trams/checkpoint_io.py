"""Checkpoint serialization.

Layout: magic "TRAMSCKPT\\0" (10 bytes), little-endian u16 format version,
little-endian u32 header length, UTF-8 JSON header {config, vocab, tensors:
[{name, shape}, ...]}, then each tensor as raw little-endian float32 in
manifest order. Loading a saved float32 checkpoint is bit-exact.
"""

import json
import struct
from dataclasses import asdict

import numpy as np

from .corpus import Vocabulary
from .errors import CorruptCheckpointError, UnsupportedVersionError
from .model import Checkpoint, ModelConfig, param_shapes

MAGIC = b"TRAMSCKPT\x00"
VERSION = 1
_PRELUDE = len(MAGIC) + 2 + 4


def _vocab_to_dict(vocab):
    if vocab is None:
        return None
    return {
        "kind": vocab.kind,
        "id_to_token": list(vocab.id_to_token),
        "unk_id": vocab.unk_id,
    }


def _vocab_from_dict(d):
    if d is None:
        return None
    toks = list(d["id_to_token"])
    return Vocabulary(
        kind=d["kind"],
        id_to_token=toks,
        token_to_id={t: i for i, t in enumerate(toks)},
        unk_id=d.get("unk_id"),
    )


def save_checkpoint(ckpt, path):
    """Write the checkpoint; float64 tensors are stored as float32."""
    manifest = [
        {"name": name, "shape": list(t.shape)} for name, t in ckpt.params.items()
    ]
    header = {
        "config": asdict(ckpt.config),
        "vocab": _vocab_to_dict(ckpt.vocab),
        "tensors": manifest,
    }
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for t in ckpt.params.values():
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _PRELUDE:
        raise CorruptCheckpointError(
            "checkpoint truncated: %d bytes, prelude needs %d" % (len(raw), _PRELUDE)
        )
    if raw[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("bad magic %r" % raw[: len(MAGIC)])
    (version,) = struct.unpack_from("<H", raw, len(MAGIC))
    if version != VERSION:
        raise UnsupportedVersionError(
            "checkpoint version %d, this build reads %d" % (version, VERSION)
        )
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC) + 2)
    if len(raw) < _PRELUDE + hlen:
        raise CorruptCheckpointError(
            "checkpoint truncated inside header (%d of %d header bytes)"
            % (len(raw) - _PRELUDE, hlen)
        )
    try:
        header = json.loads(raw[_PRELUDE : _PRELUDE + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError("header is not valid JSON: %s" % e) from None
    for key in ("config", "tensors"):
        if key not in header:
            raise CorruptCheckpointError("header missing %r field" % key)
    try:
        config = ModelConfig(**header["config"]).validate()
    except TypeError as e:
        raise CorruptCheckpointError("bad config field: %s" % e) from None
    expected = param_shapes(config)
    params = {}
    offset = _PRELUDE + hlen
    for entry in header["tensors"]:
        name = entry.get("name")
        shape = tuple(entry.get("shape", ()))
        if name not in expected:
            raise CorruptCheckpointError("unexpected tensor %r in manifest" % name)
        if shape != expected[name]:
            raise CorruptCheckpointError(
                "tensor %r has shape %s, config implies %s"
                % (name, shape, expected[name])
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise CorruptCheckpointError(
                "checkpoint truncated in tensor %r (%d of %d bytes)"
                % (name, len(chunk), nbytes)
            )
        params[name] = (
            np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        )
        offset += nbytes
    missing = [n for n in expected if n not in params]
    if missing:
        raise CorruptCheckpointError("manifest missing tensors: %s" % missing)
    if offset != len(raw):
        raise CorruptCheckpointError(
            "%d trailing bytes after last tensor" % (len(raw) - offset)
        )
    return Checkpoint(
        config=config, params=params, vocab=_vocab_from_dict(header.get("vocab"))
    )
