"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PDD1"
    u64   header length in bytes
    ...   header: UTF-8 JSON, keys sorted, no whitespace
    ...   tensor blobs: float32 LE, concatenated in manifest order
    8 B   BLAKE2b-64 digest of every preceding byte

The header carries the config echo, the step/epoch counters, the shuffling
RNG state, Adam hyperparameters and a manifest of ``{name, kind, shape,
offset}`` records. ``kind`` is one of ``param``, ``buffer``, ``adam_m``,
``adam_v``. Offsets are in bytes from the start of the blob section.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError

MAGIC = b"PDD1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    step: int
    epoch: int
    rng_state: dict
    adam: dict
    tensors: dict = field(default_factory=dict)   # (kind, name) -> float32 array
    manifest_digest: str | None = None

    def arrays(self, kind):
        return {name: arr for (k, name), arr in self.tensors.items() if k == kind}

    def restore(self, model, adam_state=None):
        """Copy parameters/buffers (and optimizer moments) into live objects."""
        params = model.named_parameters()
        for name, arr in self.arrays("param").items():
            if name not in params:
                raise FormatError(f"checkpoint parameter {name!r} unknown to model")
            p = params[name]
            if p.shape != arr.shape:
                raise FormatError(f"checkpoint parameter {name!r} has shape {arr.shape}, model {p.shape}")
            p.data = arr.astype(p.dtype)
        for name, arr in self.arrays("buffer").items():
            model.set_buffer(name, arr)
        if adam_state is not None:
            adam_state.t = self.adam["t"]
            adam_state.beta1, adam_state.beta2, adam_state.eps = (
                self.adam["beta1"], self.adam["beta2"], self.adam["eps"])
            dtype = next(iter(params.values())).dtype if params else np.float32
            adam_state.m = {k: v.astype(dtype) for k, v in self.arrays("adam_m").items()}
            adam_state.v = {k: v.astype(dtype) for k, v in self.arrays("adam_v").items()}
        return model

    def to_model(self):
        from .config import Config
        from .numerics import precision
        from .pipeline import ModelBundle

        cfg = Config.from_dict(self.config)
        with precision(cfg.train.precision):
            model = ModelBundle(cfg)
            self.restore(model)
        model.eval()
        model.ready = True
        return model


def checkpoint_from_training(result):
    model, adam = result.model, result.adam
    tensors = {}
    for name, p in model.named_parameters().items():
        tensors[("param", name)] = p.data
    for name, b in model.named_buffers().items():
        tensors[("buffer", name)] = b
    for name in sorted(adam.m):
        tensors[("adam_m", name)] = adam.m[name]
        tensors[("adam_v", name)] = adam.v[name]
    return Checkpoint(
        config=model.config.to_dict(),
        step=result.step,
        epoch=result.epoch,
        rng_state=result.rng_state,
        adam={"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        tensors={k: np.ascontiguousarray(v, dtype="<f4") for k, v in tensors.items()},
        manifest_digest=result.manifest_digest,
    )


def _digest(data):
    return hashlib.blake2b(data, digest_size=8).digest()


def dumps(ckpt):
    from .config import Config

    manifest, blobs, offset = [], [], 0
    for (kind, name), arr in ckpt.tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": FORMAT_VERSION,
        "config": ckpt.config,
        "config_digest": Config.from_dict(ckpt.config).digest(),
        "manifest_digest": ckpt.manifest_digest,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "adam": ckpt.adam,
        "tensors": manifest,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(blobs)
    return body + _digest(body)


def loads(data):
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    if len(data) < 20:
        raise FormatError("checkpoint truncated")
    body, stored = data[:-8], data[-8:]
    if _digest(body) != stored:
        raise CorruptionError("checkpoint digest mismatch")
    (hlen,) = struct.unpack("<Q", body[4:12])
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from None
    if header.get("format") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format {header.get('format')}")
    blob = body[12 + hlen:]
    tensors = {}
    for rec in header["tensors"]:
        count = int(np.prod(rec["shape"], dtype=np.int64))
        end = rec["offset"] + 4 * count
        if end > len(blob):
            raise FormatError(f"tensor {rec['name']} runs past end of blob")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=rec["offset"])
        tensors[(rec["kind"], rec["name"])] = arr.reshape(rec["shape"]).copy()
    return Checkpoint(
        config=header["config"],
        step=header["step"],
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        adam=header["adam"],
        tensors=tensors,
        manifest_digest=header.get("manifest_digest"),
    )


def save_checkpoint(ckpt, path):
    data = dumps(ckpt)
    with open(path, "wb") as f:
        f.write(data)
    return data


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads(f.read())


def header_of(path):
    """Just the JSON header, without validating the digest."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    (hlen,) = struct.unpack("<Q", data[4:12])
    return json.loads(data[12:12 + hlen].decode("utf-8"))
