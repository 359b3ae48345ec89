"""Versioned binary model files.

Layout (all integers little-endian):

    bytes  0-7   magic  b"PGFMODEL"
    bytes  8-11  format version, uint32 (currently 1)
    bytes 12-15  header length in bytes, uint32
    header       UTF-8 JSON: {"spec": ..., "metadata": ...,
                              "param_count": P, "buffer_count": Q}
    params       P float64 little-endian, layer order
    buffers      Q float64 little-endian, layer order (batch-norm running
                 mean then variance per batch-norm layer)

The spec JSON is self-describing (see specs.py), so another implementation
can rebuild the network without out-of-band knowledge.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import ModelArtifact
from .specs import NetworkSpec, parameter_count

__all__ = ["save_model", "load_model", "ModelFormatError"]

MAGIC = b"PGFMODEL"
VERSION = 1


class ModelFormatError(ValueError):
    """File is not a valid model of a supported version."""


def save_model(artifact: ModelArtifact, path: Path | str) -> None:
    header = json.dumps(
        {
            "spec": artifact.spec.to_dict(),
            "metadata": artifact.metadata,
            "param_count": int(artifact.params.size),
            "buffer_count": int(artifact.buffers.size),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(artifact.params, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(artifact.buffers, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError(f"truncated model file while reading {what}")
    return data


def load_model(path: Path | str) -> ModelArtifact:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic)")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8, "version"))
        if version != VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
            spec = NetworkSpec.from_dict(header["spec"])
            metadata = header["metadata"]
            param_count = int(header["param_count"])
            buffer_count = int(header["buffer_count"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ModelFormatError(f"{path}: malformed header: {exc}") from exc
        declared = parameter_count(spec)
        if param_count != declared:
            raise ModelFormatError(
                f"{path}: header claims {param_count} parameters, spec declares {declared}"
            )
        params = np.frombuffer(_read_exact(fh, 8 * param_count, "parameters"), dtype="<f8")
        buffers = np.frombuffer(_read_exact(fh, 8 * buffer_count, "buffers"), dtype="<f8")
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing bytes after model payload")
    return ModelArtifact(
        spec=spec,
        params=params.astype(np.float64),
        buffers=buffers.astype(np.float64),
        metadata=metadata,
    )
