"""Self-describing binary checkpoint.

Layout::

    RNNTEST-CHECKPOINT\\n
    format_version=1\\n
    <key>=<value>\\n ...          config fields, vocab (JSON), meta.* entries
    end_header\\n
    uint32 tensor count
    per tensor: uint32 name length, utf-8 name, uint32 rank,
                uint64 extents..., float64 data (all little-endian, row-major)
"""
import json
import struct
from dataclasses import fields

import numpy as np

from rnntest.errors import CheckpointError
from rnntest.rnn import Model, RnnConfig

MAGIC = b"RNNTEST-CHECKPOINT\n"
FORMAT_VERSION = 1
_INT_FIELDS = {"num_layers", "state_size", "input_dim", "vocab_size", "embedding_dim", "num_classes"}


def _header(model):
    lines = [f"format_version={FORMAT_VERSION}"]
    for f in fields(RnnConfig):
        value = getattr(model.config, f.name)
        lines.append(f"{f.name}={'' if value is None else value}")
    if model.vocab is not None:
        lines.append("vocab=" + json.dumps(model.vocab, ensure_ascii=True))
    for key in sorted(model.meta):
        value = str(model.meta[key])
        if "\n" in value or "\n" in key:
            raise CheckpointError("meta entries must be single-line")
        lines.append(f"meta.{key}={value}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("utf-8")


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_header(model))
        fh.write(struct.pack("<I", len(model.params)))
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an rnntest checkpoint")
    pos = len(MAGIC)
    header = {}
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated header")
        try:
            line = blob[pos:end].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: header is not UTF-8") from None
        pos = end + 1
        if line == "end_header":
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        header[key] = value
    if header.get("format_version") != str(FORMAT_VERSION):
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    kwargs = {}
    for f in fields(RnnConfig):
        raw = header.get(f.name, "")
        if raw == "":
            continue
        kwargs[f.name] = int(raw) if f.name in _INT_FIELDS else raw
    config = RnnConfig(**kwargs)
    vocab = json.loads(header["vocab"]) if "vocab" in header else None
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}

    try:
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            params[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated tensor data") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return Model(config, params, vocab, meta)
