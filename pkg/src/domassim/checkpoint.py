"""Binary checkpoint files.

Layout (all integers unsigned 32-bit little endian)::

    b"DASM" | version
    repeated: name_len | utf-8 name | rank | dims... | float32 LE payload
    record_count

Stack metadata travels as zero-size records named ``__meta__/<key>=<value>``.
"""
from __future__ import annotations

import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

MAGIC = b"DASM"
VERSION = 1
META_PREFIX = "__meta__/"


class CheckpointError(ValueError):
    pass


def write_records(records, path):
    """Write ``(name, array)`` pairs; the file is replaced atomically."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    n = 0
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
        n += 1
    chunks.append(struct.pack("<I", n))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_records(path) -> "OrderedDict[str, np.ndarray]":
    """Parse a whole checkpoint file or raise ``CheckpointError``; never returns partial data."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos, end = 8, len(buf) - 4
    out = OrderedDict()
    try:
        while pos < end:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + nlen > end:
                raise CheckpointError(f"{path}: truncated record name")
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if rank > 8:
                raise CheckpointError(f"{path}: implausible rank {rank} for {name}")
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > end:
                raise CheckpointError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file ({exc})") from None
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: corrupt record name") from None
    if pos != end:
        raise CheckpointError(f"{path}: trailing bytes before record count")
    (count,) = struct.unpack_from("<I", buf, end)
    if count != len(out):
        raise CheckpointError(f"{path}: record count {count} does not match {len(out)} records read")
    return out


def save_checkpoint(stack, path):
    meta = stack.config()
    records = [(f"{META_PREFIX}{k}={_fmt(v)}", np.zeros((0,), np.float32)) for k, v in meta.items()]
    records += list(stack.state_dict().items())
    write_records(records, path)


def _fmt(v):
    if isinstance(v, tuple):
        return "x".join(str(i) for i in v)
    return str(v)


def _parse_meta(records):
    meta = {}
    for name in records:
        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX):].partition("=")
            meta[key] = value
    return meta


def load_checkpoint(path):
    """Rebuild a ``ModelStack`` (in eval mode) from a checkpoint written by ``save_checkpoint``."""
    from .models import ModelStack

    records = read_records(path)
    meta = _parse_meta(records)
    try:
        stack = ModelStack(
            variant=meta["variant"],
            input_size=tuple(int(v) for v in meta["input_size"].split("x")),
            num_classes=int(meta["num_classes"]),
            width=int(meta["width"]),
            dropout_p=float(meta["dropout_p"]),
            hidden=int(meta["hidden"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing metadata {exc}") from None
    state = OrderedDict((k, v) for k, v in records.items() if not k.startswith(META_PREFIX))
    _load_into(stack, state, path)
    return stack.eval()


def _load_into(module, state, path):
    expected = module.state_dict()
    missing = sorted(set(expected) - set(state))
    extra = sorted(set(state) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter names differ; missing={missing} unexpected={extra}")
    for name, arr in state.items():
        if arr.shape != expected[name].shape:
            raise CheckpointError(
                f"{path}: shape mismatch for parameter {name}: file {arr.shape}, model {expected[name].shape}")
    module.load_state_dict(state)


def load_module_weights(module, path, prefix=""):
    """Load the records under ``prefix`` into ``module``."""
    records = read_records(path)
    state = OrderedDict((k[len(prefix):], v) for k, v in records.items() if k.startswith(prefix))
    _load_into(module, state, path)
    return module
