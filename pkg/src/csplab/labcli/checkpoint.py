"""Binary checkpoint container: magic CSPL, JSON metadata, named tensors.

Payload is row-major little-endian regardless of host, with a trailing
SHA-256 over the whole body; any corrupted byte fails the load. Tensor dtype
follows the run's float mode so 64-bit resumes are bit-exact.
"""

import hashlib
import json
import struct

import numpy as np

from csplab.codeclm import CodecLM, ModelConfig, inject_lora

MAGIC = b"CSPL"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(Exception):
    pass


def save_arrays(path, items, meta):
    """items: iterable of (name, ndarray); meta: JSON-serializable dict."""
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    mj = json.dumps(meta, sort_keys=True).encode()
    body += struct.pack("<Q", len(mj))
    body += mj
    items = list(items)
    body += struct.pack("<I", len(items))
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        nb = name.encode()
        body += struct.pack("<H", len(nb))
        body += nb
        code = _CODES[arr.dtype]
        body += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            body += struct.pack("<I", dim)
        body += np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as f:
        f.write(bytes(body) + digest)


def load_arrays(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt payload)")
    off = 4
    (version,) = struct.unpack_from("<I", body, off); off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (mlen,) = struct.unpack_from("<Q", body, off); off += 8
    meta = json.loads(body[off:off + mlen].decode()); off += mlen
    (count,) = struct.unpack_from("<I", body, off); off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off); off += 2
        name = body[off:off + nlen].decode(); off += nlen
        code, rank = struct.unpack_from("<BB", body, off); off += 2
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}I", body, off); off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        dt = np.dtype(_DTYPES[code])
        nbytes = n * dt.itemsize
        if off + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(body, dtype=dt, count=n, offset=off).reshape(dims)
        arrays[name] = arr.astype(dt.newbyteorder("="))
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes")
    return arrays, meta


def save_checkpoint(model, meta, path, opt_state=None):
    """Model parameters (+ adapters, + optional Adam slots) to one file."""
    meta = dict(meta)
    meta["model_config"] = model.config.to_dict()
    if model.adapters:
        meta["lora_rank"] = next(iter(model.adapters.values()))[0].tensor.data.shape[1]
    items = list(model.state_items())
    if opt_state is not None:
        meta["opt_step_count"] = opt_state["step_count"]
        for name, (m, v) in sorted(opt_state["slots"].items()):
            items.append((f"opt.m.{name}", m))
            items.append((f"opt.v.{name}", v))
    save_arrays(path, items, meta)


def load_checkpoint(path):
    """Rebuild the model (and optimizer state, when present) from a file."""
    arrays, meta = load_arrays(path)
    cfg = ModelConfig(**meta["model_config"])
    model = CodecLM(cfg, seed=0)
    if meta.get("lora_rank"):
        inject_lora(model, meta["lora_rank"], seed=0)
    param_names = {n for n, _ in model.state_items()}
    opt_state = None
    if "opt_step_count" in meta:
        opt_state = {"step_count": meta["opt_step_count"], "slots": {}}
    slots = {}
    for name, arr in arrays.items():
        if name.startswith("opt.m.") or name.startswith("opt.v."):
            kind, pname = name[4], name[6:]
            slots.setdefault(pname, {})[kind] = arr
            continue
        if name not in param_names:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        _assign(model, name, arr)
    missing = param_names - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:4]}")
    if opt_state is not None:
        for pname, mv in slots.items():
            opt_state["slots"][pname] = (mv["m"], mv["v"])
    return model, meta, opt_state


def _assign(model, name, arr):
    if name.startswith("lora."):
        path = name[5:].rsplit(".", 1)[0]
        which = name.rsplit(".", 1)[1]
        a, b, _ = model.adapters[path]
        g = a if which == "a" else b
    else:
        g = model.params[name]
    if g.tensor.data.shape != arr.shape:
        raise CheckpointError(f"shape mismatch for {name}: "
                              f"{g.tensor.data.shape} vs {arr.shape}")
    g.tensor.data = arr.astype(model.config.np_dtype())
