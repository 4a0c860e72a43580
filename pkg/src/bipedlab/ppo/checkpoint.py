"""Deterministic binary checkpoint container.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(sorted keys), then every array as raw little-endian float64 in header order.
No timestamps are stored, so saving the same parameters twice gives the same
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, CheckpointMismatch
from .network import MLP, PolicyParams

MAGIC = b"BPLCKPT\x00"
VERSION = 1


def _named_arrays(params: PolicyParams):
    out = []
    for tag, net in (("actor", params.actor), ("critic", params.critic)):
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            out += [(f"{tag}.w{k}", w), (f"{tag}.b{k}", b)]
    out.append(("log_std", params.log_std))
    return out


def checkpoint_bytes(params: PolicyParams, meta: dict | None = None) -> bytes:
    arrays = _named_arrays(params)
    header = {
        "version": VERSION,
        "activation": params.activation,
        "action_scale": float(params.action_scale),
        "actor_sizes": params.actor.sizes,
        "critic_sizes": params.critic.sizes,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<I", len(blob)) + blob + body


def save_checkpoint(path, params: PolicyParams, meta: dict | None = None) -> Path:
    """Write atomically (temp file then rename) so a crash never leaves half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params, meta))
    tmp.replace(path)
    return path


def parse_checkpoint(data: bytes) -> tuple[PolicyParams, dict]:
    if len(data) < 12 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}, expected {VERSION}")
    offset = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError("checkpoint is truncated")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(float).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError("checkpoint has trailing bytes")

    def net(tag, sizes):
        n = len(sizes) - 1
        ws = [arrays[f"{tag}.w{k}"] for k in range(n)]
        bs = [arrays[f"{tag}.b{k}"] for k in range(n)]
        for k, w in enumerate(ws):
            if w.shape != (sizes[k + 1], sizes[k]):
                raise CheckpointError(f"{tag} layer {k} shape {w.shape} disagrees with header")
        return MLP(ws, bs)

    params = PolicyParams(net("actor", header["actor_sizes"]), net("critic", header["critic_sizes"]),
                          arrays["log_std"], header["action_scale"], header["activation"])
    for a in params.arrays():
        if not np.all(np.isfinite(a)):
            raise CheckpointError("checkpoint contains non-finite weights")
    return params, header["meta"]


def load_checkpoint(path, obs_dim: int | None = None, act_dim: int | None = None,
                    constraint_hash: str | None = None, force: bool = False) -> tuple[PolicyParams, dict]:
    """Load and validate a checkpoint.

    ``obs_dim``/``act_dim`` mismatches always raise :class:`CheckpointMismatch`.
    A differing ``constraint_hash`` raises too unless ``force`` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    params, meta = parse_checkpoint(path.read_bytes())
    if obs_dim is not None and params.obs_dim != obs_dim:
        raise CheckpointMismatch(f"checkpoint expects {params.obs_dim} observations, environment gives {obs_dim}")
    if act_dim is not None and params.act_dim != act_dim:
        raise CheckpointMismatch(f"checkpoint has {params.act_dim} actions, environment needs {act_dim}")
    if constraint_hash is not None and not force and meta.get("constraint_hash") != constraint_hash:
        raise CheckpointMismatch(
            f"checkpoint was trained under constraint set {meta.get('constraint_hash')!r} "
            f"(gait {meta.get('gait')!r}); current set is {constraint_hash!r}. Pass --force to override."
        )
    return params, meta
