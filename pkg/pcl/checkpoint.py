"""
Network checkpoints.

A checkpoint is a flat binary file:

* header: 4-byte magic, format version and the length of the architecture JSON
  (big-endian unsigned 32-bit each);
* the ArchitectureSpec as UTF-8 JSON;
* for a pairwise head, the connection count and the ``a``, ``b``, ``o``
  index arrays (little-endian int32);
* for every ParamTensor in ``Network.params()`` order, its size followed by
  theta and Omega (little-endian float32).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .layers import PairwiseConnections, ParamTensor
from .model import ArchitectureSpec, Network, PairwiseHead, build_network


MAGIC = b"PCLC"
VERSION = 1
HEADER = struct.Struct(">4sII")
COUNT = struct.Struct("<Q")


class CheckpointError(Exception):
    """Raised when a checkpoint cannot be written or does not parse."""
    pass


def _head(net: Network) -> PairwiseHead | None:
    for layer in net.layers:
        if isinstance(layer, PairwiseHead):
            return layer
    return None


def save_checkpoint(net: Network, path: Path | str) -> Path:
    """Write the network's spec, wiring, parameters and importances."""
    if net.spec is None:
        raise CheckpointError("only networks built from an ArchitectureSpec can be saved")
    path = Path(path).expanduser().resolve()

    buf = io.BytesIO()
    spec_json = json.dumps(net.spec.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(HEADER.pack(MAGIC, VERSION, len(spec_json)))
    buf.write(spec_json)

    head = _head(net)
    if head is not None:
        conn = head.conn
        buf.write(COUNT.pack(conn.n_connections))
        for indices in (conn.a, conn.b, conn.o):
            buf.write(indices.astype("<i4").tobytes())

    for p in net.params():
        buf.write(COUNT.pack(p.size))
        buf.write(p.theta.astype("<f4").tobytes())
        buf.write(p.omega.astype("<f4").tobytes())

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(buf.getvalue())
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}")
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def array(self, count: int, dtype: str) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * width), dtype=dtype)

    def count(self) -> int:
        return COUNT.unpack(self.take(COUNT.size))[0]


def load_checkpoint(path: Path | str, debug: bool = False) -> Network:
    """Rebuild a network saved by :func:`save_checkpoint`.

    Raises:
        CheckpointError: On a wrong magic or version, an unusable architecture
            header, or a size mismatch.
    """
    path = Path(path).expanduser().resolve()
    try:
        reader = _Reader(path.read_bytes(), path)
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

    magic, version, spec_len = HEADER.unpack(reader.take(HEADER.size))
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        spec = ArchitectureSpec.from_dict(json.loads(reader.take(spec_len).decode("utf-8")))
        net = build_network(spec, seed=0, debug=debug)
    except (ConfigError, ValueError, TypeError) as e:
        raise CheckpointError(f"{path}: bad architecture header: {e}")

    head = _head(net)
    if head is not None:
        n = reader.count()
        a, b, o = (reader.array(n, "<i4").astype(np.int64) for _ in range(3))
        old = head.conn
        bias = None
        if old.bias is not None:
            bias = ParamTensor(old.bias.name, np.zeros_like(old.bias.theta))
        head.conn = PairwiseConnections(
            a=a, b=b, o=o,
            weights=ParamTensor(old.weights.name, np.zeros(n, dtype=np.float32)),
            input_width=old.input_width,
            n_outputs=old.n_outputs,
            bias=bias,
        )

    for p in net.params():
        size = reader.count()
        if size != p.size:
            raise CheckpointError(f"{path}: {p.name} has {size} values, expected {p.size}")
        p.theta = reader.array(size, "<f4").astype(np.float32).reshape(p.shape)
        p.omega = reader.array(size, "<f4").astype(np.float32).reshape(p.shape)
        p.zero_grad()

    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    return net
