"""Wire protocol framing for the encoder bridge (server side).

Frame (both directions, little-endian):
    magic "GLY1" | code u8 | payload_len u32 | payload
Request codes: 1 embed_image, 2 activation_map, 3 loss_and_grad,
4 embed_text, 5 describe. Response codes: 0 ok, 1 capability error,
2 malformed, 3 internal.

Tensors: ndim u8 | dims u32 each | float32 row-major. Text: len u32 |
UTF-8. describe response: name (text) | embedding_dim u32 | capability
bitmask u8 (bit k set when opcode k+1 is served).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GLY1"

OP_EMBED_IMAGE = 1
OP_ACTIVATION_MAP = 2
OP_LOSS_AND_GRAD = 3
OP_EMBED_TEXT = 4
OP_DESCRIBE = 5

STATUS_OK = 0
STATUS_CAPABILITY = 1
STATUS_MALFORMED = 2
STATUS_INTERNAL = 3

CAP_EMBED_IMAGE = 1 << 0
CAP_ACTIVATION_MAP = 1 << 1
CAP_LOSS_GRAD = 1 << 2
CAP_EMBED_TEXT = 1 << 3


class ProtocolError(Exception):
    pass


def pack_frame(code: int, payload: bytes) -> bytes:
    return MAGIC + struct.pack("<BI", code, len(payload)) + payload


def pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return (
        struct.pack("<B", arr.ndim)
        + b"".join(struct.pack("<I", d) for d in arr.shape)
        + arr.tobytes()
    )


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) < offset + 1:
        raise ProtocolError("tensor header truncated")
    ndim = buf[offset]
    offset += 1
    if len(buf) < offset + 4 * ndim:
        raise ProtocolError("tensor dims truncated")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset) if ndim else ()
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) < offset + 4 * count:
        raise ProtocolError("tensor values truncated")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
    return values, offset + 4 * count


def pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def unpack_text(buf: bytes, offset: int = 0) -> tuple[str, int]:
    if len(buf) < offset + 4:
        raise ProtocolError("text length truncated")
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + n:
        raise ProtocolError("text bytes truncated")
    return buf[offset : offset + n].decode("utf-8"), offset + n


def read_exact(stream, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            if remaining == n:
                return None
            raise ProtocolError("stream closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> tuple[int, bytes] | None:
    head = read_exact(stream, 9)
    if head is None:
        return None
    if head[:4] != MAGIC:
        raise ProtocolError(f"bad magic {head[:4]!r}")
    code = head[4]
    (length,) = struct.unpack_from("<I", head, 5)
    payload = read_exact(stream, length) if length else b""
    if payload is None:
        raise ProtocolError("stream closed before payload")
    return code, payload
