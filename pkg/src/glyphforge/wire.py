"""Bridge wire protocol: framing and payload codecs.

Frame layout (both directions), little-endian:
    magic   4 bytes  b"GLY1"
    code    u8       request: opcode; response: status
    length  u32      payload byte count
    payload

Opcodes: 1 embed_image, 2 activation_map, 3 loss_and_grad, 4 embed_text,
5 describe. Statuses: 0 ok, 1 capability error, 2 malformed, 3 internal.

Tensors: ndim u8, then each dim u32, then float32 row-major values.
Text: length u32, then UTF-8 bytes. describe response: name (text),
embedding_dim u32, capability bitmask u8 (bit k set when opcode k+1 is
served).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import TransportError

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

CAP_BITS = {
    "embed_image": 1 << 0,
    "activation_map": 1 << 1,
    "loss_grad": 1 << 2,
    "embed_text": 1 << 3,
}


def pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<B", arr.ndim) + b"".join(
        struct.pack("<I", d) for d in arr.shape
    )
    return head + arr.tobytes()


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) < offset + 1:
        raise TransportError("tensor header truncated")
    ndim = buf[offset]
    offset += 1
    if len(buf) < offset + 4 * ndim:
        raise TransportError("tensor dims truncated")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset) if ndim else ()
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    nbytes = 4 * count
    if len(buf) < offset + nbytes:
        raise TransportError("tensor values truncated")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return values.reshape(shape).astype(np.float64), offset + nbytes


def pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def unpack_text(buf: bytes, offset: int = 0) -> tuple[str, int]:
    if len(buf) < offset + 4:
        raise TransportError("text length truncated")
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + n:
        raise TransportError("text bytes truncated")
    return buf[offset : offset + n].decode("utf-8"), offset + n


def pack_frame(code: int, payload: bytes) -> bytes:
    return MAGIC + struct.pack("<BI", code, len(payload)) + payload


def read_exact(reader, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = reader.read(remaining)
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(reader) -> tuple[int, bytes]:
    head = read_exact(reader, 9)
    if head[:4] != MAGIC:
        raise TransportError(f"bad magic {head[:4]!r}")
    code = head[4]
    (length,) = struct.unpack_from("<I", head, 5)
    return code, read_exact(reader, length)
