"""Protocol conformance: byte-exact framing against golden transcripts.

The request byte literals here are shared verbatim with the client-side
suite in the core package; they pin the wire format for both ends.
"""

import socket
import struct
import threading

import numpy as np
import pytest

from glyphforge_bridge import protocol as wp
from glyphforge_bridge.server import BridgeServer, handle_request, serve_stream


class StubBackend:
    """Fixed-output backend so response bytes are fully deterministic."""

    name = "stub-encoder"
    dim = 4
    capabilities = 0b1111

    EMBED = np.array([0.5, -0.5, 0.25, 0.125], dtype=np.float32)

    def embed_image(self, image):
        return self.EMBED

    def embed_text(self, text):
        return self.EMBED[::-1].copy()

    def activation_map(self, image):
        return np.array([[1.0, 0.5], [0.25, 0.0]], dtype=np.float32)

    def loss_and_grad(self, image, target):
        return 0.5, np.zeros((1, 1, 3), dtype=np.float32)


STUB = StubBackend()

# -- golden request bytes (shared with the client suite) --------------------

DESCRIBE_REQUEST = b"GLY1\x05\x00\x00\x00\x00"
EMBED_TEXT_REQUEST = b"GLY1\x04\x06\x00\x00\x00\x02\x00\x00\x00hi"
IMAGE_TENSOR = (
    b"\x03" + b"\x01\x00\x00\x00" * 2 + b"\x03\x00\x00\x00" + struct.pack("<3f", 0.5, 0.25, 1.0)
)
EMBED_IMAGE_REQUEST = b"GLY1\x01" + struct.pack("<I", len(IMAGE_TENSOR)) + IMAGE_TENSOR


def frame_of(status, payload):
    return b"GLY1" + struct.pack("<BI", status, len(payload)) + payload


class TestGoldenTranscripts:
    def test_describe_response_bytes(self):
        got = handle_request(STUB, DESCRIBE_REQUEST[4], b"")
        expected_payload = (
            struct.pack("<I", 12) + b"stub-encoder" + struct.pack("<I", 4) + b"\x0f"
        )
        assert got == frame_of(0, expected_payload)

    def test_embed_image_response_bytes(self):
        opcode = EMBED_IMAGE_REQUEST[4]
        payload = EMBED_IMAGE_REQUEST[9:]
        got = handle_request(STUB, opcode, payload)
        tensor = b"\x01\x04\x00\x00\x00" + struct.pack("<4f", 0.5, -0.5, 0.25, 0.125)
        assert got == frame_of(0, tensor)

    def test_embed_text_response_bytes(self):
        opcode = EMBED_TEXT_REQUEST[4]
        payload = EMBED_TEXT_REQUEST[9:]
        got = handle_request(STUB, opcode, payload)
        tensor = b"\x01\x04\x00\x00\x00" + struct.pack("<4f", 0.125, 0.25, -0.5, 0.5)
        assert got == frame_of(0, tensor)

    def test_loss_and_grad_response_bytes(self):
        payload = IMAGE_TENSOR + (b"\x01\x04\x00\x00\x00" + struct.pack("<4f", 1, 0, 0, 0))
        got = handle_request(STUB, wp.OP_LOSS_AND_GRAD, payload)
        grad_tensor = (
            b"\x03" + b"\x01\x00\x00\x00\x01\x00\x00\x00\x03\x00\x00\x00" + b"\x00" * 12
        )
        assert got == frame_of(0, struct.pack("<f", 0.5) + grad_tensor)

    def test_unknown_opcode_is_malformed(self):
        got = handle_request(STUB, 9, b"")
        assert got[:4] == b"GLY1"
        assert got[4] == wp.STATUS_MALFORMED

    def test_truncated_tensor_is_malformed(self):
        got = handle_request(STUB, wp.OP_EMBED_IMAGE, b"\x02\x01\x00\x00\x00")
        assert got[4] == wp.STATUS_MALFORMED

    def test_capability_refusal(self):
        class NoText(StubBackend):
            capabilities = 0b0111

        got = handle_request(NoText(), wp.OP_EMBED_TEXT, wp.pack_text("x"))
        assert got[4] == wp.STATUS_CAPABILITY
        assert b"embed_text" in got[9:]

    def test_backend_failure_is_internal(self):
        class Broken(StubBackend):
            def embed_image(self, image):
                raise RuntimeError("weights on fire")

        got = handle_request(Broken(), wp.OP_EMBED_IMAGE, IMAGE_TENSOR)
        assert got[4] == wp.STATUS_INTERNAL
        assert b"weights on fire" in got[9:]


class TestStreamLoop:
    def run_stream(self, raw: bytes) -> bytes:
        import io

        out = io.BytesIO()
        serve_stream(STUB, io.BytesIO(raw), out)
        return out.getvalue()

    def test_sequential_requests_one_connection(self):
        raw = DESCRIBE_REQUEST + EMBED_IMAGE_REQUEST + EMBED_TEXT_REQUEST
        out = self.run_stream(raw)
        frames = []
        off = 0
        while off < len(out):
            assert out[off : off + 4] == b"GLY1"
            status = out[off + 4]
            (length,) = struct.unpack_from("<I", out, off + 5)
            frames.append((status, out[off + 9 : off + 9 + length]))
            off += 9 + length
        assert [s for s, _ in frames] == [0, 0, 0]

    def test_bad_magic_answers_malformed_then_closes(self):
        out = self.run_stream(b"NOPE" + b"\x00" * 5 + DESCRIBE_REQUEST)
        assert out[4] == wp.STATUS_MALFORMED
        # no further frames: connection cannot resync
        (length,) = struct.unpack_from("<I", out, 5)
        assert len(out) == 9 + length

    def test_clean_eof(self):
        assert self.run_stream(b"") == b""


class TestTcpServer:
    def test_round_trip_over_socket(self):
        server = BridgeServer(STUB).start_background()
        try:
            host, port = server.address.split(":")
            with socket.create_connection((host, int(port)), timeout=10) as conn:
                conn.sendall(DESCRIBE_REQUEST)
                reader = conn.makefile("rb")
                head = reader.read(9)
                assert head[:4] == b"GLY1" and head[4] == 0
                (length,) = struct.unpack_from("<I", head, 5)
                body = reader.read(length)
                name, off = wp.unpack_text(body)
                (dim,) = struct.unpack_from("<I", body, off)
                assert (name, dim, body[off + 4]) == ("stub-encoder", 4, 0b1111)
        finally:
            server.close()

    def test_concurrent_connections(self):
        server = BridgeServer(STUB).start_background()
        errors = []

        def worker():
            try:
                host, port = server.address.split(":")
                with socket.create_connection((host, int(port)), timeout=10) as conn:
                    for _ in range(5):
                        conn.sendall(EMBED_IMAGE_REQUEST)
                        reader = conn.makefile("rb")
                        head = reader.read(9)
                        (length,) = struct.unpack_from("<I", head, 5)
                        assert head[4] == 0
                        reader.read(length)
            except Exception as e:  # pragma: no cover
                errors.append(e)

        try:
            threads = [threading.Thread(target=worker) for _ in range(4)]
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=30)
            assert not errors
        finally:
            server.close()
