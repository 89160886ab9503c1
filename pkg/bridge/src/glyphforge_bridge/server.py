"""Bridge server: serves a torch encoder backend over TCP or stdio.

One request in flight per connection; concurrent connections each get a
thread. Malformed frames answer status 2 without killing the process
(the connection closes, since framing cannot be resynchronized); backend
failures answer status 3.
"""

from __future__ import annotations

import argparse
import logging
import socket
import struct
import sys
import threading

import numpy as np

from . import protocol as wp
from .backends import build_backend

log = logging.getLogger(__name__)


def handle_request(backend, opcode: int, payload: bytes) -> bytes:
    """One request -> one response frame (bytes)."""
    try:
        if opcode == wp.OP_DESCRIBE:
            body = wp.pack_text(backend.name)
            body += struct.pack("<I", backend.dim)
            body += bytes([backend.capabilities])
            return wp.pack_frame(wp.STATUS_OK, body)

        if opcode == wp.OP_EMBED_IMAGE:
            if not backend.capabilities & wp.CAP_EMBED_IMAGE:
                return wp.pack_frame(wp.STATUS_CAPABILITY, b"embed_image not served")
            image, _ = wp.unpack_tensor(payload)
            _check_image(image)
            return wp.pack_frame(wp.STATUS_OK, wp.pack_tensor(backend.embed_image(image)))

        if opcode == wp.OP_ACTIVATION_MAP:
            if not backend.capabilities & wp.CAP_ACTIVATION_MAP:
                return wp.pack_frame(wp.STATUS_CAPABILITY, b"activation_map not served")
            image, _ = wp.unpack_tensor(payload)
            _check_image(image)
            return wp.pack_frame(wp.STATUS_OK, wp.pack_tensor(backend.activation_map(image)))

        if opcode == wp.OP_LOSS_AND_GRAD:
            if not backend.capabilities & wp.CAP_LOSS_GRAD:
                return wp.pack_frame(wp.STATUS_CAPABILITY, b"loss_and_grad not served")
            image, off = wp.unpack_tensor(payload)
            target, _ = wp.unpack_tensor(payload, off)
            _check_image(image)
            loss, grad = backend.loss_and_grad(image, target)
            body = struct.pack("<f", loss) + wp.pack_tensor(grad)
            return wp.pack_frame(wp.STATUS_OK, body)

        if opcode == wp.OP_EMBED_TEXT:
            if not backend.capabilities & wp.CAP_EMBED_TEXT:
                return wp.pack_frame(wp.STATUS_CAPABILITY, b"embed_text not served")
            text, _ = wp.unpack_text(payload)
            return wp.pack_frame(wp.STATUS_OK, wp.pack_tensor(backend.embed_text(text)))

        return wp.pack_frame(wp.STATUS_MALFORMED, f"unknown opcode {opcode}".encode())
    except wp.ProtocolError as e:
        return wp.pack_frame(wp.STATUS_MALFORMED, str(e).encode())
    except Exception as e:  # backend/model failure
        log.exception("request failed")
        return wp.pack_frame(wp.STATUS_INTERNAL, f"{type(e).__name__}: {e}".encode())


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise wp.ProtocolError(f"image tensor must be HxWx3, got shape {tuple(image.shape)}")


def serve_stream(backend, reader, writer) -> None:
    """Frame loop over a byte stream; returns on EOF or framing loss."""
    while True:
        try:
            frame = wp.read_frame(reader)
        except wp.ProtocolError as e:
            writer.write(wp.pack_frame(wp.STATUS_MALFORMED, str(e).encode()))
            writer.flush()
            return
        if frame is None:
            return
        opcode, payload = frame
        writer.write(handle_request(backend, opcode, payload))
        writer.flush()


class BridgeServer:
    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self.sock = socket.socket()
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(8)
        self.address = "{}:{}".format(*self.sock.getsockname())
        self._thread = None

    def _client_loop(self, conn):
        with conn:
            reader = conn.makefile("rb")
            writer = conn.makefile("wb")
            try:
                serve_stream(self.backend, reader, writer)
            except (BrokenPipeError, ConnectionResetError):
                pass

    def serve_forever(self):
        log.info("bridge %s serving on %s", self.backend.name, self.address)
        while True:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._client_loop, args=(conn,), daemon=True).start()

    def start_background(self):
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self):
        self.sock.close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="glyphforge-bridge", description=__doc__)
    parser.add_argument("--listen", default="127.0.0.1:9316", help="host:port, or 'stdio'")
    parser.add_argument("--model", choices=("semantic", "perceptual"), default="semantic")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--untrained", action="store_true",
                        help="skip pretrained weights (testing only)")
    parser.add_argument("--activation-pre-relu", action="store_true",
                        help="take conv3_1 activations before the nonlinearity")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    backend = build_backend(
        args.model, device=args.device, untrained=args.untrained,
        activation_pre_relu=args.activation_pre_relu,
    )
    if args.listen == "stdio":
        serve_stream(backend, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    host, _, port = args.listen.rpartition(":")
    server = BridgeServer(backend, host=host or "127.0.0.1", port=int(port))
    print(f"serving {backend.name} (dim {backend.dim}) on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
