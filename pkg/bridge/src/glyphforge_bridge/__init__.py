"""Bridge server exposing CLIP/VGG encoders over the glyphforge wire protocol."""

from .backends import PerceptualBackend, SemanticBackend, build_backend
from .server import BridgeServer, handle_request, serve_stream

__version__ = "0.1.0"
