"""Networked performance/power evaluation: framing, messages, server, client."""

from .client import PpeClient, PpeConnectionError, PpeError, PpeEvaluator, PpeProtocolError, PpeRemoteError, PpeTimeout
from .framing import MAX_FRAME_BYTES, OversizeFrame, ProtocolError, TruncatedFrame, decode_frame, encode_frame
from .messages import Detail, EstimateRequest, EstimateResponse, Status
from .server import PpeServer, parse_hostport

__all__ = [
    "MAX_FRAME_BYTES", "Detail", "EstimateRequest", "EstimateResponse", "OversizeFrame", "PpeClient",
    "PpeConnectionError", "PpeError", "PpeEvaluator", "PpeProtocolError", "PpeRemoteError", "PpeServer",
    "PpeTimeout", "ProtocolError", "Status", "TruncatedFrame", "decode_frame", "encode_frame", "parse_hostport",
]
