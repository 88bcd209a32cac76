"""Worker side of the wire format: one JSON object per line.

Byte-compatible with the engine's framing — compact separators, UTF-8, a
trailing newline, and a mandatory string ``type`` field.
"""

import json

__all__ = ["ProtocolError", "encode_line", "decode_line"]


class ProtocolError(ValueError):
    """A protocol line violates the framing rules."""


def encode_line(message: dict) -> bytes:
    if "type" not in message:
        raise ProtocolError("message lacks a 'type' field")
    return json.dumps(message, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_line(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed protocol line: {exc.msg}") from exc
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise ProtocolError("protocol message must be an object with a string 'type'")
    return message
