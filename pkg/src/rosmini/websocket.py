"""Minimal RFC 6455 websocket server and client over blocking sockets.

Covers what a local telemetry bridge needs: HTTP upgrade, text/binary frames
with client masking, fragmentation, ping/pong, close handshake, and a plain
HTTP fallback hook so the same port can serve the console's static files.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct
import threading
from typing import Callable
from urllib.parse import urlsplit

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
MAX_MESSAGE = 16 * 1024 * 1024

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsError(Exception):
    pass


class WsClosed(WsError):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(min(remaining, 65536))
        except socket.timeout:
            raise
        except OSError as e:
            raise WsClosed(str(e)) from None
        if not chunk:
            raise WsClosed("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, *, require_mask: bool) -> tuple[bool, int, bytes]:
    """One raw frame: (fin, opcode, payload). Unmasks client payloads."""
    head = _recv_exact(sock, 2)
    fin = bool(head[0] & 0x80)
    if head[0] & 0x70:
        raise WsError("reserved bits set")
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack("!H", _recv_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack("!Q", _recv_exact(sock, 8))
    if length > MAX_MESSAGE:
        raise WsError(f"frame of {length} bytes exceeds limit")
    if opcode >= OP_CLOSE and (length > 125 or not fin):
        raise WsError("malformed control frame")
    if require_mask and not masked:
        raise WsError("client frame not masked")
    mask = _recv_exact(sock, 4) if masked else None
    payload = _recv_exact(sock, length) if length else b""
    if mask:
        decoded = bytearray(payload)
        for i in range(len(decoded)):
            decoded[i] ^= mask[i % 4]
        payload = bytes(decoded)
    return fin, opcode, payload


def encode_frame(opcode: int, payload: bytes, *, mask: bool, fin: bool = True) -> bytes:
    head = bytearray()
    head.append((0x80 if fin else 0) | opcode)
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head.append(mask_bit | n)
    elif n < 65536:
        head.append(mask_bit | 126)
        head += struct.pack("!H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack("!Q", n)
    if not mask:
        return bytes(head) + payload
    key = os.urandom(4)
    head += key
    body = bytearray(payload)
    for i in range(len(body)):
        body[i] ^= key[i % 4]
    return bytes(head) + bytes(body)


class WsConnection:
    """One established websocket; reads are single-threaded, writes locked."""

    def __init__(self, sock: socket.socket, *, is_client: bool):
        self.sock = sock
        self.is_client = is_client
        self._write_lock = threading.Lock()
        self._closed = False
        self.close_code: int | None = None

    def send_text(self, text: str) -> None:
        self._send(OP_TEXT, text.encode("utf-8"))

    def send_binary(self, payload: bytes) -> None:
        self._send(OP_BINARY, payload)

    def ping(self, payload: bytes = b"") -> None:
        self._send(OP_PING, payload)

    def _send(self, opcode: int, payload: bytes) -> None:
        frame = encode_frame(opcode, payload, mask=self.is_client)
        with self._write_lock:
            if self._closed:
                raise WsClosed("connection already closed")
            try:
                self.sock.sendall(frame)
            except OSError as e:
                self._closed = True
                raise WsClosed(str(e)) from None

    def recv(self, timeout: float | None = None) -> str | bytes | None:
        """Next data message; None once the peer closed. Handles control frames."""
        self.sock.settimeout(timeout)
        buffer = bytearray()
        in_message = False
        text_mode = False
        while True:
            try:
                fin, opcode, payload = read_frame(self.sock, require_mask=not self.is_client)
            except WsClosed:
                self._closed = True
                return None
            if opcode == OP_PING:
                try:
                    self._send(OP_PONG, payload)
                except WsClosed:
                    return None
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                if len(payload) >= 2:
                    (self.close_code,) = struct.unpack("!H", payload[:2])
                try:
                    self._send(OP_CLOSE, payload[:2])
                except WsClosed:
                    pass
                self._closed = True
                try:
                    self.sock.close()
                except OSError:
                    pass
                return None
            if opcode in (OP_TEXT, OP_BINARY):
                if in_message:
                    raise WsError("new data frame inside fragmented message")
                in_message = True
                text_mode = opcode == OP_TEXT
                buffer += payload
            elif opcode == OP_CONT:
                if not in_message:
                    raise WsError("continuation frame without a start frame")
                buffer += payload
            else:
                raise WsError(f"unsupported opcode {opcode}")
            if len(buffer) > MAX_MESSAGE:
                raise WsError("fragmented message exceeds limit")
            if fin:
                data = bytes(buffer)
                if text_mode:
                    try:
                        return data.decode("utf-8")
                    except UnicodeDecodeError:
                        raise WsError("text frame is not valid UTF-8") from None
                return data

    def close(self, code: int = 1000) -> None:
        try:
            self._send(OP_CLOSE, struct.pack("!H", code))
        except WsClosed:
            pass
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


HttpHandler = Callable[[str, str, dict[str, str]], tuple[str, str, bytes]]
"""(method, path, headers) -> (status, content_type, body)"""


class WsServer:
    """Accepts upgrades on any path; other requests go to the HTTP fallback."""

    def __init__(
        self,
        address: tuple[str, int],
        handler: Callable[[WsConnection, str], None],
        *,
        http_fallback: HttpHandler | None = None,
    ):
        self._handler = handler
        self._http_fallback = http_fallback
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(address)
        self._sock.listen(32)
        self._sock.settimeout(0.2)
        self._closed = False
        self._thread = threading.Thread(target=self._accept_loop, name="ws-accept", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def start(self) -> "WsServer":
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            threading.Thread(
                target=self._handshake, args=(conn,), name="ws-handshake", daemon=True
            ).start()

    def _handshake(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(10.0)
            request = self._read_request(conn)
            if request is None:
                conn.close()
                return
            method, path, headers = request
            upgrade = headers.get("upgrade", "").lower()
            key = headers.get("sec-websocket-key")
            if method == "GET" and upgrade == "websocket" and key:
                response = (
                    "HTTP/1.1 101 Switching Protocols\r\n"
                    "Upgrade: websocket\r\n"
                    "Connection: Upgrade\r\n"
                    f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
                    "\r\n"
                )
                conn.sendall(response.encode("ascii"))
                conn.settimeout(None)
                self._handler(WsConnection(conn, is_client=False), path)
                return
            if self._http_fallback is not None:
                status, content_type, body = self._http_fallback(method, path, headers)
            else:
                status, content_type, body = "404 Not Found", "text/plain", b"not found"
            head = (
                f"HTTP/1.1 {status}\r\n"
                f"Content-Type: {content_type}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            )
            conn.sendall(head.encode("ascii") + body)
            conn.close()
        except (OSError, WsError, ValueError):
            try:
                conn.close()
            except OSError:
                pass

    @staticmethod
    def _read_request(conn: socket.socket):
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = conn.recv(65536)
            if not chunk:
                return None
            data += chunk
            if len(data) > 64 * 1024:
                return None
        head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        parts = lines[0].split()
        if len(parts) < 2:
            return None
        headers: dict[str, str] = {}
        for line in lines[1:]:
            name, _, value = line.partition(":")
            if name and value:
                headers[name.strip().lower()] = value.strip()
        return parts[0].upper(), parts[1], headers

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        self._thread.join(timeout=5)


def connect(url: str, timeout: float = 5.0) -> WsConnection:
    """Open a client connection to ws://host:port/path."""
    parts = urlsplit(url)
    if parts.scheme != "ws" or parts.hostname is None:
        raise WsError(f"not a ws:// url: {url!r}")
    port = parts.port or 80
    sock = socket.create_connection((parts.hostname, port), timeout=timeout)
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    request = (
        f"GET {parts.path or '/'} HTTP/1.1\r\n"
        f"Host: {parts.hostname}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    )
    sock.sendall(request.encode("ascii"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(65536)
        if not chunk:
            raise WsError("server closed during handshake")
        data += chunk
        if len(data) > 64 * 1024:
            raise WsError("oversized handshake response")
    head, _, extra = data.partition(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    if "101" not in lines[0]:
        raise WsError(f"upgrade refused: {lines[0]}")
    expected = accept_key(key)
    accept = ""
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-accept":
            accept = value.strip()
    if accept != expected:
        raise WsError("bad Sec-WebSocket-Accept")
    if extra:
        raise WsError("unexpected bytes after handshake")
    sock.settimeout(None)
    return WsConnection(sock, is_client=True)
