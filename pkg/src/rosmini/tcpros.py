"""TCPROS data plane: connection-header handshake, length-prefixed framing,
per-subscriber send queues with drop-oldest overflow, and service call framing.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

MAX_HEADER = 16 * 1024 * 1024
MAX_FRAME = 64 * 1024 * 1024
HANDSHAKE_TIMEOUT = 5.0
QUEUE_MAX_MESSAGES = 16
QUEUE_MAX_BYTES = 4 * 1024 * 1024


class TransportError(Exception):
    pass


class OversizeHeader(TransportError):
    pass


class FrameTooLarge(TransportError):
    pass


class Disconnected(TransportError):
    pass


class HandshakeRejected(TransportError):
    def __init__(self, remote_error: str):
        super().__init__(f"peer rejected handshake: {remote_error}")
        self.remote_error = remote_error


class Md5Mismatch(TransportError):
    def __init__(self, local: str, remote: str):
        super().__init__(f"md5 mismatch: local {local}, remote {remote}")
        self.local = local
        self.remote = remote


class LinkState(enum.Enum):
    HANDSHAKING = "handshaking"
    ACTIVE = "active"
    CLOSED = "closed"
    ERRORED = "errored"


# ------------------------------------------------------------------ framing


def encode_header(entries: Mapping[str, str] | Iterable[tuple[str, str]]) -> bytes:
    items = entries.items() if isinstance(entries, Mapping) else entries
    body = bytearray()
    for key, value in items:
        entry = f"{key}={value}".encode("utf-8")
        body += struct.pack("<I", len(entry))
        body += entry
    if len(body) > MAX_HEADER:
        raise OversizeHeader(f"encoded header is {len(body)} bytes")
    return struct.pack("<I", len(body)) + bytes(body)


def decode_header(data: bytes) -> dict[str, str]:
    """Entries in order; duplicate keys keep the last occurrence."""
    out: dict[str, str] = {}
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise TransportError("truncated header entry length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise TransportError("header entry overruns buffer")
        entry = data[pos:pos + n]
        pos += n
        try:
            text = entry.decode("utf-8")
        except UnicodeDecodeError:
            raise TransportError("header entry is not valid UTF-8") from None
        key, sep, value = text.partition("=")
        if not sep:
            raise TransportError(f"header entry missing '=': {text!r}")
        if key in out:
            del out[key]  # reinsert so ordering reflects the surviving entry
        out[key] = value
    return out


def read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(min(remaining, 262144))
        except socket.timeout:
            raise
        except OSError as e:
            raise Disconnected(str(e)) from None
        if not chunk:
            raise Disconnected("connection closed by peer")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_frame: int = MAX_FRAME) -> bytes:
    (n,) = struct.unpack("<I", read_exact(sock, 4))
    if n > max_frame:
        raise FrameTooLarge(f"frame of {n} bytes exceeds limit {max_frame}")
    return read_exact(sock, n)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    try:
        sock.sendall(struct.pack("<I", len(payload)) + payload)
    except OSError as e:
        raise Disconnected(str(e)) from None


def read_header_block(sock: socket.socket, timeout: float | None = HANDSHAKE_TIMEOUT) -> dict[str, str]:
    old = sock.gettimeout()
    sock.settimeout(timeout)
    try:
        (n,) = struct.unpack("<I", read_exact(sock, 4))
        if n > MAX_HEADER:
            raise OversizeHeader(f"peer announced {n}-byte header")
        return decode_header(read_exact(sock, n))
    finally:
        try:
            sock.settimeout(old)
        except OSError:
            pass


def write_header_block(sock: socket.socket, entries: Mapping[str, str]) -> None:
    try:
        sock.sendall(encode_header(entries))
    except OSError as e:
        raise Disconnected(str(e)) from None


# --------------------------------------------------------------- handshakes


def subscriber_handshake(
    sock: socket.socket,
    *,
    caller_id: str,
    topic: str,
    type_name: str,
    md5: str,
    tcp_nodelay: bool = False,
    timeout: float = HANDSHAKE_TIMEOUT,
) -> dict[str, str]:
    """Run the subscriber side of the topic handshake, returning the reply header."""
    if tcp_nodelay:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    write_header_block(sock, {
        "callerid": caller_id,
        "topic": topic,
        "type": type_name,
        "md5sum": md5,
        "tcp_nodelay": "1" if tcp_nodelay else "0",
    })
    reply = read_header_block(sock, timeout)
    if "error" in reply:
        raise HandshakeRejected(reply["error"])
    remote_md5 = reply.get("md5sum", "")
    if md5 != "*" and remote_md5 not in ("*", md5):
        raise Md5Mismatch(md5, remote_md5)
    return reply


def service_handshake(
    sock: socket.socket,
    *,
    caller_id: str,
    service: str,
    md5: str,
    persistent: bool = False,
    probe: bool = False,
    timeout: float = HANDSHAKE_TIMEOUT,
) -> dict[str, str]:
    """Client side of the service handshake."""
    header = {"callerid": caller_id, "service": service, "md5sum": md5}
    if persistent:
        header["persistent"] = "1"
    if probe:
        header["probe"] = "1"
    write_header_block(sock, header)
    reply = read_header_block(sock, timeout)
    if "error" in reply:
        raise HandshakeRejected(reply["error"])
    return reply


def call_service_once(
    sock: socket.socket,
    request_bytes: bytes,
    *,
    timeout: float | None = None,
    max_frame: int = MAX_FRAME,
) -> tuple[bool, bytes]:
    """Send one framed request and read the (ok, payload) response."""
    old = sock.gettimeout()
    sock.settimeout(timeout)
    try:
        write_frame(sock, request_bytes)
        ok = read_exact(sock, 1) != b"\x00"
        payload = read_frame(sock, max_frame)
        return ok, payload
    finally:
        try:
            sock.settimeout(old)
        except OSError:
            pass


# ------------------------------------------------------------------- queues


@dataclass
class QueuePolicy:
    max_messages: int = QUEUE_MAX_MESSAGES
    max_bytes: int = QUEUE_MAX_BYTES


class SendQueue:
    """Bounded FIFO of outgoing frames. Overflow drops the oldest entry."""

    def __init__(self, policy: QueuePolicy | None = None):
        self.policy = policy or QueuePolicy()
        self._items: deque[bytes] = deque()
        self._bytes = 0
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._closed = False
        self.dropped = 0

    def offer(self, payload: bytes) -> bool:
        with self._ready:
            if self._closed:
                return False
            self._items.append(payload)
            self._bytes += len(payload)
            while len(self._items) > self.policy.max_messages or (
                self._bytes > self.policy.max_bytes and len(self._items) > 1
            ):
                old = self._items.popleft()
                self._bytes -= len(old)
                self.dropped += 1
            self._ready.notify()
            return True

    def take(self, timeout: float | None = None) -> bytes | None:
        with self._ready:
            if not self._items and not self._closed:
                self._ready.wait(timeout)
            if self._items:
                payload = self._items.popleft()
                self._bytes -= len(payload)
                return payload
            return None

    def close(self) -> None:
        with self._ready:
            self._closed = True
            self._ready.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


# -------------------------------------------------------------------- links


class Counters:
    """Monotonic per-link counters, safe to read from any thread."""

    __slots__ = ("_lock", "messages", "bytes", "drops")

    def __init__(self):
        self._lock = threading.Lock()
        self.messages = 0
        self.bytes = 0
        self.drops = 0

    def add(self, nbytes: int) -> None:
        with self._lock:
            self.messages += 1
            self.bytes += nbytes

    def add_drops(self, n: int) -> None:
        with self._lock:
            self.drops += n


class SubscriberLink:
    """Publisher-side endpoint for one connected subscriber."""

    def __init__(
        self,
        sock: socket.socket,
        *,
        topic: str,
        remote_caller_id: str,
        policy: QueuePolicy | None = None,
        on_closed: Callable[["SubscriberLink"], None] | None = None,
    ):
        sock.settimeout(None)  # idle topics are legitimate; writer blocks freely
        self.sock = sock
        self.topic = topic
        self.remote_caller_id = remote_caller_id
        self.queue = SendQueue(policy)
        self.counters = Counters()
        self.state = LinkState.ACTIVE
        self._on_closed = on_closed
        self._thread = threading.Thread(
            target=self._writer, name=f"tcpros-sub-link:{topic}", daemon=True
        )

    def start(self) -> "SubscriberLink":
        self._thread.start()
        return self

    def offer(self, payload: bytes) -> bool:
        before = self.queue.dropped
        accepted = self.queue.offer(payload)
        after = self.queue.dropped
        if after > before:
            self.counters.add_drops(after - before)
        return accepted

    def _writer(self) -> None:
        try:
            while True:
                payload = self.queue.take(timeout=0.5)
                if payload is None:
                    if self.queue.closed:
                        break
                    continue
                write_frame(self.sock, payload)
                self.counters.add(len(payload))
        except (TransportError, OSError):
            self.state = LinkState.ERRORED
        finally:
            if self.state is not LinkState.ERRORED:
                self.state = LinkState.CLOSED
            try:
                self.sock.close()
            except OSError:
                pass
            if self._on_closed:
                self._on_closed(self)

    def close(self) -> None:
        self.queue.close()

    def join(self, timeout: float = 5.0) -> None:
        self._thread.join(timeout)


class PublisherLink:
    """Subscriber-side endpoint for one connected publisher."""

    def __init__(
        self,
        sock: socket.socket,
        *,
        topic: str,
        remote_uri: str,
        header: Mapping[str, str],
        on_message: Callable[["PublisherLink", bytes], None],
        on_closed: Callable[["PublisherLink"], None] | None = None,
        max_frame: int = MAX_FRAME,
    ):
        sock.settimeout(None)  # no read timeout on active topic links
        self.sock = sock
        self.topic = topic
        self.remote_uri = remote_uri
        self.header = dict(header)
        self.counters = Counters()
        self.state = LinkState.ACTIVE
        self._on_message = on_message
        self._on_closed = on_closed
        self._max_frame = max_frame
        self._closing = False
        self._thread = threading.Thread(
            target=self._reader, name=f"tcpros-pub-link:{topic}", daemon=True
        )

    def start(self) -> "PublisherLink":
        self._thread.start()
        return self

    def _reader(self) -> None:
        try:
            while not self._closing:
                payload = read_frame(self.sock, self._max_frame)
                self.counters.add(len(payload))
                self._on_message(self, payload)
        except (TransportError, OSError):
            self.state = LinkState.CLOSED if self._closing else LinkState.ERRORED
        finally:
            if self.state is LinkState.ACTIVE:
                self.state = LinkState.CLOSED
            try:
                self.sock.close()
            except OSError:
                pass
            if self._on_closed:
                self._on_closed(self)

    def close(self) -> None:
        self._closing = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass

    def join(self, timeout: float = 5.0) -> None:
        self._thread.join(timeout)


# ----------------------------------------------------------------- listener


@dataclass
class AdvertisedTopic:
    """What publisher_accept needs to know about one advertised topic."""

    type_name: str
    md5: str
    message_definition: str
    latching: bool = False
    latched_payload: bytes | None = None
    policy: QueuePolicy = field(default_factory=QueuePolicy)


def publisher_accept(
    sock: socket.socket,
    header: Mapping[str, str],
    topics: Callable[[str], AdvertisedTopic | None],
    *,
    caller_id: str,
    on_accepted: Callable[[str, SubscriberLink], None],
) -> SubscriberLink:
    """Publisher side of the topic handshake.

    Reads nothing (header already parsed by the listener); validates, replies,
    primes latched payload, registers the link via on_accepted, and starts the
    writer. On failure an ``error=`` header is sent and the socket closed.
    """
    topic = header.get("topic", "")
    info = topics(topic)
    try:
        if info is None:
            raise HandshakeRejected(f"topic {topic!r} is not advertised here")
        remote_md5 = header.get("md5sum", "")
        if remote_md5 not in ("*", info.md5):
            raise Md5Mismatch(info.md5, remote_md5)
        if header.get("tcp_nodelay", "0") == "1":
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        write_header_block(sock, {
            "md5sum": info.md5,
            "type": info.type_name,
            "callerid": caller_id,
            "latching": "1" if info.latching else "0",
            "message_definition": info.message_definition,
        })
    except (Md5Mismatch, HandshakeRejected) as e:
        reason = e.remote_error if isinstance(e, HandshakeRejected) else str(e)
        try:
            write_header_block(sock, {"error": reason})
        except TransportError:
            pass
        try:
            sock.close()
        except OSError:
            pass
        raise
    link = SubscriberLink(
        sock,
        topic=topic,
        remote_caller_id=header.get("callerid", ""),
        policy=info.policy,
    )
    # Latched payload goes in before the link becomes visible to publish(),
    # so a new subscriber sees it exactly once and before any later message.
    if info.latching and info.latched_payload is not None:
        link.offer(info.latched_payload)
    on_accepted(topic, link)
    link.start()
    return link


class TcprosListener:
    """Accepts TCPROS connections and dispatches by handshake header."""

    def __init__(
        self,
        bind_address: str,
        *,
        on_topic: Callable[[dict[str, str], socket.socket], None],
        on_service: Callable[[dict[str, str], socket.socket], None],
        handshake_timeout: float = HANDSHAKE_TIMEOUT,
    ):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((bind_address, 0))
        self._sock.listen(64)
        # Poll so close() reliably stops the accept loop; a close() alone
        # does not wake a thread blocked in accept().
        self._sock.settimeout(0.2)
        self._on_topic = on_topic
        self._on_service = on_service
        self._timeout = handshake_timeout
        self._closed = False
        self._thread = threading.Thread(target=self._accept_loop, name="tcpros-listener", daemon=True)

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def start(self) -> "TcprosListener":
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
                target=self._handshake, args=(conn,), name="tcpros-handshake", daemon=True
            ).start()

    def _handshake(self, conn: socket.socket) -> None:
        try:
            header = read_header_block(conn, self._timeout)
        except (TransportError, OSError, socket.timeout, struct.error):
            try:
                conn.close()
            except OSError:
                pass
            return
        try:
            if "topic" in header:
                self._on_topic(header, conn)
            elif "service" in header:
                self._on_service(header, conn)
            else:
                write_header_block(conn, {"error": "header carries neither topic nor service"})
                conn.close()
        except (TransportError, OSError):
            try:
                conn.close()
            except OSError:
                pass

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        self._thread.join(timeout=5)
