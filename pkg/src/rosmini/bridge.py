"""Websocket JSON bridge: exposes a node's pub/sub/service/param surface to
a browser console, with per-subscription throttling and slow-client drops.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import mimetypes
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import wire
from .kinematics import FrameTree, KinematicsError
from .msgs import MsgSpec, SchemaRegistry
from .msgs.types import FieldSpec
from .node import NodeError, NodeHandle
from .websocket import WsClosed, WsConnection, WsServer

log = logging.getLogger("rosmini.bridge")

MAX_SAFE_INT = 2**53
WRITE_QUEUE = 512


class BridgeError(Exception):
    pass


class JsonSchemaMismatch(BridgeError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path or '<root>'}: {reason}")
        self.path = path


# ------------------------------------------------------------- JSON mapping


def value_to_json(spec: MsgSpec, value: dict, registry: SchemaRegistry):
    """Message value tree to JSON-safe objects, field order preserved."""
    out = {}
    for f in spec.fields:
        out[f.name] = _field_to_json(f, value[f.name], registry)
    return out


def _field_to_json(f: FieldSpec, value, registry: SchemaRegistry):
    if f.is_array:
        if f.type.name == "uint8":
            raw = bytes(value) if not isinstance(value, (bytes, bytearray)) else bytes(value)
            return base64.b64encode(raw).decode("ascii")
        scalar = FieldSpec(f.name, f.type)
        return [_scalar_to_json(scalar, item, registry) for item in value]
    return _scalar_to_json(f, value, registry)


def _scalar_to_json(f: FieldSpec, value, registry: SchemaRegistry):
    t = f.type.name
    if not f.type.is_builtin:
        return value_to_json(registry.get(f.type.full_name), value, registry)
    if t == "bool":
        return bool(value)
    if t in ("float32", "float64"):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if t == "string":
        return value
    if t in ("time", "duration"):
        sec, nsec = value
        return {"sec": sec, "nsec": nsec}
    # integer kinds
    if abs(value) <= MAX_SAFE_INT:
        return value
    return str(value)


def json_to_value(spec: MsgSpec, payload, registry: SchemaRegistry, path: str = "") -> dict:
    """JSON object back to a conforming value; missing fields default to zero,
    unknown fields are rejected with their path.
    """
    if not isinstance(payload, dict):
        raise JsonSchemaMismatch(path, f"expected object, got {type(payload).__name__}")
    known = {f.name for f in spec.fields}
    for key in payload:
        if key not in known:
            raise JsonSchemaMismatch(f"{path}.{key}" if path else key, "unknown field")
    out = {}
    for f in spec.fields:
        fpath = f"{path}.{f.name}" if path else f.name
        if f.name not in payload:
            out[f.name] = wire.default_field(f, registry)
            continue
        out[f.name] = _json_field(f, payload[f.name], registry, fpath)
    return out


def _json_field(f: FieldSpec, payload, registry: SchemaRegistry, path: str):
    if f.is_array:
        if f.type.name == "uint8":
            if isinstance(payload, str):
                try:
                    data = base64.b64decode(payload.encode("ascii"), validate=True)
                except Exception:
                    raise JsonSchemaMismatch(path, "invalid base64") from None
            elif isinstance(payload, list):
                try:
                    data = bytes(payload)
                except (ValueError, TypeError):
                    raise JsonSchemaMismatch(path, "byte values out of range") from None
            else:
                raise JsonSchemaMismatch(path, "expected base64 string or byte list")
            if f.array_len is not None and len(data) != f.array_len:
                raise JsonSchemaMismatch(path, f"expected exactly {f.array_len} bytes")
            return data
        if not isinstance(payload, list):
            raise JsonSchemaMismatch(path, "expected array")
        if f.array_len is not None and len(payload) != f.array_len:
            raise JsonSchemaMismatch(path, f"expected exactly {f.array_len} elements")
        scalar = FieldSpec(f.name, f.type)
        return [
            _json_scalar(scalar, item, registry, f"{path}[{i}]") for i, item in enumerate(payload)
        ]
    return _json_scalar(f, payload, registry, path)


def _json_scalar(f: FieldSpec, payload, registry: SchemaRegistry, path: str):
    t = f.type.name
    if not f.type.is_builtin:
        return json_to_value(registry.get(f.type.full_name), payload, registry, path)
    if t == "bool":
        if not isinstance(payload, bool):
            raise JsonSchemaMismatch(path, "expected boolean")
        return payload
    if t in ("float32", "float64"):
        if isinstance(payload, str):
            lowered = payload.lower()
            if lowered == "nan":
                return math.nan
            if lowered == "inf":
                return math.inf
            if lowered == "-inf":
                return -math.inf
            raise JsonSchemaMismatch(path, f"bad float literal {payload!r}")
        if isinstance(payload, bool) or not isinstance(payload, (int, float)):
            raise JsonSchemaMismatch(path, "expected number")
        return float(payload)
    if t == "string":
        if not isinstance(payload, str):
            raise JsonSchemaMismatch(path, "expected string")
        return payload
    if t in ("time", "duration"):
        if not isinstance(payload, dict) or set(payload) - {"sec", "nsec"}:
            raise JsonSchemaMismatch(path, "expected {sec, nsec}")
        sec = payload.get("sec", 0)
        nsec = payload.get("nsec", 0)
        cls = wire.RosTime if t == "time" else wire.RosDuration
        return cls(int(sec), int(nsec))
    # integer kinds; decimal strings carry 64-bit values exceeding 2^53
    if isinstance(payload, str):
        try:
            return int(payload, 10)
        except ValueError:
            raise JsonSchemaMismatch(path, f"bad integer literal {payload!r}") from None
    if isinstance(payload, bool) or not isinstance(payload, int):
        if isinstance(payload, float) and payload.is_integer():
            return int(payload)
        raise JsonSchemaMismatch(path, "expected integer")
    return payload


def dump_json(payload) -> str:
    return json.dumps(payload, separators=(",", ":"), allow_nan=False)


def measure_encoding_overhead(spec: MsgSpec, value: dict, registry: SchemaRegistry) -> dict:
    """Bytes on the binary path vs the JSON path for the same value."""
    binary = len(wire.serialize(spec, value, registry))
    as_json = len(dump_json(value_to_json(spec, value, registry)).encode("utf-8"))
    return {
        "binaryBytes": binary,
        "jsonBytes": as_json,
        "ratio": (as_json / binary) if binary else math.inf,
    }


# ----------------------------------------------------------------- plumbing


class _ConnWriter:
    """Per-connection outbound lane; message frames drop when the client lags."""

    def __init__(self, conn: WsConnection):
        self.conn = conn
        self.queue: queue.Queue = queue.Queue(maxsize=WRITE_QUEUE)
        self.dropped = 0
        self._thread = threading.Thread(target=self._run, name="bridge-writer", daemon=True)
        self._thread.start()

    def send(self, payload: dict, *, droppable: bool = False) -> None:
        text = dump_json(payload)
        try:
            self.queue.put_nowait(text)
        except queue.Full:
            if droppable:
                self.dropped += 1
            else:
                try:
                    self.queue.put(text, timeout=1.0)
                except queue.Full:
                    self.dropped += 1

    def _run(self) -> None:
        while True:
            text = self.queue.get()
            if text is None:
                break
            try:
                self.conn.send_text(text)
            except WsClosed:
                break

    def stop(self) -> None:
        try:
            self.queue.put_nowait(None)
        except queue.Full:
            # drain one slot so the sentinel fits
            try:
                self.queue.get_nowait()
            except queue.Empty:
                pass
            try:
                self.queue.put_nowait(None)
            except queue.Full:
                pass
        self._thread.join(timeout=5)


class _TopicHub:
    """One node subscription fanned out to every bridge client of a topic."""

    def __init__(self, bridge: "BridgeServer", topic: str, type_name: str):
        self.bridge = bridge
        self.topic = topic
        self.listeners: dict[int, "_ClientSub"] = {}
        self.lock = threading.Lock()
        self.subscription = bridge.node.subscribe(topic, type_name, self._on_message)

    def _on_message(self, value, link) -> None:
        spec = self.subscription.spec
        registry = self.subscription._bundle_registry or self.bridge.node.registry
        encoded = value_to_json(spec, value, registry)
        stamp_ms = int(time.time() * 1000)
        with self.lock:
            listeners = list(self.listeners.values())
        for listener in listeners:
            listener.offer(encoded, stamp_ms)

    def add(self, sub: "_ClientSub") -> None:
        with self.lock:
            self.listeners[id(sub)] = sub

    def remove(self, sub: "_ClientSub") -> bool:
        """Detach; True when the hub is now empty and was torn down."""
        with self.lock:
            self.listeners.pop(id(sub), None)
            empty = not self.listeners
        return empty


class _ClientSub:
    """One client's view of a topic with throttling, latest message wins."""

    def __init__(self, session: "_Session", hub: _TopicHub, throttle_ms: int):
        self.session = session
        self.hub = hub
        self.throttle_s = max(0, throttle_ms) / 1000.0
        self._lock = threading.Lock()
        self._last_sent = 0.0
        self._pending: tuple[dict, int] | None = None
        self._timer: threading.Timer | None = None
        self.closed = False

    def offer(self, encoded: dict, stamp_ms: int) -> None:
        with self._lock:
            if self.closed:
                return
            now = time.monotonic()
            if self.throttle_s <= 0 or now - self._last_sent >= self.throttle_s:
                self._last_sent = now
                self._emit(encoded, stamp_ms)
                return
            self._pending = (encoded, stamp_ms)
            if self._timer is None:
                delay = self._last_sent + self.throttle_s - now
                self._timer = threading.Timer(delay, self._flush)
                self._timer.daemon = True
                self._timer.start()

    def _flush(self) -> None:
        with self._lock:
            self._timer = None
            if self.closed or self._pending is None:
                return
            encoded, stamp_ms = self._pending
            self._pending = None
            self._last_sent = time.monotonic()
            self._emit(encoded, stamp_ms)

    def _emit(self, encoded: dict, stamp_ms: int) -> None:
        self.session.writer.send(
            {"op": "message", "topic": self.hub.topic, "msg": encoded, "recvStampMs": stamp_ms},
            droppable=True,
        )

    def close(self) -> None:
        with self._lock:
            self.closed = True
            if self._timer is not None:
                self._timer.cancel()
                self._timer = None
            self._pending = None


@dataclass
class _Session:
    conn: WsConnection
    writer: _ConnWriter
    authed: bool
    subs: dict[str, _ClientSub]


class BridgeServer:
    """Serves the JSON op protocol over websockets for one node."""

    def __init__(
        self,
        node: NodeHandle,
        address: tuple[str, int] = ("127.0.0.1", 0),
        *,
        auth_token: str | None = None,
        tf_tree: FrameTree | None = None,
        static_dir: str | Path | None = None,
    ):
        if address[0] not in ("127.0.0.1", "localhost", "::1") and not auth_token:
            raise BridgeError("non-loopback bind requires an auth token")
        self.node = node
        self.auth_token = auth_token
        self.tf = tf_tree
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self._hubs: dict[str, _TopicHub] = {}
        self._publishers: dict[str, object] = {}
        self._hub_lock = threading.Lock()
        self._sessions: set[int] = set()
        self._session_lock = threading.Lock()
        self._server = WsServer(
            address, self._serve_connection, http_fallback=self._serve_static
        ).start()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.address

    @property
    def url(self) -> str:
        host, port = self.address
        return f"ws://{host}:{port}/"

    def subscription_count(self) -> int:
        with self._hub_lock:
            return len(self._hubs)

    # -- static console files

    def _serve_static(self, method: str, path: str, headers: dict) -> tuple[str, str, bytes]:
        if self.static_dir is None or method != "GET":
            return "404 Not Found", "text/plain", b"not found"
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not target.is_relative_to(self.static_dir) or not target.is_file():
            return "404 Not Found", "text/plain", b"not found"
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return "200 OK", content_type, target.read_bytes()

    # -- websocket sessions

    def _serve_connection(self, conn: WsConnection, path: str) -> None:
        session = _Session(conn, _ConnWriter(conn), authed=self.auth_token is None, subs={})
        with self._session_lock:
            self._sessions.add(id(session))
        try:
            while True:
                raw = conn.recv()
                if raw is None:
                    break
                if isinstance(raw, bytes):
                    session.writer.send(
                        {"op": "status", "level": "error", "text": "binary frames unsupported"}
                    )
                    continue
                try:
                    op = json.loads(raw)
                except json.JSONDecodeError as e:
                    session.writer.send({"op": "status", "level": "error", "text": f"bad JSON: {e}"})
                    continue
                if not isinstance(op, dict) or "op" not in op:
                    session.writer.send(
                        {"op": "status", "level": "error", "text": "op object required"}
                    )
                    continue
                if not self._handle_op(session, op):
                    break
        finally:
            self._teardown(session)

    def _teardown(self, session: _Session) -> None:
        for sub in list(session.subs.values()):
            self._release_sub(sub)
        session.subs.clear()
        session.writer.stop()
        try:
            session.conn.close()
        except Exception:
            pass
        with self._session_lock:
            self._sessions.discard(id(session))

    def _release_sub(self, sub: _ClientSub) -> None:
        sub.close()
        hub = sub.hub
        if hub.remove(sub):
            with self._hub_lock:
                if hub is self._hubs.get(hub.topic) and not hub.listeners:
                    del self._hubs[hub.topic]
                    try:
                        self.node.unsubscribe(hub.topic)
                    except NodeError as e:
                        log.warning("unsubscribe %s failed: %s", hub.topic, e)

    # -- op dispatch

    def _handle_op(self, session: _Session, op: dict) -> bool:
        """Returns False when the connection must close."""
        name = op.get("op")
        op_id = op.get("id")

        def error(text: str) -> None:
            reply = {"op": "status", "level": "error", "text": text}
            if op_id is not None:
                reply["id"] = op_id
            session.writer.send(reply)

        def info(text: str, **extra) -> None:
            reply = {"op": "status", "level": "info", "text": text, **extra}
            if op_id is not None:
                reply["id"] = op_id
            session.writer.send(reply)

        if not session.authed:
            if name == "auth" and op.get("token") == self.auth_token:
                session.authed = True
                info("authenticated")
                return True
            session.writer.send(
                {"op": "status", "level": "error", "text": "authentication required"}
            )
            return False

        try:
            if name == "auth":
                info("already authenticated")
            elif name == "subscribe":
                self._op_subscribe(session, op, info, error)
            elif name == "unsubscribe":
                self._op_unsubscribe(session, op, info, error)
            elif name == "advertise":
                self.node.advertise(str(op["topic"]), str(op["type"]))
                info(f"advertised {op['topic']}")
            elif name == "publish":
                self._op_publish(session, op, info, error)
            elif name == "call_service":
                self._op_call_service(session, op, error)
            elif name == "topics":
                pairs = self.node.master.get_topic_types()
                reply = {"op": "topics", "topics": [{"name": t, "type": ty} for t, ty in pairs]}
                if op_id is not None:
                    reply["id"] = op_id
                session.writer.send(reply)
            elif name == "tf_lookup":
                self._op_tf_lookup(session, op, error)
            elif name == "status":
                with self._hub_lock:
                    node_subs = len(self._hubs)
                reply = {
                    "op": "status",
                    "level": "info",
                    "text": "bridge status",
                    "subscriptions": node_subs,
                    "connectionSubscriptions": len(session.subs),
                    "drops": session.writer.dropped,
                    "tfFrames": self.tf.frames() if self.tf is not None else [],
                }
                if op_id is not None:
                    reply["id"] = op_id
                session.writer.send(reply)
            else:
                error(f"unknown op {name!r}")
        except (NodeError, BridgeError, wire.WireError, KeyError, TypeError, ValueError) as e:
            error(f"{type(e).__name__}: {e}")
        return True

    def _op_subscribe(self, session: _Session, op: dict, info, error) -> None:
        topic = str(op["topic"])
        throttle_ms = int(op.get("throttle_ms", 0))
        type_name = str(op.get("type", "*") or "*")
        if topic in session.subs:
            old = session.subs.pop(topic)
            self._release_sub(old)
        with self._hub_lock:
            hub = self._hubs.get(topic)
            if hub is None:
                hub = _TopicHub(self, topic, type_name)
                self._hubs[topic] = hub
        sub = _ClientSub(session, hub, throttle_ms)
        hub.add(sub)
        session.subs[topic] = sub
        info(f"subscribed to {topic}")

    def _op_unsubscribe(self, session: _Session, op: dict, info, error) -> None:
        topic = str(op["topic"])
        sub = session.subs.pop(topic, None)
        if sub is None:
            error(f"not subscribed to {topic}")
            return
        self._release_sub(sub)
        info(f"unsubscribed from {topic}")

    def _resolve_publisher(self, topic: str, type_name: str | None):
        with self._hub_lock:
            pub = self._publishers.get(topic)
            if pub is not None:
                return pub
        if not type_name:
            raise BridgeError(f"first publish on {topic} needs a type")
        pub = self.node.advertise(topic, type_name)
        with self._hub_lock:
            self._publishers.setdefault(topic, pub)
        return pub

    def _op_publish(self, session: _Session, op: dict, info, error) -> None:
        topic = str(op["topic"])
        pub = self._resolve_publisher(topic, op.get("type"))
        value = json_to_value(pub.spec, op.get("msg", {}), self.node.registry)
        delivered = pub.publish(value)
        if op.get("id") is not None:
            info(f"published to {topic}", delivered=delivered)

    def _op_call_service(self, session: _Session, op: dict, error) -> None:
        op_id = op.get("id")
        service = str(op["service"])
        type_name = op.get("type")
        if not type_name:
            error(f"call_service on {service} needs the service type")
            return
        srv = self.node.registry.get_srv(str(type_name))
        request = json_to_value(srv.request, op.get("args", {}), self.node.registry)
        reply = self.node.call_service(service, request, srv, timeout=30.0)
        values = value_to_json(srv.response, reply, self.node.registry)
        response = {"op": "service_response", "service": service, "ok": True, "values": values}
        if op_id is not None:
            response["id"] = op_id
        session.writer.send(response)

    def _op_tf_lookup(self, session: _Session, op: dict, error) -> None:
        if self.tf is None:
            error("bridge has no tf tree")
            return
        try:
            t = self.tf.lookup(str(op["target"]), str(op["source"]))
        except KinematicsError as e:
            error(f"{type(e).__name__}: {e}")
            return
        reply = {
            "op": "tf",
            "target": op["target"],
            "source": op["source"],
            "translation": dict(zip("xyz", t.translation)),
            "rotation": dict(zip(("x", "y", "z", "w"), t.rotation)),
        }
        if op.get("id") is not None:
            reply["id"] = op["id"]
        session.writer.send(reply)

    def close(self) -> None:
        self._server.close()
        with self._hub_lock:
            hubs = list(self._hubs.values())
            self._hubs.clear()
        for hub in hubs:
            try:
                self.node.unsubscribe(hub.topic)
            except NodeError:
                pass


def serve_bridge(
    node: NodeHandle,
    address: tuple[str, int] = ("127.0.0.1", 0),
    *,
    auth_token: str | None = None,
    tf_tree: FrameTree | None = None,
    static_dir: str | Path | None = None,
) -> BridgeServer:
    """Bind the bridge websocket server; port 0 binds an ephemeral port."""
    return BridgeServer(
        node, address, auth_token=auth_token, tf_tree=tf_tree, static_dir=static_dir
    )
