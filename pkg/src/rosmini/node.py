"""ROS node runtime: master registration, slave API server, topic and service
lifecycle, publisher-set reconciliation, and parameter access.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable
from urllib.parse import urlsplit

from . import tcpros, wire, xmlrpc
from .msgs import MsgSpec, SchemaRegistry, SrvSpec, compute_md5, compute_srv_md5
from .msgs import dependency_text, parse_definition_bundle
from .tcpros import (
    AdvertisedTopic,
    PublisherLink,
    QueuePolicy,
    SubscriberLink,
    TcprosListener,
    TransportError,
)

log = logging.getLogger("rosmini.node")

DEFAULT_MASTER_URI = "http://localhost:11311"
BACKOFF_INITIAL = 0.5
BACKOFF_CAP = 8.0


class NodeError(Exception):
    pass


class MasterUnreachable(NodeError):
    pass


class MasterError(NodeError):
    def __init__(self, code: int, message: str):
        super().__init__(f"master replied code {code}: {message}")
        self.code = code
        self.status_message = message


class ParamNotFound(NodeError):
    pass


class TypeConflict(NodeError):
    pass


class ServiceNotFound(NodeError):
    pass


class RemoteFailure(NodeError):
    """Service handler on the remote side reported an error."""


def resolve_name(name: str, node_name: str) -> str:
    """Global-name resolution: '~x' is private, bare names go under '/'."""
    if not name:
        return node_name
    if name.startswith("~"):
        return node_name.rstrip("/") + "/" + name[1:]
    if name.startswith("/"):
        return name
    return "/" + name


@dataclass
class NodeConfig:
    node_name: str
    master_uri: str | None = None
    advertised_host: str | None = None
    bind_address: str = "0.0.0.0"
    offline: bool = False
    call_timeout: float = 3.0
    handshake_timeout: float = 5.0
    queue_policy: QueuePolicy = field(default_factory=QueuePolicy)

    def __post_init__(self):
        if not self.node_name.startswith("/"):
            raise ValueError("node name must be global (start with '/')")
        if self.master_uri is None:
            self.master_uri = os.environ.get("ROS_MASTER_URI", DEFAULT_MASTER_URI)
        if not self.master_uri.startswith("http://"):
            raise ValueError(f"master uri must be http: {self.master_uri!r}")
        if self.advertised_host is None:
            self.advertised_host = (
                os.environ.get("ROS_HOSTNAME") or os.environ.get("ROS_IP") or "127.0.0.1"
            )


class MasterClient:
    """Typed wrapper over the master and parameter XML-RPC API."""

    def __init__(self, uri: str, caller_id: str, timeout: float = 3.0):
        self.uri = uri
        self.caller_id = caller_id
        self.timeout = timeout

    def _call(self, method: str, params: list, *, ok_codes=(1,)):
        last_error: Exception | None = None
        for attempt in range(2):  # one retry on transport error
            try:
                reply = xmlrpc.call(self.uri, method, [self.caller_id] + params, timeout=self.timeout)
                break
            except xmlrpc.Fault as f:
                raise MasterError(-1, f.message) from None
            except (OSError, xmlrpc.HttpError, xmlrpc.XmlSyntaxError) as e:
                last_error = e
        else:
            raise MasterUnreachable(f"{method} on {self.uri}: {last_error}")
        if not isinstance(reply, list) or len(reply) != 3:
            raise MasterError(-1, f"{method}: malformed reply {reply!r}")
        code, message, payload = reply
        if code not in ok_codes:
            raise MasterError(code, str(message))
        return payload

    # registration
    def register_publisher(self, topic, topic_type, caller_api) -> list[str]:
        return self._call("registerPublisher", [topic, topic_type, caller_api])

    def unregister_publisher(self, topic, caller_api):
        return self._call("unregisterPublisher", [topic, caller_api])

    def register_subscriber(self, topic, topic_type, caller_api) -> list[str]:
        return self._call("registerSubscriber", [topic, topic_type, caller_api])

    def unregister_subscriber(self, topic, caller_api):
        return self._call("unregisterSubscriber", [topic, caller_api])

    def register_service(self, service, service_api, caller_api):
        return self._call("registerService", [service, service_api, caller_api])

    def unregister_service(self, service, service_api):
        return self._call("unregisterService", [service, service_api])

    def lookup_service(self, service) -> str:
        try:
            return self._call("lookupService", [service])
        except MasterError as e:
            raise ServiceNotFound(f"{service}: {e.status_message}") from None

    def lookup_node(self, node_name) -> str:
        return self._call("lookupNode", [node_name])

    def get_system_state(self):
        return self._call("getSystemState", [])

    def get_topic_types(self):
        return self._call("getTopicTypes", [])

    def get_published_topics(self, subgraph=""):
        return self._call("getPublishedTopics", [subgraph])

    def get_uri(self):
        return self._call("getUri", [])

    # parameters
    def set_param(self, key, value):
        self._call("setParam", [key, value])

    def get_param(self, key):
        try:
            return self._call("getParam", [key])
        except MasterError as e:
            raise ParamNotFound(f"{key}: {e.status_message}") from None

    def delete_param(self, key):
        try:
            self._call("deleteParam", [key])
        except MasterError as e:
            raise ParamNotFound(f"{key}: {e.status_message}") from None

    def has_param(self, key) -> bool:
        return bool(self._call("hasParam", [key]))

    def search_param(self, key) -> str:
        try:
            return self._call("searchParam", [key])
        except MasterError as e:
            raise ParamNotFound(f"{key}: {e.status_message}") from None

    def get_param_names(self) -> list[str]:
        return self._call("getParamNames", [])


class Publisher:
    """One advertised topic; serializes once and fans out to link queues."""

    def __init__(self, node: "NodeHandle", topic: str, spec: MsgSpec, md5: str, latching: bool):
        self.node = node
        self.topic = topic
        self.spec = spec
        self.type_name = spec.full_name
        self.md5 = md5
        self.latching = latching
        self.definition = dependency_text(spec, node.registry)
        self._lock = threading.Lock()
        self._links: list[SubscriberLink] = []
        self._latched: bytes | None = None
        self.closed = False

    def snapshot_advertised(self) -> AdvertisedTopic:
        return AdvertisedTopic(
            type_name=self.type_name,
            md5=self.md5,
            message_definition=self.definition,
            latching=self.latching,
            latched_payload=self._latched,
            policy=self.node.config.queue_policy,
        )

    def attach(self, link: SubscriberLink) -> None:
        self._links.append(link)

    def detach(self, link: SubscriberLink) -> None:
        with self._lock:
            if link in self._links:
                self._links.remove(link)

    def publish(self, value) -> int:
        """Serialize and offer to every live link; returns accepting links."""
        if isinstance(value, (bytes, bytearray)):
            data = bytes(value)
        elif hasattr(value, "serialize") and not isinstance(value, dict):
            data = value.serialize()
        else:
            data = wire.serialize(self.spec, value, self.node.registry)
        with self._lock:
            if self.latching:
                self._latched = data
            links = list(self._links)
        return sum(1 for link in links if link.offer(data))

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._links)

    def close(self) -> None:
        self.node.unadvertise(self.topic)


class Subscription:
    """One subscribed topic with its links, delivery lane, and retry state."""

    def __init__(
        self,
        node: "NodeHandle",
        topic: str,
        type_name: str,
        callback: Callable,
        queue_size: int = 256,
    ):
        self.node = node
        self.topic = topic
        self.type_name = type_name
        self.md5 = "*"
        self.spec: MsgSpec | None = None
        self._bundle_registry: SchemaRegistry | None = None
        if type_name != "*":
            self.spec = node.registry.get(type_name)
            self.md5 = compute_md5(self.spec, node.registry)
        self.callback = callback
        self.closed = False
        self._lock = threading.Lock()
        self._links: dict[str, PublisherLink] = {}
        self._desired: set[str] = set()
        self._connecting: set[str] = set()
        self._backoff: dict[str, float] = {}
        self._timers: dict[str, threading.Timer] = {}
        self._inbox: queue.Queue = queue.Queue(maxsize=queue_size)
        self.decode_errors = 0
        self.delivered = 0
        self._dispatcher = threading.Thread(
            target=self._dispatch_loop, name=f"sub-dispatch:{topic}", daemon=True
        )
        self._dispatcher.start()

    # -- reconciliation

    def update_publishers(self, uris: list[str]) -> None:
        """Reconcile live links against the reported publisher URI set."""
        with self._lock:
            if self.closed:
                return
            self._desired = set(uris)
            stale = [u for u in self._links if u not in self._desired]
            for uri in stale:
                link = self._links.pop(uri)
                link.close()
            for uri in list(self._timers):
                if uri not in self._desired:
                    self._timers.pop(uri).cancel()
                    self._backoff.pop(uri, None)
            new = [u for u in self._desired if u not in self._links]
        for uri in new:
            self._spawn_connect(uri)

    def _spawn_connect(self, uri: str) -> None:
        with self._lock:
            if self.closed or uri in self._connecting or uri in self._links:
                return
            self._connecting.add(uri)
        threading.Thread(
            target=self._connect_tracked, args=(uri,), name=f"sub-connect:{self.topic}", daemon=True
        ).start()

    def _connect_tracked(self, uri: str) -> None:
        try:
            self._connect(uri)
        finally:
            with self._lock:
                self._connecting.discard(uri)

    def _connect(self, uri: str) -> None:
        cfg = self.node.config
        try:
            payload = xmlrpc.call(
                uri, "requestTopic",
                [cfg.node_name, self.topic, [["TCPROS"]]],
                timeout=cfg.call_timeout,
            )
            if not (isinstance(payload, list) and len(payload) == 3 and payload[0] == 1):
                raise TransportError(f"requestTopic refused: {payload!r}")
            proto = payload[2]
            if not (isinstance(proto, list) and len(proto) >= 3 and proto[0] == "TCPROS"):
                raise TransportError(f"unusable protocol reply: {proto!r}")
            host, port = proto[1], int(proto[2])
            sock = socket.create_connection((host, port), timeout=cfg.handshake_timeout)
            try:
                reply = tcpros.subscriber_handshake(
                    sock,
                    caller_id=cfg.node_name,
                    topic=self.topic,
                    type_name=self.type_name if self.spec is None else self.spec.full_name,
                    md5=self.md5,
                    timeout=cfg.handshake_timeout,
                )
            except Exception:
                sock.close()
                raise
            self._adopt_schema(reply)
            link = PublisherLink(
                sock,
                topic=self.topic,
                remote_uri=uri,
                header=reply,
                on_message=self._on_link_message,
                on_closed=self._on_link_closed,
            )
            register = False
            with self._lock:
                if self.closed or uri not in self._desired or uri in self._links:
                    pass
                else:
                    self._links[uri] = link
                    self._backoff.pop(uri, None)
                    register = True
            if register:
                link.start()
            else:
                link.close()
        except (TransportError, OSError, xmlrpc.XmlRpcError, ValueError) as e:
            log.debug("connect to %s for %s failed: %s", uri, self.topic, e)
            self._schedule_retry(uri)

    def _schedule_retry(self, uri: str) -> None:
        with self._lock:
            if self.closed or uri not in self._desired:
                return
            delay = self._backoff.get(uri, BACKOFF_INITIAL)
            self._backoff[uri] = min(delay * 2, BACKOFF_CAP)
            timer = threading.Timer(delay, self._retry, args=(uri,))
            timer.daemon = True
            self._timers[uri] = timer
            timer.start()

    def _retry(self, uri: str) -> None:
        with self._lock:
            self._timers.pop(uri, None)
            if self.closed or uri not in self._desired:
                return
        self._spawn_connect(uri)

    def _adopt_schema(self, reply: dict[str, str]) -> None:
        """With a '*' subscription, build the schema from message_definition."""
        if self.spec is not None:
            return
        definition = reply.get("message_definition")
        type_name = reply.get("type")
        if not definition or not type_name or "/" not in type_name:
            raise TransportError("publisher reply lacks type/message_definition for '*' subscribe")
        frag = parse_definition_bundle(definition, type_name)
        bundle = SchemaRegistry(include_corpus=False)
        bundle.add_all(frag.values())
        spec = bundle.get(type_name)
        advertised = reply.get("md5sum", "")
        computed = compute_md5(spec, bundle)
        if advertised and advertised != "*" and advertised != computed:
            raise TransportError(
                f"message_definition hashes to {computed} but publisher advertised {advertised}"
            )
        with self._lock:
            if self.spec is None:
                self.spec = spec
                self._bundle_registry = bundle
                self.type_name = type_name

    # -- delivery

    def _on_link_message(self, link: PublisherLink, payload: bytes) -> None:
        self._inbox.put((link, payload))

    def _on_link_closed(self, link: PublisherLink) -> None:
        uri = link.remote_uri
        retry = False
        with self._lock:
            if self._links.get(uri) is link:
                del self._links[uri]
                retry = not self.closed and uri in self._desired
        if retry:
            self._schedule_retry(uri)

    def _dispatch_loop(self) -> None:
        while True:
            item = self._inbox.get()
            if item is None:
                break
            link, payload = item
            try:
                registry = self._bundle_registry or self.node.registry
                value = wire.deserialize(self.spec, payload, registry)
            except wire.WireError as e:
                self.decode_errors += 1
                log.warning("drop undecodable message on %s: %s", self.topic, e)
                continue
            self.delivered += 1
            try:
                self.callback(value, link)
            except Exception:
                log.exception("subscriber callback failed on %s", self.topic)

    @property
    def publisher_count(self) -> int:
        with self._lock:
            return len(self._links)

    @property
    def received_bytes(self) -> int:
        with self._lock:
            return sum(link.counters.bytes for link in self._links.values())

    def link_uris(self) -> list[str]:
        with self._lock:
            return list(self._links)

    def close(self) -> None:
        with self._lock:
            if self.closed:
                return
            self.closed = True
            links = list(self._links.values())
            self._links.clear()
            timers = list(self._timers.values())
            self._timers.clear()
        for timer in timers:
            timer.cancel()
        for link in links:
            link.close()
        self._inbox.put(None)
        self._dispatcher.join(timeout=5)


@dataclass
class ServiceHost:
    name: str
    srv: SrvSpec
    md5: str
    handler: Callable
    calls: int = 0


class ServiceClient:
    """Client for one service; optionally keeps a persistent connection."""

    def __init__(self, node: "NodeHandle", name: str, srv: SrvSpec, persistent: bool = False):
        self.node = node
        self.name = name
        self.srv = srv
        self.md5 = compute_srv_md5(srv, node.registry)
        self.persistent = persistent
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        uri = self.node.master.lookup_service(self.name)
        parts = urlsplit(uri)
        if parts.scheme != "rosrpc" or parts.hostname is None or parts.port is None:
            raise ServiceNotFound(f"{self.name}: unusable service uri {uri!r}")
        cfg = self.node.config
        sock = socket.create_connection((parts.hostname, parts.port), timeout=cfg.handshake_timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            tcpros.service_handshake(
                sock,
                caller_id=cfg.node_name,
                service=self.name,
                md5=self.md5,
                persistent=self.persistent,
                timeout=cfg.handshake_timeout,
            )
        except Exception:
            sock.close()
            raise
        return sock

    def call(self, request, timeout: float | None = None):
        data = wire.serialize(self.srv.request, request, self.node.registry)
        with self._lock:
            if self.persistent:
                if self._sock is None:
                    self._sock = self._connect()
                sock = self._sock
            else:
                sock = self._connect()
            try:
                ok, payload = tcpros.call_service_once(sock, data, timeout=timeout)
            except (TransportError, OSError):
                if self.persistent:
                    self._sock = None
                try:
                    sock.close()
                except OSError:
                    pass
                raise
            if not self.persistent:
                sock.close()
        if not ok:
            raise RemoteFailure(payload.decode("utf-8", errors="replace"))
        return wire.deserialize(self.srv.response, payload, self.node.registry)

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None


class NodeHandle:
    """A running node: slave server, TCPROS listener, and graph state."""

    def __init__(self, config: NodeConfig, registry: SchemaRegistry | None = None):
        self.config = config
        self.registry = registry or SchemaRegistry()
        self.master = MasterClient(config.master_uri, config.node_name, config.call_timeout)
        self._lock = threading.RLock()
        self._publications: dict[str, Publisher] = {}
        self._subscriptions: dict[str, Subscription] = {}
        self._services: dict[str, ServiceHost] = {}
        self._shutdown = False
        self._listener = TcprosListener(
            config.bind_address,
            on_topic=self._on_topic_connection,
            on_service=self._on_service_connection,
            handshake_timeout=config.handshake_timeout,
        ).start()
        try:
            self._slave = xmlrpc.serve((config.bind_address, 0), self._slave_dispatch())
        except xmlrpc.BindError:
            self._listener.close()
            raise
        if not config.offline:
            try:
                self.master.get_uri()
            except MasterUnreachable:
                self.shutdown()
                raise

    # -- identity

    @property
    def uri(self) -> str:
        host = self.config.advertised_host
        return f"http://{host}:{self._slave.bound_address[1]}/"

    @property
    def tcpros_address(self) -> tuple[str, int]:
        return self.config.advertised_host, self._listener.port

    # -- slave API

    def _slave_dispatch(self):
        return {
            "getPid": lambda p: [1, "", os.getpid()],
            "getMasterUri": lambda p: [1, "", self.config.master_uri],
            "getBusStats": lambda p: [1, "", [[], [], []]],
            "getBusInfo": lambda p: [1, "", self._bus_info()],
            "getSubscriptions": lambda p: [1, "", self._subscription_pairs()],
            "getPublications": lambda p: [1, "", self._publication_pairs()],
            "publisherUpdate": self._rpc_publisher_update,
            "paramUpdate": lambda p: [1, "", 0],
            "requestTopic": self._rpc_request_topic,
            "shutdown": self._rpc_shutdown,
        }

    def _bus_info(self):
        info = []
        conn_id = 0
        with self._lock:
            for topic, pub in self._publications.items():
                for link in list(pub._links):
                    conn_id += 1
                    info.append([conn_id, link.remote_caller_id, "o", "TCPROS", topic, True])
            for topic, sub in self._subscriptions.items():
                for uri in sub.link_uris():
                    conn_id += 1
                    info.append([conn_id, uri, "i", "TCPROS", topic, True])
        return info

    def _subscription_pairs(self):
        with self._lock:
            return [[s.topic, s.type_name] for s in self._subscriptions.values()]

    def _publication_pairs(self):
        with self._lock:
            return [[p.topic, p.type_name] for p in self._publications.values()]

    def _rpc_publisher_update(self, params):
        if len(params) != 3:
            return [-1, "expected (caller_id, topic, publishers)", 0]
        _, topic, publishers = params
        with self._lock:
            sub = self._subscriptions.get(topic)
        if sub is not None:
            sub.update_publishers([str(u) for u in publishers])
        return [1, "", 0]

    def _rpc_request_topic(self, params):
        if len(params) != 3:
            return [-1, "expected (caller_id, topic, protocols)", []]
        _, topic, protocols = params
        with self._lock:
            advertised = topic in self._publications
        if not advertised:
            return [-1, f"topic {topic!r} is not advertised by this node", []]
        for proto in protocols:
            if isinstance(proto, list) and proto and proto[0] == "TCPROS":
                host, port = self.tcpros_address
                return [1, f"ready on {host}:{port}", ["TCPROS", host, port]]
        return [-1, "no supported protocol in request", []]

    def _rpc_shutdown(self, params):
        threading.Thread(target=self.shutdown, name="slave-shutdown", daemon=True).start()
        return [1, "", 0]

    # -- TCPROS inbound

    def _on_topic_connection(self, header: dict[str, str], conn: socket.socket) -> None:
        topic = header.get("topic", "")
        with self._lock:
            pub = self._publications.get(topic)
        if pub is None:
            try:
                tcpros.publisher_accept(
                    conn, header, lambda t: None,
                    caller_id=self.config.node_name,
                    on_accepted=lambda t, l: None,
                )
            except TransportError:
                pass
            return
        # Hold the publisher lock across snapshot, latched priming, and link
        # registration so a concurrent publish can neither race the latched
        # payload nor slip a message past the not-yet-attached link.
        with pub._lock:
            if pub.closed:
                try:
                    tcpros.write_header_block(conn, {"error": f"topic {topic!r} is shutting down"})
                except TransportError:
                    pass
                conn.close()
                return
            info = pub.snapshot_advertised()

            def register(_topic: str, link: SubscriberLink, pub=pub) -> None:
                link._on_closed = pub.detach
                pub.attach(link)

            try:
                tcpros.publisher_accept(
                    conn, header, lambda t: info,
                    caller_id=self.config.node_name,
                    on_accepted=register,
                )
            except TransportError:
                pass

    def _on_service_connection(self, header: dict[str, str], conn: socket.socket) -> None:
        name = header.get("service", "")
        with self._lock:
            host = self._services.get(name)
        if host is None:
            try:
                tcpros.write_header_block(conn, {"error": f"service {name!r} is not hosted here"})
            except TransportError:
                pass
            conn.close()
            return
        remote_md5 = header.get("md5sum", "")
        if remote_md5 not in ("*", host.md5):
            try:
                tcpros.write_header_block(conn, {"error": f"md5 mismatch for {name}"})
            except TransportError:
                pass
            conn.close()
            return
        try:
            tcpros.write_header_block(conn, {
                "callerid": self.config.node_name,
                "md5sum": host.md5,
                "type": host.srv.full_name,
            })
        except TransportError:
            conn.close()
            return
        if header.get("probe") == "1":
            conn.close()
            return
        persistent = header.get("persistent") == "1"
        threading.Thread(
            target=self._service_loop,
            args=(host, conn, persistent),
            name=f"service:{name}",
            daemon=True,
        ).start()

    def _service_loop(self, host: ServiceHost, conn: socket.socket, persistent: bool) -> None:
        try:
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            while True:
                request_bytes = tcpros.read_frame(conn)
                host.calls += 1
                try:
                    request = wire.deserialize(host.srv.request, request_bytes, self.registry)
                    response = host.handler(request)
                    payload = wire.serialize(host.srv.response, response, self.registry)
                    conn.sendall(b"\x01" + len(payload).to_bytes(4, "little") + payload)
                except Exception as e:  # noqa: BLE001 - handler errors go to the peer
                    text = f"{type(e).__name__}: {e}".encode()
                    conn.sendall(b"\x00" + len(text).to_bytes(4, "little") + text)
                if not persistent:
                    break
        except (TransportError, OSError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    # -- public API: topics

    def advertise(self, topic: str, type_name: str, *, latching: bool = False) -> Publisher:
        topic = resolve_name(topic, self.config.node_name)
        spec = self.registry.get(type_name) if isinstance(type_name, str) else type_name
        md5 = compute_md5(spec, self.registry)
        with self._lock:
            self._ensure_running()
            existing = self._publications.get(topic)
            if existing is not None:
                if existing.md5 != md5:
                    raise TypeConflict(
                        f"{topic} already advertised as {existing.type_name} ({existing.md5})"
                    )
                return existing
            pub = Publisher(self, topic, spec, md5, latching)
            self._publications[topic] = pub
        if not self.config.offline:
            try:
                self.master.register_publisher(topic, spec.full_name, self.uri)
            except NodeError:
                with self._lock:
                    self._publications.pop(topic, None)
                raise
        return pub

    def unadvertise(self, topic: str) -> None:
        topic = resolve_name(topic, self.config.node_name)
        with self._lock:
            pub = self._publications.pop(topic, None)
        if pub is None:
            return
        pub.closed = True
        with pub._lock:
            links = list(pub._links)
            pub._links.clear()
        for link in links:
            link.close()
        if not self.config.offline:
            try:
                self.master.unregister_publisher(topic, self.uri)
            except NodeError as e:
                log.warning("unregisterPublisher %s failed: %s", topic, e)

    def subscribe(
        self, topic: str, type_name: str, callback: Callable, *, queue_size: int = 256
    ) -> Subscription:
        topic = resolve_name(topic, self.config.node_name)
        with self._lock:
            self._ensure_running()
            if topic in self._subscriptions:
                raise NodeError(f"already subscribed to {topic}")
            sub = Subscription(self, topic, type_name, callback, queue_size)
            self._subscriptions[topic] = sub
        if not self.config.offline:
            try:
                uris = self.master.register_subscriber(topic, sub.type_name, self.uri)
            except NodeError:
                with self._lock:
                    self._subscriptions.pop(topic, None)
                sub.close()
                raise
            sub.update_publishers([str(u) for u in uris])
        return sub

    def unsubscribe(self, topic: str) -> None:
        topic = resolve_name(topic, self.config.node_name)
        with self._lock:
            sub = self._subscriptions.pop(topic, None)
        if sub is None:
            return
        sub.close()
        if not self.config.offline:
            try:
                self.master.unregister_subscriber(topic, self.uri)
            except NodeError as e:
                log.warning("unregisterSubscriber %s failed: %s", topic, e)

    # -- public API: services

    def advertise_service(self, name: str, srv_type: str | SrvSpec, handler: Callable) -> ServiceHost:
        name = resolve_name(name, self.config.node_name)
        srv = self.registry.get_srv(srv_type) if isinstance(srv_type, str) else srv_type
        md5 = compute_srv_md5(srv, self.registry)
        host = ServiceHost(name, srv, md5, handler)
        with self._lock:
            self._ensure_running()
            if name in self._services:
                raise NodeError(f"service {name} already advertised")
            self._services[name] = host
        if not self.config.offline:
            try:
                self.master.register_service(name, self.service_uri, self.uri)
            except NodeError:
                with self._lock:
                    self._services.pop(name, None)
                raise
        return host

    def unadvertise_service(self, name: str) -> None:
        with self._lock:
            host = self._services.pop(name, None)
        if host is None:
            return
        if not self.config.offline:
            try:
                self.master.unregister_service(name, self.service_uri)
            except NodeError as e:
                log.warning("unregisterService %s failed: %s", name, e)

    @property
    def service_uri(self) -> str:
        host, port = self.tcpros_address
        return f"rosrpc://{host}:{port}"

    def service_client(self, name: str, srv_type: str | SrvSpec, *, persistent: bool = False) -> ServiceClient:
        name = resolve_name(name, self.config.node_name)
        srv = self.registry.get_srv(srv_type) if isinstance(srv_type, str) else srv_type
        return ServiceClient(self, name, srv, persistent)

    def call_service(self, name: str, request, srv_type: str | SrvSpec, timeout: float | None = None):
        """One-shot service call; lookupService resolves before the call."""
        return self.service_client(name, srv_type).call(request, timeout=timeout)

    # -- public API: parameters

    def param_get(self, key: str):
        return self.master.get_param(resolve_name(key, self.config.node_name))

    def param_set(self, key: str, value) -> None:
        self.master.set_param(resolve_name(key, self.config.node_name), value)

    def param_has(self, key: str) -> bool:
        return self.master.has_param(resolve_name(key, self.config.node_name))

    def param_delete(self, key: str) -> None:
        self.master.delete_param(resolve_name(key, self.config.node_name))

    def param_search(self, key: str) -> str:
        return self.master.search_param(key)

    def param_names(self) -> list[str]:
        return self.master.get_param_names()

    # -- lifecycle

    def _ensure_running(self) -> None:
        if self._shutdown:
            raise NodeError("node is shut down")

    def graph_state(self):
        """Local NodeGraphState snapshot: publications, subscriptions, services."""
        with self._lock:
            return {
                "publications": {
                    t: {
                        "type": p.type_name,
                        "md5": p.md5,
                        "latching": p.latching,
                        "links": p.subscriber_count,
                    }
                    for t, p in self._publications.items()
                },
                "subscriptions": {
                    t: {
                        "type": s.type_name,
                        "md5": s.md5,
                        "publishers": s.link_uris(),
                        "delivered": s.delivered,
                    }
                    for t, s in self._subscriptions.items()
                },
                "services": {n: h.srv.full_name for n, h in self._services.items()},
            }

    def shutdown(self) -> None:
        """Unregister everything, close links and servers. Idempotent."""
        with self._lock:
            if self._shutdown:
                return
            self._shutdown = True
            publications = dict(self._publications)
            subscriptions = dict(self._subscriptions)
            services = dict(self._services)
            self._publications.clear()
            self._subscriptions.clear()
            self._services.clear()
        if not self.config.offline:
            for topic in publications:
                try:
                    self.master.unregister_publisher(topic, self.uri)
                except NodeError:
                    pass
            for topic in subscriptions:
                try:
                    self.master.unregister_subscriber(topic, self.uri)
                except NodeError:
                    pass
            for name in services:
                try:
                    self.master.unregister_service(name, self.service_uri)
                except NodeError:
                    pass
        for pub in publications.values():
            pub.closed = True
            with pub._lock:
                links = list(pub._links)
                pub._links.clear()
            for link in links:
                link.close()
        for sub in subscriptions.values():
            sub.close()
        self._listener.close()
        self._slave.close()


def start_node(config: NodeConfig, registry: SchemaRegistry | None = None) -> NodeHandle:
    """Bind the slave server and TCPROS listener and verify the master."""
    return NodeHandle(config, registry)
