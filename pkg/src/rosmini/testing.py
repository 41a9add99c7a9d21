"""In-process ROS master stub for tests and self-contained demos.

Implements the registration, lookup, state, and parameter APIs a node needs,
including publisherUpdate callbacks to registered subscribers. Not a
production master: no retry semantics, no persistence.
"""

from __future__ import annotations

import queue
import threading
from typing import Any

from . import xmlrpc


def _ns_ancestors(caller_id: str) -> list[str]:
    """Namespaces to search, innermost first: /a/b -> ['/a', '/']."""
    parts = [p for p in caller_id.split("/") if p]
    spaces = []
    for i in range(len(parts) - 1, -1, -1):
        spaces.append("/" + "/".join(parts[:i]))
    out = []
    for s in spaces:
        out.append(s if s != "//" else "/")
    return out or ["/"]


class MasterStub:
    """Scripted XML-RPC master. Start with start(), stop with close()."""

    def __init__(self, address: tuple[str, int] = ("127.0.0.1", 0)):
        self._lock = threading.RLock()
        self.publishers: dict[str, dict[str, str]] = {}  # topic -> {caller_id: api}
        self.subscribers: dict[str, dict[str, str]] = {}
        self.services: dict[str, tuple[str, str]] = {}  # name -> (caller_id, rosrpc uri)
        self.node_apis: dict[str, str] = {}
        self.topic_types: dict[str, str] = {}
        self.params: dict[str, Any] = {}
        self.calls: list[tuple[str, list]] = []
        self.fail_methods: set[str] = set()
        self.notify_synchronously = False
        dispatch = {
            name: self._wrap(name)
            for name in (
                "registerPublisher", "unregisterPublisher",
                "registerSubscriber", "unregisterSubscriber",
                "registerService", "unregisterService",
                "lookupService", "lookupNode",
                "getSystemState", "getTopicTypes", "getPublishedTopics",
                "getUri", "getPid",
                "setParam", "getParam", "deleteParam", "hasParam",
                "searchParam", "getParamNames",
            )
        }
        self._server = xmlrpc.XmlRpcServer(address, dispatch)
        # publisherUpdate callbacks must reach subscribers in registration
        # order or a stale short list can tear down a fresh link
        self._notifications: queue.Queue = queue.Queue()
        self._notifier = threading.Thread(target=self._notify_loop, name="master-notify", daemon=True)

    # -- lifecycle

    def start(self) -> "MasterStub":
        self._server.start()
        self._notifier.start()
        return self

    def close(self) -> None:
        self._notifications.put(None)
        self._server.close()
        if self._notifier.is_alive():
            self._notifier.join(timeout=5)

    def _notify_loop(self) -> None:
        while True:
            item = self._notifications.get()
            if item is None:
                break
            topic, subscribers, uris = item
            for api in subscribers:
                try:
                    xmlrpc.call(api, "publisherUpdate", ["/master", topic, uris], timeout=3.0)
                except Exception:
                    pass

    @property
    def uri(self) -> str:
        return self._server.uri()

    # -- plumbing

    def _wrap(self, name: str):
        method = getattr(self, "_" + name)

        def handler(params: list):
            with self._lock:
                self.calls.append((name, params))
                if name in self.fail_methods:
                    return [0, f"scripted failure of {name}", 0]
                return method(*params)

        return handler

    def _record_node(self, caller_id: str, api: str) -> None:
        self.node_apis[caller_id] = api

    def _notify_publisher_update(self, topic: str) -> None:
        subscribers = list(self.subscribers.get(topic, {}).values())
        uris = list(self.publishers.get(topic, {}).values())
        if self.notify_synchronously:
            for api in subscribers:
                try:
                    xmlrpc.call(api, "publisherUpdate", ["/master", topic, uris], timeout=3.0)
                except Exception:
                    pass
        else:
            self._notifications.put((topic, subscribers, uris))

    def push_publisher_update(self, topic: str, uris: list[str]) -> None:
        """Scripted injection: tell every subscriber this exact publisher list."""
        with self._lock:
            subscribers = list(self.subscribers.get(topic, {}).values())
        for api in subscribers:
            xmlrpc.call(api, "publisherUpdate", ["/master", topic, uris], timeout=3.0)

    # -- registration API

    def _registerPublisher(self, caller_id, topic, topic_type, caller_api):
        self.publishers.setdefault(topic, {})[caller_id] = caller_api
        self.topic_types.setdefault(topic, topic_type)
        self._record_node(caller_id, caller_api)
        subs = list(self.subscribers.get(topic, {}).values())
        self._notify_publisher_update(topic)
        return [1, f"registered {caller_id} as publisher of {topic}", subs]

    def _unregisterPublisher(self, caller_id, topic, caller_api):
        removed = 1 if self.publishers.get(topic, {}).pop(caller_id, None) else 0
        if removed:
            self._notify_publisher_update(topic)
        return [1, "", removed]

    def _registerSubscriber(self, caller_id, topic, topic_type, caller_api):
        self.subscribers.setdefault(topic, {})[caller_id] = caller_api
        if topic_type != "*":
            self.topic_types.setdefault(topic, topic_type)
        self._record_node(caller_id, caller_api)
        pubs = list(self.publishers.get(topic, {}).values())
        return [1, f"subscribed {caller_id} to {topic}", pubs]

    def _unregisterSubscriber(self, caller_id, topic, caller_api):
        removed = 1 if self.subscribers.get(topic, {}).pop(caller_id, None) else 0
        return [1, "", removed]

    def _registerService(self, caller_id, service, service_api, caller_api):
        self.services[service] = (caller_id, service_api)
        self._record_node(caller_id, caller_api)
        return [1, "", 0]

    def _unregisterService(self, caller_id, service, service_api):
        entry = self.services.get(service)
        if entry and entry[1] == service_api:
            del self.services[service]
            return [1, "", 1]
        return [1, "", 0]

    def _lookupService(self, caller_id, service):
        entry = self.services.get(service)
        if entry is None:
            return [-1, f"no provider for service {service}", ""]
        return [1, "", entry[1]]

    def _lookupNode(self, caller_id, node_name):
        api = self.node_apis.get(node_name)
        if api is None:
            return [-1, f"unknown node {node_name}", ""]
        return [1, "", api]

    # -- state API

    def _getSystemState(self, caller_id):
        pubs = [[t, sorted(m)] for t, m in sorted(self.publishers.items()) if m]
        subs = [[t, sorted(m)] for t, m in sorted(self.subscribers.items()) if m]
        srvs = [[s, [cid]] for s, (cid, _) in sorted(self.services.items())]
        return [1, "current system state", [pubs, subs, srvs]]

    def _getTopicTypes(self, caller_id):
        return [1, "", [[t, ty] for t, ty in sorted(self.topic_types.items())]]

    def _getPublishedTopics(self, caller_id, subgraph=""):
        out = [
            [t, self.topic_types.get(t, "*")]
            for t, m in sorted(self.publishers.items())
            if m and t.startswith(subgraph)
        ]
        return [1, "", out]

    def _getUri(self, caller_id):
        return [1, "", self.uri]

    def _getPid(self, caller_id):
        import os

        return [1, "", os.getpid()]

    # -- parameter API (flat key store with namespace reads)

    def _subtree(self, prefix: str):
        """Children under a namespace as a nested record, or None."""
        prefix = prefix.rstrip("/")
        tree: dict[str, Any] = {}
        for key, value in self.params.items():
            if not key.startswith(prefix + "/"):
                continue
            rest = key[len(prefix) + 1:].split("/")
            node = tree
            for part in rest[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    break
            else:
                node[rest[-1]] = value
        return tree or None

    def _setParam(self, caller_id, key, value):
        key = "/" + key.strip("/")
        if isinstance(value, dict):
            # assigning a struct writes the whole subtree
            for k in [k for k in self.params if k == key or k.startswith(key + "/")]:
                del self.params[k]
            flat: list[tuple[str, Any]] = []

            def walk(prefix: str, v):
                if isinstance(v, dict):
                    for name, child in v.items():
                        walk(f"{prefix}/{name}", child)
                else:
                    flat.append((prefix, v))

            walk(key, value)
            self.params.update(flat)
        else:
            self.params[key] = value
        return [1, "", 0]

    def _getParam(self, caller_id, key):
        key = "/" + key.strip("/") if key.strip("/") else "/"
        if key == "/":
            tree = self._subtree("")
            return [1, "", tree or {}]
        if key in self.params:
            return [1, "", self.params[key]]
        tree = self._subtree(key)
        if tree is not None:
            return [1, "", tree]
        return [-1, f"parameter [{key}] is not set", 0]

    def _deleteParam(self, caller_id, key):
        key = "/" + key.strip("/")
        doomed = [k for k in self.params if k == key or k.startswith(key + "/")]
        for k in doomed:
            del self.params[k]
        if doomed:
            return [1, "", 0]
        return [-1, f"parameter [{key}] is not set", 0]

    def _hasParam(self, caller_id, key):
        key = "/" + key.strip("/")
        present = key in self.params or self._subtree(key) is not None
        return [1, key, present]

    def _searchParam(self, caller_id, key):
        if key.startswith("/"):
            return [1, "", key] if self._hasParam(caller_id, key)[2] else [-1, "not found", 0]
        for ns in _ns_ancestors(caller_id):
            candidate = (ns.rstrip("/") + "/" + key) if ns != "/" else "/" + key
            if self._hasParam(caller_id, candidate)[2]:
                return [1, "", candidate]
        return [-1, f"no matches for {key}", 0]

    def _getParamNames(self, caller_id):
        return [1, "", sorted(self.params)]
