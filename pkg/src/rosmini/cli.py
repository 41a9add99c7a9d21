"""Operator command line over the whole stack.

Exit codes: 0 ok, 2 master unreachable, 3 handshake/type conflict,
4 timeout, 5 service failure, 6 parameter failure, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import socket
import sys
import threading
import time
from pathlib import Path
from urllib.parse import urlsplit

from . import tcpros, wire, xmlrpc
from .bridge import measure_encoding_overhead, serve_bridge, value_to_json, json_to_value
from .kinematics import FrameTree
from .msgs import SchemaRegistry, compute_md5, compute_srv_md5, dependency_text, parse_msg
from .msgs.codegen import generate_tree
from .node import (
    MasterUnreachable,
    NodeConfig,
    NodeError,
    ParamNotFound,
    RemoteFailure,
    ServiceNotFound,
    TypeConflict,
    start_node,
)

EXIT_OK = 0
EXIT_MASTER = 2
EXIT_HANDSHAKE = 3
EXIT_TIMEOUT = 4
EXIT_SERVICE = 5
EXIT_PARAM = 6
EXIT_USAGE = 64


class CliTimeout(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="rosmini", description=__doc__)
    parser.add_argument("--master-uri", default=None, help="overrides ROS_MASTER_URI")
    parser.add_argument("--host", default=None, help="advertised host, overrides ROS_HOSTNAME/ROS_IP")
    parser.add_argument("--bind", default="0.0.0.0", help="bind address for node servers")
    parser.add_argument("--json", action="store_true", help="one JSON document on stdout")
    parser.add_argument("--timeout", type=float, default=None, help="overall deadline in seconds")
    sub = parser.add_subparsers(dest="command", required=True)

    topic = sub.add_parser("topic", help="topic inspection and publication")
    topic_sub = topic.add_subparsers(dest="topic_command", required=True)
    topic_sub.add_parser("list", help="list topics known to the master")
    p = topic_sub.add_parser("type", help="print a topic's type")
    p.add_argument("topic")
    p = topic_sub.add_parser("echo", help="print messages (schema-free)")
    p.add_argument("topic")
    p.add_argument("--count", type=int, default=None, help="exit after N messages")
    p = topic_sub.add_parser("pub", help="publish a value")
    p.add_argument("topic")
    p.add_argument("type")
    p.add_argument("value", help="message value as JSON")
    p.add_argument("--rate", type=float, default=None, help="publish at HZ until interrupted")
    p.add_argument("--no-latch", action="store_true", help="disable latching for one-shot publish")
    p.add_argument("--definition-file", default=None, help=".msg text for types outside the corpus")
    p.add_argument("--duration", type=float, default=None, help="exit after S seconds")
    for name in ("hz", "bw"):
        p = topic_sub.add_parser(name, help=f"measure topic {name}")
        p.add_argument("topic")
        p.add_argument("--window", type=float, default=5.0)
        p.add_argument("--duration", type=float, default=None, help="exit after S seconds")

    node = sub.add_parser("node", help="node inspection")
    node_sub = node.add_subparsers(dest="node_command", required=True)
    node_sub.add_parser("list", help="list nodes in the graph")
    p = node_sub.add_parser("info", help="describe one node")
    p.add_argument("name")

    service = sub.add_parser("service", help="service calls")
    service_sub = service.add_subparsers(dest="service_command", required=True)
    p = service_sub.add_parser("call", help="call a service with JSON args")
    p.add_argument("name")
    p.add_argument("args", nargs="?", default="{}")
    p.add_argument("--type", dest="srv_type", default=None, help="service type (probed when omitted)")

    param = sub.add_parser("param", help="parameter server access")
    param_sub = param.add_subparsers(dest="param_command", required=True)
    p = param_sub.add_parser("get")
    p.add_argument("key")
    p = param_sub.add_parser("set")
    p.add_argument("key")
    p.add_argument("value", help="JSON value")
    param_sub.add_parser("list")
    p = param_sub.add_parser("delete")
    p.add_argument("key")

    msg = sub.add_parser("msg", help="message definition tooling")
    msg_sub = msg.add_subparsers(dest="msg_command", required=True)
    p = msg_sub.add_parser("gen", help="generate source for types")
    p.add_argument("types", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--msg-path", action="append", default=[], help="extra definition roots")
    p = msg_sub.add_parser("md5", help="print conformant md5 checksums")
    p.add_argument("types", nargs="+")
    p.add_argument("--msg-path", action="append", default=[])
    p = msg_sub.add_parser("deps", help="print concatenated dependency text")
    p.add_argument("type")
    p.add_argument("--msg-path", action="append", default=[])

    run = sub.add_parser("run", help="long-running components")
    run_sub = run.add_subparsers(dest="run_command", required=True)
    p = run_sub.add_parser("loader-service", help="asset loader service node")
    p.add_argument("--root", action="append", default=[], help="package root (repeatable)")
    p.add_argument("--name", default="/iviz/get_model")
    p.add_argument("--duration", type=float, default=None, help="exit after S seconds")
    p = run_sub.add_parser("bridge", help="websocket JSON bridge")
    p.add_argument("--port", type=int, default=9091)
    p.add_argument("--ws-bind", default="127.0.0.1")
    p.add_argument("--token", default=None)
    p.add_argument("--serve-console", action="store_true")
    p.add_argument("--console-dir", default=None)
    p.add_argument("--no-tf", action="store_true", help="skip /tf and /tf_static subscriptions")
    p.add_argument("--duration", type=float, default=None, help="exit after S seconds")

    bench = sub.add_parser("bench", help="measurements")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    p = bench_sub.add_parser("overhead", help="JSON vs binary encoding size")
    p.add_argument("--type", dest="payload", default="bytes3mb",
                   help="bytes3mb, floats1k, or a corpus type name")
    p.add_argument("--size", type=int, default=None, help="element count override")

    return parser


# --------------------------------------------------------------- formatting


def _emit(args, human_lines, payload) -> None:
    if args.json:
        json.dump(payload, sys.stdout)
        sys.stdout.write("\n")
    else:
        for line in human_lines:
            print(line)


def format_value(value, indent: int = 0) -> list[str]:
    pad = "  " * indent
    lines: list[str] = []
    if isinstance(value, dict):
        for key, item in value.items():
            if isinstance(item, dict) or (
                isinstance(item, list) and item and isinstance(item[0], dict)
            ):
                lines.append(f"{pad}{key}:")
                lines.extend(format_value(item, indent + 1))
            else:
                lines.append(f"{pad}{key}: {_scalar_text(item)}")
    elif isinstance(value, list):
        for item in value:
            if isinstance(item, dict):
                lines.append(f"{pad}-")
                lines.extend(format_value(item, indent + 1))
            else:
                lines.append(f"{pad}- {_scalar_text(item)}")
    else:
        lines.append(f"{pad}{_scalar_text(value)}")
    return lines


def _scalar_text(item) -> str:
    if isinstance(item, (bytes, bytearray)):
        preview = list(item[:16])
        suffix = f" ... ({len(item)} bytes)" if len(item) > 16 else ""
        return f"{preview}{suffix}"
    if isinstance(item, wire.RosTime) or isinstance(item, wire.RosDuration):
        return f"{{sec: {item.sec}, nsec: {item.nsec}}}"
    if isinstance(item, list):
        return json.dumps(item)
    return repr(item) if isinstance(item, str) else str(item)


# ------------------------------------------------------------ node handling


def _registry(args) -> SchemaRegistry:
    roots = getattr(args, "msg_path", [])
    return SchemaRegistry(roots)


def _node_config(args, suffix: str) -> NodeConfig:
    return NodeConfig(
        node_name=f"/rosmini_{suffix}_{os.getpid()}",
        master_uri=args.master_uri,
        advertised_host=args.host,
        bind_address=args.bind,
        call_timeout=args.timeout if args.timeout else 3.0,
    )


class _TransientNode:
    def __init__(self, args, suffix: str, registry: SchemaRegistry | None = None):
        self.node = start_node(_node_config(args, suffix), registry)

    def __enter__(self):
        return self.node

    def __exit__(self, *exc):
        self.node.shutdown()


def _wait_messages(collector, needed: int | None, deadline: float | None, stop: threading.Event):
    while not stop.is_set():
        if needed is not None and len(collector) >= needed:
            return
        if deadline is not None and time.monotonic() > deadline:
            raise CliTimeout("no (or not enough) messages before the deadline")
        time.sleep(0.02)


def _install_signal_stop() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    try:
        signal.signal(signal.SIGINT, handler)
        signal.signal(signal.SIGTERM, handler)
    except ValueError:
        pass  # not the main thread (tests); caller sets the event itself
    return stop


# ---------------------------------------------------------------- commands


def cmd_topic(args) -> int:
    if args.topic_command == "list":
        with _TransientNode(args, "cli") as node:
            pairs = node.master.get_topic_types()
        pairs.sort()
        _emit(args, [f"{t} [{ty}]" for t, ty in pairs],
              {"topics": [{"name": t, "type": ty} for t, ty in pairs]})
        return EXIT_OK
    if args.topic_command == "type":
        with _TransientNode(args, "cli") as node:
            pairs = dict(node.master.get_topic_types())
        ty = pairs.get(args.topic)
        if ty is None:
            print(f"topic {args.topic} is not known to the master", file=sys.stderr)
            return EXIT_TIMEOUT
        _emit(args, [ty], {"name": args.topic, "type": ty})
        return EXIT_OK
    if args.topic_command == "echo":
        return _cmd_echo(args)
    if args.topic_command == "pub":
        return _cmd_pub(args)
    return _cmd_rate(args)


def _cmd_echo(args) -> int:
    if args.json and args.count is None:
        print("--json echo requires --count so output stays one document", file=sys.stderr)
        return EXIT_USAGE
    stop = _install_signal_stop()
    collected: list = []
    lock = threading.Lock()

    with _TransientNode(args, "echo") as node:
        sub = None

        def on_msg(value, link):
            spec = sub.spec
            registry = sub._bundle_registry or node.registry
            encoded = value_to_json(spec, value, registry)
            with lock:
                collected.append(encoded)
                if not args.json:
                    for line in format_value(encoded):
                        print(line)
                    print("---")

        sub = node.subscribe(args.topic, "*", on_msg)
        deadline = time.monotonic() + args.timeout if args.timeout else None
        try:
            _wait_messages(collected, args.count, deadline, stop)
        except CliTimeout:
            print("timed out waiting for messages", file=sys.stderr)
            return EXIT_TIMEOUT
    if args.json:
        json.dump({"topic": args.topic, "messages": collected[: args.count]}, sys.stdout)
        sys.stdout.write("\n")
    return EXIT_OK


def _load_pub_spec(args, registry: SchemaRegistry):
    if args.definition_file:
        pkg, _, base = args.type.partition("/")
        if not base:
            raise NodeError(f"type {args.type!r} must be package/Name")
        spec = parse_msg(Path(args.definition_file).read_text(), pkg, base)
        registry.add(spec)
        return spec
    return registry.get(args.type)


def _cmd_pub(args) -> int:
    stop = _install_signal_stop()
    registry = SchemaRegistry()
    spec = _load_pub_spec(args, registry)
    try:
        payload = json.loads(args.value)
    except json.JSONDecodeError as e:
        print(f"value is not valid JSON: {e}", file=sys.stderr)
        return EXIT_USAGE
    value = json_to_value(spec, payload, registry)
    with _TransientNode(args, "pub", registry) as node:
        pub = node.advertise(args.topic, spec.full_name, latching=args.rate is None and not args.no_latch)
        deadline = time.monotonic() + args.duration if args.duration else None
        if args.rate:
            interval = 1.0 / args.rate
            next_at = time.monotonic()
            sent = 0
            while not stop.is_set():
                if deadline is not None and time.monotonic() >= deadline:
                    break
                pub.publish(value)
                sent += 1
                next_at += interval
                pause = next_at - time.monotonic()
                if pause > 0:
                    stop.wait(pause)
            _emit(args, [f"published {sent} messages"], {"published": sent})
        else:
            pub.publish(value)
            _emit(args, ["published 1 message (latched)"], {"published": 1})
            if deadline is not None:
                stop.wait(max(0.0, deadline - time.monotonic()))
            else:
                stop.wait()
    return EXIT_OK


def _cmd_rate(args) -> int:
    stop = _install_signal_stop()
    arrivals: list[float] = []
    lock = threading.Lock()
    with _TransientNode(args, args.topic_command, SchemaRegistry()) as node:
        sub = node.subscribe(args.topic, "*", lambda v, l: _note(arrivals, lock))
        started = time.monotonic()
        deadline = started + (args.duration or args.timeout or 10.0)
        first_deadline = started + (args.timeout or 10.0)
        while not stop.is_set() and time.monotonic() < deadline:
            time.sleep(0.05)
            with lock:
                have = len(arrivals)
            if have == 0 and time.monotonic() > first_deadline:
                print("no messages before the deadline", file=sys.stderr)
                return EXIT_TIMEOUT
        with lock:
            stamps = [t for t in arrivals if t >= time.monotonic() - args.window]
        total_bytes = sub.received_bytes
        if len(stamps) < 2:
            _emit(args, [f"count {len(arrivals)}; rate unavailable"],
                  {"count": len(arrivals), "rate": None})
            return EXIT_OK
        gaps = [b - a for a, b in zip(stamps, stamps[1:])]
        span = stamps[-1] - stamps[0]
        rate = (len(stamps) - 1) / span if span > 0 else 0.0
        elapsed = time.monotonic() - started
        bandwidth = total_bytes / elapsed if elapsed > 0 else 0.0
        payload = {
            "count": len(arrivals),
            "rate": rate,
            "minGap": min(gaps),
            "maxGap": max(gaps),
            "bytesPerSecond": bandwidth,
        }
        lines = [
            f"rate: {rate:.3f} Hz",
            f"min gap: {min(gaps) * 1000:.2f} ms  max gap: {max(gaps) * 1000:.2f} ms",
            f"bandwidth: {bandwidth:.0f} B/s",
            f"count: {len(arrivals)}",
        ]
        _emit(args, lines, payload)
    return EXIT_OK


def _note(arrivals: list, lock) -> None:
    with lock:
        arrivals.append(time.monotonic())


def cmd_node(args) -> int:
    with _TransientNode(args, "cli") as node:
        pubs, subs, srvs = node.master.get_system_state()
        if args.node_command == "list":
            names = sorted({n for _, nodes in pubs + subs for n in nodes} |
                           {n for _, nodes in srvs for n in nodes})
            _emit(args, names, {"nodes": names})
            return EXIT_OK
        name = args.name
        mine = {
            "publications": sorted(t for t, nodes in pubs if name in nodes),
            "subscriptions": sorted(t for t, nodes in subs if name in nodes),
            "services": sorted(s for s, nodes in srvs if name in nodes),
        }
        try:
            mine["uri"] = node.master.lookup_node(name)
        except NodeError:
            mine["uri"] = None
        lines = [f"node {name}", f"uri: {mine['uri']}"]
        for group in ("publications", "subscriptions", "services"):
            lines.append(f"{group}:")
            lines.extend(f"  {t}" for t in mine[group])
        _emit(args, lines, {"name": name, **mine})
    return EXIT_OK


def _probe_service_type(node, name: str) -> str:
    uri = node.master.lookup_service(name)
    parts = urlsplit(uri)
    sock = socket.create_connection((parts.hostname, parts.port), timeout=5)
    try:
        reply = tcpros.service_handshake(
            sock, caller_id=node.config.node_name, service=name, md5="*", probe=True
        )
    finally:
        sock.close()
    srv_type = reply.get("type", "")
    if "/" not in srv_type:
        raise ServiceNotFound(f"{name}: probe returned unusable type {srv_type!r}")
    return srv_type


def cmd_service(args) -> int:
    try:
        payload = json.loads(args.args)
    except json.JSONDecodeError as e:
        print(f"args are not valid JSON: {e}", file=sys.stderr)
        return EXIT_USAGE
    with _TransientNode(args, "svc") as node:
        srv_type = args.srv_type or _probe_service_type(node, args.name)
        srv = node.registry.get_srv(srv_type)
        request = json_to_value(srv.request, payload, node.registry)
        reply = node.call_service(args.name, request, srv, timeout=args.timeout or 30.0)
        encoded = value_to_json(srv.response, reply, node.registry)
        _emit(args, format_value(encoded), {"service": args.name, "response": encoded})
    return EXIT_OK


def cmd_param(args) -> int:
    with _TransientNode(args, "param") as node:
        if args.param_command == "get":
            value = node.param_get(args.key)
            _emit(args, format_value(value), {"key": args.key, "value": value})
        elif args.param_command == "set":
            try:
                value = json.loads(args.value)
            except json.JSONDecodeError as e:
                print(f"value is not valid JSON: {e}", file=sys.stderr)
                return EXIT_USAGE
            node.param_set(args.key, value)
            _emit(args, [f"set {args.key}"], {"key": args.key, "value": value})
        elif args.param_command == "list":
            names = node.param_names()
            _emit(args, names, {"params": names})
        else:
            node.param_delete(args.key)
            _emit(args, [f"deleted {args.key}"], {"key": args.key})
    return EXIT_OK


def cmd_msg(args) -> int:
    registry = _registry(args)
    if args.msg_command == "md5":
        rows = []
        for name in args.types:
            if _is_srv(registry, name):
                rows.append((name, compute_srv_md5(registry.get_srv(name), registry)))
            else:
                rows.append((name, compute_md5(registry.get(name), registry)))
        _emit(args, [f"{md5}  {name}" for name, md5 in rows],
              {"md5": {name: md5 for name, md5 in rows}})
        return EXIT_OK
    if args.msg_command == "deps":
        text = dependency_text(registry.get(args.type), registry)
        _emit(args, [text], {"type": args.type, "definition": text})
        return EXIT_OK
    written = generate_tree(args.types, args.out, registry)
    rel = [str(p) for p in written]
    _emit(args, rel, {"generated": rel})
    return EXIT_OK


def _is_srv(registry: SchemaRegistry, name: str) -> bool:
    try:
        registry.get_srv(name)
        return True
    except Exception:
        return False


def cmd_run(args) -> int:
    stop = _install_signal_stop()
    if args.run_command == "loader-service":
        from .assets import run_loader_service

        roots = args.root or [os.environ.get("ROSMINI_PACKAGE_PATH", ".")]
        with _TransientNode(args, "loader") as node:
            run_loader_service(node, roots, args.name)
            print(f"serving {args.name} from {roots}", flush=True)
            stop.wait(timeout=args.duration)
        return EXIT_OK

    with _TransientNode(args, "bridge") as node:
        tf_tree = None
        if not args.no_tf:
            tf_tree = FrameTree()
            node.subscribe("/tf", "tf2_msgs/TFMessage", lambda v, l: tf_tree.ingest(v))
            node.subscribe("/tf_static", "tf2_msgs/TFMessage", lambda v, l: tf_tree.ingest(v, static=True))
        static_dir = None
        if args.serve_console:
            static_dir = args.console_dir or _default_console_dir()
            if static_dir is None:
                print("no console directory found; pass --console-dir", file=sys.stderr)
                return EXIT_USAGE
        bridge = serve_bridge(
            node, (args.ws_bind, args.port),
            auth_token=args.token, tf_tree=tf_tree, static_dir=static_dir,
        )
        try:
            print(f"bridge listening on port {bridge.address[1]}", flush=True)
            stop.wait(timeout=args.duration)
        finally:
            bridge.close()
    return EXIT_OK


def _default_console_dir() -> str | None:
    here = Path.cwd()
    for candidate in (here / "frontend" / "public", here / "frontend"):
        if (candidate / "index.html").is_file():
            return str(candidate)
    return None


def cmd_bench(args) -> int:
    registry = SchemaRegistry()
    if args.payload == "bytes3mb":
        spec = registry.get("sensor_msgs/Image")
        value = wire.default_value(spec, registry)
        n = args.size or 3 * 1024 * 1024
        value["data"] = bytes(range(256)) * (n // 256) + bytes(n % 256)
        label = f"sensor_msgs/Image with {n}-byte uint8[] payload"
    elif args.payload == "floats1k":
        spec = registry.get("sensor_msgs/JointState")
        value = wire.default_value(spec, registry)
        n = args.size or 1000
        value["position"] = [i * 0.001 for i in range(n)]
        label = f"sensor_msgs/JointState with {n} float64 positions"
    else:
        spec = registry.get(args.payload)
        value = wire.default_value(spec, registry)
        label = f"{args.payload} default value"
    result = measure_encoding_overhead(spec, value, registry)
    lines = [
        label,
        f"binary: {result['binaryBytes']} bytes",
        f"json:   {result['jsonBytes']} bytes",
        f"ratio:  {result['ratio']:.4f}",
    ]
    _emit(args, lines, {"payload": args.payload, **result})
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "topic":
            code = cmd_topic(args)
        elif args.command == "node":
            code = cmd_node(args)
        elif args.command == "service":
            code = cmd_service(args)
        elif args.command == "param":
            code = cmd_param(args)
        elif args.command == "msg":
            code = cmd_msg(args)
        elif args.command == "run":
            code = cmd_run(args)
        else:
            code = cmd_bench(args)
    except MasterUnreachable as e:
        print(f"master unreachable: {e}", file=sys.stderr)
        code = EXIT_MASTER
    except (tcpros.HandshakeRejected, tcpros.Md5Mismatch, TypeConflict) as e:
        print(f"handshake failed: {e}", file=sys.stderr)
        code = EXIT_HANDSHAKE
    except (ServiceNotFound, RemoteFailure) as e:
        print(f"service failure: {e}", file=sys.stderr)
        code = EXIT_SERVICE
    except ParamNotFound as e:
        print(f"parameter failure: {e}", file=sys.stderr)
        code = EXIT_PARAM
    except (CliTimeout, TimeoutError, socket.timeout) as e:
        print(f"timed out: {e}", file=sys.stderr)
        code = EXIT_TIMEOUT
    except (xmlrpc.XmlRpcError, NodeError, wire.WireError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())
