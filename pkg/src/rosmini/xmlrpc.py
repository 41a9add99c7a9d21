"""Minimal XML-RPC client and server for the ROS master, slave, and param APIs.

Values map to plain Python: int, bool, str, float, bytes (base64 on the
wire), list (array), dict (struct). The XML parser is a purpose-built
recursive-descent parser over the XML-RPC subset; only HTTP/1.1 with
``Connection: close`` semantics is spoken.
"""

from __future__ import annotations

import base64
import socket
import socketserver
import threading
from typing import Callable, Mapping
from urllib.parse import urlsplit

MAX_BODY = 16 * 1024 * 1024
MAX_DEPTH = 64
DEFAULT_TIMEOUT = 3.0


class XmlRpcError(Exception):
    pass


class XmlSyntaxError(XmlRpcError):
    pass


class DepthExceeded(XmlSyntaxError):
    pass


class HttpError(XmlRpcError):
    def __init__(self, status: int, reason: str = ""):
        super().__init__(f"HTTP {status} {reason}".strip())
        self.status = status


class Fault(XmlRpcError):
    """A <fault> response. Returned by decode_response, raised by call()."""

    def __init__(self, code: int, message: str):
        super().__init__(f"fault {code}: {message}")
        self.code = code
        self.message = message


# ---------------------------------------------------------------- encoding

_ESCAPES = {"&": "&amp;", "<": "&lt;", ">": "&gt;"}


def _escape(text: str) -> str:
    for ch, rep in _ESCAPES.items():
        text = text.replace(ch, rep)
    return text


def _format_double(v: float) -> str:
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"cannot encode non-finite double {v!r}")
    return repr(v)


def _encode_value(v, out: list[str], depth: int = 0) -> None:
    if depth > MAX_DEPTH:
        raise ValueError("value tree too deep")
    out.append("<value>")
    if isinstance(v, bool):
        out.append(f"<boolean>{1 if v else 0}</boolean>")
    elif isinstance(v, int):
        if not -(2**31) <= v < 2**31:
            raise ValueError(f"int {v} out of 32-bit XML-RPC range")
        out.append(f"<i4>{v}</i4>")
    elif isinstance(v, float):
        out.append(f"<double>{_format_double(v)}</double>")
    elif isinstance(v, str):
        out.append(f"<string>{_escape(v)}</string>")
    elif isinstance(v, (bytes, bytearray)):
        out.append(f"<base64>{base64.b64encode(bytes(v)).decode()}</base64>")
    elif isinstance(v, (list, tuple)):
        out.append("<array><data>")
        for item in v:
            _encode_value(item, out, depth + 1)
        out.append("</data></array>")
    elif isinstance(v, dict):
        out.append("<struct>")
        for k, item in v.items():
            out.append(f"<member><name>{_escape(str(k))}</name>")
            _encode_value(item, out, depth + 1)
            out.append("</member>")
        out.append("</struct>")
    else:
        raise ValueError(f"cannot encode {type(v).__name__} as XML-RPC value")
    out.append("</value>")


def encode_call_body(method: str, params) -> bytes:
    out = [f"<?xml version=\"1.0\"?><methodCall><methodName>{_escape(method)}</methodName><params>"]
    for p in params:
        out.append("<param>")
        _encode_value(p, out)
        out.append("</param>")
    out.append("</params></methodCall>")
    return "".join(out).encode("utf-8")


def encode_response_body(value) -> bytes:
    out = ["<?xml version=\"1.0\"?><methodResponse><params><param>"]
    _encode_value(value, out)
    out.append("</param></params></methodResponse>")
    return "".join(out).encode("utf-8")


def encode_fault_body(code: int, message: str) -> bytes:
    out = ["<?xml version=\"1.0\"?><methodResponse><fault>"]
    _encode_value({"faultCode": code, "faultString": message}, out)
    out.append("</fault></methodResponse>")
    return "".join(out).encode("utf-8")


def encode_call(method: str, params, host: str = "localhost", path: str = "/") -> bytes:
    """Full HTTP/1.1 POST request carrying an XML-RPC call."""
    if not method:
        raise ValueError("method name must be non-empty")
    body = encode_call_body(method, params)
    head = (
        f"POST {path} HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        "User-Agent: rosmini-xmlrpc/0.1\r\n"
        "Content-Type: text/xml\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n"
        "\r\n"
    )
    return head.encode("ascii") + body


def encode_http_response(body: bytes, status: str = "200 OK", content_type: str = "text/xml") -> bytes:
    head = (
        f"HTTP/1.1 {status}\r\n"
        f"Content-Type: {content_type}\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n"
        "\r\n"
    )
    return head.encode("ascii") + body


# ---------------------------------------------------------------- parsing


class _Scanner:
    """Recursive-descent scanner over the XML-RPC element subset."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.depth = 0

    def error(self, reason: str) -> XmlSyntaxError:
        return XmlSyntaxError(f"offset {self.pos}: {reason}")

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def skip_prolog(self) -> None:
        self.skip_ws()
        if self.text.startswith("<?", self.pos):
            end = self.text.find("?>", self.pos)
            if end < 0:
                raise self.error("unterminated XML prolog")
            self.pos = end + 2
            self.skip_ws()

    def peek_tag(self) -> str | None:
        """Name of the next opening tag without consuming it, None otherwise."""
        save = self.pos
        self.skip_ws()
        if not self.text.startswith("<", self.pos) or self.text.startswith("</", self.pos):
            self.pos = save
            return None
        end = self.text.find(">", self.pos)
        if end < 0:
            raise self.error("unterminated tag")
        tokens = self.text[self.pos + 1:end].split()
        self.pos = save
        return tokens[0].rstrip("/") if tokens else ""

    def open_tag(self, name: str) -> None:
        self.skip_ws()
        if not self.text.startswith(f"<{name}", self.pos):
            raise self.error(f"expected <{name}>")
        end = self.text.find(">", self.pos)
        if end < 0:
            raise self.error("unterminated tag")
        self.pos = end + 1

    def try_open(self, name: str) -> bool:
        save = self.pos
        self.skip_ws()
        if self.text.startswith(f"<{name}>", self.pos) or self.text.startswith(f"<{name} ", self.pos):
            end = self.text.find(">", self.pos)
            self.pos = end + 1
            return True
        self.pos = save
        return False

    def close_tag(self, name: str) -> None:
        self.skip_ws()
        if not self.text.startswith(f"</{name}", self.pos):
            raise self.error(f"expected </{name}>")
        end = self.text.find(">", self.pos)
        if end < 0:
            raise self.error("unterminated tag")
        self.pos = end + 1

    def at_close(self, name: str) -> bool:
        save = self.pos
        self.skip_ws()
        result = self.text.startswith(f"</{name}", self.pos)
        self.pos = save
        return result

    def text_until_tag(self) -> str:
        end = self.text.find("<", self.pos)
        if end < 0:
            raise self.error("unterminated text content")
        raw = self.text[self.pos:self.pos + (end - self.pos)]
        self.pos = end
        return _decode_entities(raw, self)

    def parse_value(self):
        if self.depth >= MAX_DEPTH:
            raise DepthExceeded(f"offset {self.pos}: nesting deeper than {MAX_DEPTH}")
        self.depth += 1
        try:
            self.open_tag("value")
            if self.at_close("value"):
                self.close_tag("value")
                return ""
            tag = self.peek_tag()
            if tag is None:
                # untyped <value>text</value> decodes as string
                result = self.text_until_tag()
                self.close_tag("value")
                return result
            result = self._parse_typed(tag)
            self.close_tag("value")
            return result
        finally:
            self.depth -= 1

    def _leaf_text(self, tag: str) -> str:
        self.skip_ws()
        if self.text.startswith(f"<{tag}/>", self.pos) or self.text.startswith(f"<{tag} />", self.pos):
            self.pos = self.text.find(">", self.pos) + 1
            return ""
        self.open_tag(tag)
        raw = self.text_until_tag()
        self.close_tag(tag)
        return raw

    def _parse_typed(self, tag: str):
        if tag in ("i4", "int", "i8"):
            text = self._leaf_text(tag).strip()
            try:
                return int(text)
            except ValueError:
                raise self.error(f"bad integer {text!r}") from None
        if tag == "boolean":
            text = self._leaf_text(tag).strip()
            if text in ("1", "true"):
                return True
            if text in ("0", "false"):
                return False
            raise self.error(f"bad boolean {text!r}")
        if tag == "double":
            text = self._leaf_text(tag).strip()
            try:
                return float(text)
            except ValueError:
                raise self.error(f"bad double {text!r}") from None
        if tag == "string":
            return self._leaf_text(tag)
        if tag == "base64":
            text = self._leaf_text(tag)
            try:
                return base64.b64decode(text, validate=False)
            except Exception:
                raise self.error("bad base64 payload") from None
        if tag == "array":
            self.open_tag("array")
            self.open_tag("data")
            items = []
            while not self.at_close("data"):
                items.append(self.parse_value())
            self.close_tag("data")
            self.close_tag("array")
            return items
        if tag == "struct":
            self.open_tag("struct")
            record: dict[str, object] = {}
            while self.try_open("member"):
                self.open_tag("name")
                key = self.text_until_tag()
                self.close_tag("name")
                record[key] = self.parse_value()
                self.close_tag("member")
            self.close_tag("struct")
            return record
        raise self.error(f"unsupported value element <{tag}>")


def _decode_entities(raw: str, scanner: _Scanner) -> str:
    if "&" not in raw:
        return raw
    out = []
    i = 0
    named = {"lt": "<", "gt": ">", "amp": "&", "quot": '"', "apos": "'"}
    while i < len(raw):
        ch = raw[i]
        if ch != "&":
            out.append(ch)
            i += 1
            continue
        end = raw.find(";", i + 1)
        if end < 0 or end - i > 12:
            raise scanner.error("malformed entity")
        entity = raw[i + 1:end]
        if entity in named:
            out.append(named[entity])
        elif entity.startswith("#x") or entity.startswith("#X"):
            try:
                out.append(chr(int(entity[2:], 16)))
            except (ValueError, OverflowError):
                raise scanner.error(f"bad numeric entity &{entity};") from None
        elif entity.startswith("#"):
            try:
                out.append(chr(int(entity[1:], 10)))
            except (ValueError, OverflowError):
                raise scanner.error(f"bad numeric entity &{entity};") from None
        else:
            raise scanner.error(f"unknown entity &{entity};")
        i = end + 1
    return "".join(out)


def decode_call_body(body: bytes) -> tuple[str, list]:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError:
        raise XmlSyntaxError("request body is not valid UTF-8") from None
    s = _Scanner(text)
    s.skip_prolog()
    s.open_tag("methodCall")
    s.open_tag("methodName")
    method = s.text_until_tag()
    s.close_tag("methodName")
    params: list = []
    if s.try_open("params"):
        while s.try_open("param"):
            params.append(s.parse_value())
            s.close_tag("param")
        s.close_tag("params")
    s.close_tag("methodCall")
    return method, params


def decode_response_body(body: bytes):
    """Parse a <methodResponse>; <fault> maps to a returned Fault instance."""
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError:
        raise XmlSyntaxError("response body is not valid UTF-8") from None
    s = _Scanner(text)
    s.skip_prolog()
    s.open_tag("methodResponse")
    if s.try_open("fault"):
        info = s.parse_value()
        s.close_tag("fault")
        if not isinstance(info, dict):
            raise XmlSyntaxError("fault payload is not a struct")
        code = info.get("faultCode", -1)
        message = info.get("faultString", "")
        return Fault(int(code) if isinstance(code, (int, bool)) else -1, str(message))
    s.open_tag("params")
    s.open_tag("param")
    value = s.parse_value()
    s.close_tag("param")
    s.close_tag("params")
    s.close_tag("methodResponse")
    return value


# ---------------------------------------------------------------- HTTP


def _parse_http_head(data: bytes) -> tuple[list[str], dict[str, str], bytes]:
    head, sep, rest = data.partition(b"\r\n\r\n")
    if not sep:
        raise XmlSyntaxError("missing HTTP header terminator")
    try:
        lines = head.decode("latin-1").split("\r\n")
    except UnicodeDecodeError:  # pragma: no cover - latin-1 never fails
        raise XmlSyntaxError("undecodable HTTP head") from None
    headers: dict[str, str] = {}
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name:
            headers[name.strip().lower()] = value.strip()
    return lines[0].split(), headers, rest


def decode_response(data: bytes):
    """Decode a complete HTTP response; returns the value or a Fault."""
    status_line, headers, body = _parse_http_head(data)
    if len(status_line) < 2 or not status_line[1].isdigit():
        raise HttpError(0, "malformed status line")
    status = int(status_line[1])
    if status != 200:
        raise HttpError(status, " ".join(status_line[2:]))
    if headers.get("transfer-encoding", "").lower() == "chunked":
        raise HttpError(501, "chunked transfer encoding not supported")
    length = headers.get("content-length")
    if length is not None and length.isdigit():
        body = body[: int(length)]
    return decode_response_body(body)


def _read_until_closed(sock: socket.socket, limit: int = MAX_BODY) -> bytes:
    chunks = []
    total = 0
    while True:
        chunk = sock.recv(65536)
        if not chunk:
            break
        total += len(chunk)
        if total > limit:
            raise HttpError(413, "response too large")
        chunks.append(chunk)
    return b"".join(chunks)


def call(uri: str, method: str, params, timeout: float = DEFAULT_TIMEOUT):
    """Blocking XML-RPC call; raises Fault and HttpError, returns the value."""
    parts = urlsplit(uri)
    if parts.scheme != "http" or parts.hostname is None:
        raise ValueError(f"not an http URI: {uri!r}")
    port = parts.port or 80
    request = encode_call(method, params, host=f"{parts.hostname}:{port}", path=parts.path or "/")
    with socket.create_connection((parts.hostname, port), timeout=timeout) as sock:
        sock.sendall(request)
        raw = _read_until_closed(sock)
    result = decode_response(raw)
    if isinstance(result, Fault):
        raise result
    return result


Handler = Callable[[list], object]


class _RequestHandler(socketserver.StreamRequestHandler):
    timeout = 15.0

    def handle(self) -> None:  # one request per connection
        server: XmlRpcServer = self.server  # type: ignore[assignment]
        try:
            head = self._read_head()
            if head is None:
                return
            request_line, headers = head
            if not request_line or request_line[0].upper() != "POST":
                self.wfile.write(encode_http_response(b"only POST is supported", "405 Method Not Allowed", "text/plain"))
                return
            if headers.get("transfer-encoding", "").lower() == "chunked":
                self.wfile.write(encode_http_response(b"chunked encoding not supported", "501 Not Implemented", "text/plain"))
                return
            try:
                length = int(headers.get("content-length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self.wfile.write(encode_http_response(b"bad content length", "400 Bad Request", "text/plain"))
                return
            body = self.rfile.read(length)
            response = server.dispatch_body(body)
            self.wfile.write(encode_http_response(response))
        except (OSError, ValueError):
            pass

    def _read_head(self):
        lines: list[str] = []
        total = 0
        while True:
            chunk = self.rfile.readline(65536)
            if not chunk:
                return None
            total += len(chunk)
            if total > 64 * 1024:
                return None
            if chunk in (b"\r\n", b"\n"):
                break
            lines.append(chunk.decode("latin-1").rstrip("\r\n"))
        if not lines:
            return None
        headers: dict[str, str] = {}
        for line in lines[1:]:
            name, _, value = line.partition(":")
            if name and value:
                headers[name.strip().lower()] = value.strip()
        return lines[0].split(), headers


class XmlRpcServer(socketserver.ThreadingTCPServer):
    """Threaded XML-RPC server; accepts POSTs on any path, closes per request."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], dispatch: Mapping[str, Handler]):
        try:
            super().__init__(address, _RequestHandler)
        except OSError as e:
            raise BindError(str(e)) from None
        self.dispatch = dict(dispatch)
        self._thread: threading.Thread | None = None

    @property
    def bound_address(self) -> tuple[str, int]:
        return self.socket.getsockname()[:2]

    def uri(self, advertised_host: str | None = None) -> str:
        host, port = self.bound_address
        return f"http://{advertised_host or host}:{port}/"

    def dispatch_body(self, body: bytes) -> bytes:
        try:
            method, params = decode_call_body(body)
        except XmlRpcError as e:
            return encode_fault_body(-1, f"malformed XML-RPC request: {e}")
        handler = self.dispatch.get(method)
        if handler is None:
            return encode_fault_body(-1, "method not found")
        try:
            result = handler(params)
        except Fault as f:
            return encode_fault_body(f.code, f.message)
        except Exception as e:  # noqa: BLE001 - handler faults must not kill the server
            return encode_fault_body(-1, f"{type(e).__name__}: {e}")
        try:
            return encode_response_body(result)
        except ValueError as e:
            return encode_fault_body(-1, f"unencodable result: {e}")

    def start(self) -> "XmlRpcServer":
        self._thread = threading.Thread(target=self.serve_forever, name="xmlrpc-server", daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class BindError(XmlRpcError):
    pass


def serve(address: tuple[str, int], dispatch: Mapping[str, Handler]) -> XmlRpcServer:
    """Bind and start serving; port 0 binds an ephemeral port."""
    return XmlRpcServer(address, dispatch).start()
