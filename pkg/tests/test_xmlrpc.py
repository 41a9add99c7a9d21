import random
import socket
import threading
import xmlrpc.client as stdlib_xmlrpc

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosmini import xmlrpc


def roundtrip(value):
    return xmlrpc.decode_response_body(xmlrpc.encode_response_body(value))


def test_int_encodes_as_i4():
    body = xmlrpc.encode_call_body("m", [3])
    assert b"<value><i4>3</i4></value>" in body


def test_bool_encodes_as_boolean_1():
    body = xmlrpc.encode_call_body("m", [True])
    assert b"<boolean>1</boolean>" in body


def test_empty_string_both_forms_decode():
    assert roundtrip("") == ""
    typed = b"<?xml version='1.0'?><methodResponse><params><param><value><string></string></value></param></params></methodResponse>"
    untyped = b"<?xml version='1.0'?><methodResponse><params><param><value></value></param></params></methodResponse>"
    assert xmlrpc.decode_response_body(typed) == ""
    assert xmlrpc.decode_response_body(untyped) == ""


def test_untyped_value_is_string():
    body = b"<methodResponse><params><param><value>plain text</value></param></params></methodResponse>"
    assert xmlrpc.decode_response_body(body) == "plain text"


def test_int_tag_also_accepted():
    body = b"<methodResponse><params><param><value><int>-9</int></value></param></params></methodResponse>"
    assert xmlrpc.decode_response_body(body) == -9


def test_matches_stdlib_encoding_for_scalars():
    # reference oracle: the stdlib's own XML-RPC marshaller
    for value in (3, True, False, "hi <&> there", 2.5, [1, "a"], {"k": 7}):
        ours = xmlrpc.encode_call_body("echo", [value]).decode()
        theirs = stdlib_xmlrpc.dumps((value,), "echo")
        assert stdlib_xmlrpc.loads(ours)[0] == stdlib_xmlrpc.loads(theirs)[0]


def test_fault_decodes_to_fault_object():
    body = xmlrpc.encode_fault_body(-1, "boom & bust")
    fault = xmlrpc.decode_response_body(body)
    assert isinstance(fault, xmlrpc.Fault)
    assert fault.code == -1
    assert fault.message == "boom & bust"


def test_entities_roundtrip():
    text = "<tag> & \"quotes\" 'apos' é"
    assert roundtrip(text) == text


def test_numeric_entities_decode():
    body = b"<methodResponse><params><param><value>&#65;&#x42;</value></param></params></methodResponse>"
    assert xmlrpc.decode_response_body(body) == "AB"


def test_tree_shapes_roundtrip():
    value = [1, [2, [3, {"a": [True, ""], "b": b"\x00\xff"}]], 2.5]
    assert roundtrip(value) == value


def test_depth_limit_enforced():
    deep = "<methodResponse><params><param>"
    deep += "<value><array><data>" * 70
    deep += "<value><i4>1</i4></value>"
    deep += "</data></array></value>" * 70
    deep += "</param></params></methodResponse>"
    with pytest.raises(xmlrpc.DepthExceeded):
        xmlrpc.decode_response_body(deep.encode())


def test_double_shortest_roundtrip_representation():
    body = xmlrpc.encode_response_body(0.1).decode()
    assert "<double>0.1</double>" in body


value_strategy = st.recursive(
    st.one_of(
        st.integers(min_value=-(2**31), max_value=2**31 - 1),
        st.booleans(),
        st.text(max_size=20),
        st.floats(allow_nan=False, allow_infinity=False, width=64),
        st.binary(max_size=32),
    ),
    lambda children: st.one_of(
        st.lists(children, max_size=6),
        st.dictionaries(st.text(max_size=8), children, max_size=6),
    ),
    max_leaves=16,
)


@settings(max_examples=150, deadline=None)
@given(value_strategy)
def test_random_value_trees_roundtrip(value):
    assert roundtrip(value) == value


def test_decoder_never_crashes_on_fuzz():
    rng = random.Random(7)
    fragments = [
        b"<methodResponse>", b"<value>", b"</value>", b"<array>", b"<data>",
        b"<struct>", b"<member>", b"<name>", b"<i4>", b"1", b"&", b"&amp;",
        b"<", b">", b"\xff\xfe", b"</", b"<!--", b"?>", b" ", b"<boolean>",
    ]
    for _ in range(3000):
        blob = b"".join(rng.choice(fragments) for _ in range(rng.randrange(0, 30)))
        try:
            xmlrpc.decode_response_body(blob)
        except xmlrpc.XmlRpcError:
            pass
        try:
            xmlrpc.decode_call_body(blob)
        except xmlrpc.XmlRpcError:
            pass


# ------------------------------------------------------------- server tests


@pytest.fixture
def echo_server():
    server = xmlrpc.serve(("127.0.0.1", 0), {
        "echo": lambda params: params,
        "boom": lambda params: 1 / 0,
        "slowecho": lambda params: (threading.Event().wait(0.2), params)[1],
    })
    yield server
    server.close()


def test_server_echo(echo_server):
    result = xmlrpc.call(echo_server.uri(), "echo", [1, "two", [3.0]])
    assert result == [1, "two", [3.0]]


def test_server_unknown_method_is_fault(echo_server):
    with pytest.raises(xmlrpc.Fault) as ei:
        xmlrpc.call(echo_server.uri(), "nope", [])
    assert "method not found" in ei.value.message


def test_server_handler_exception_is_fault(echo_server):
    with pytest.raises(xmlrpc.Fault) as ei:
        xmlrpc.call(echo_server.uri(), "boom", [])
    assert "ZeroDivisionError" in ei.value.message


def test_server_accepts_any_path(echo_server):
    host, port = echo_server.bound_address
    result = xmlrpc.call(f"http://{host}:{port}/some/odd/path", "echo", ["x"])
    assert result == ["x"]


def test_two_concurrent_calls_complete(echo_server):
    results = []

    def work():
        results.append(xmlrpc.call(echo_server.uri(), "slowecho", ["a"]))

    threads = [threading.Thread(target=work) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=5)
    assert results == [["a"], ["a"]]


def test_malformed_xml_body_gets_fault_not_drop(echo_server):
    host, port = echo_server.bound_address
    body = b"<<<not xml"
    request = (
        f"POST / HTTP/1.1\r\nHost: {host}\r\nContent-Type: text/xml\r\n"
        f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
    ).encode() + body
    with socket.create_connection((host, port), timeout=5) as sock:
        sock.sendall(request)
        raw = b""
        while chunk := sock.recv(65536):
            raw += chunk
    assert raw.startswith(b"HTTP/1.1 200")
    fault = xmlrpc.decode_response(raw)
    assert isinstance(fault, xmlrpc.Fault)


def test_server_survives_http_fuzz(echo_server):
    host, port = echo_server.bound_address
    rng = random.Random(3)
    for _ in range(60):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 300)))
        try:
            with socket.create_connection((host, port), timeout=2) as sock:
                sock.sendall(blob)
                sock.shutdown(socket.SHUT_WR)
                sock.recv(65536)
        except OSError:
            pass
    # server still alive
    assert xmlrpc.call(echo_server.uri(), "echo", [1]) == [1]


def test_stdlib_client_interops_with_our_server(echo_server):
    host, port = echo_server.bound_address
    proxy = stdlib_xmlrpc.ServerProxy(f"http://{host}:{port}/")
    assert proxy.echo(5, "x") == [5, "x"]


def test_bind_error_on_taken_port(echo_server):
    host, port = echo_server.bound_address
    with socket.socket() as blocker:
        blocker.bind(("127.0.0.1", 0))
        taken = blocker.getsockname()[1]
        blocker.listen(1)
        with pytest.raises(xmlrpc.BindError):
            xmlrpc.XmlRpcServer(("127.0.0.1", taken), {})
