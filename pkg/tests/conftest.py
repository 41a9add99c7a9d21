import socket
import threading

import pytest

from rosmini.msgs import SchemaRegistry


@pytest.fixture(scope="session")
def registry():
    return SchemaRegistry()


@pytest.fixture
def free_port():
    def get():
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            return s.getsockname()[1]

    return get


@pytest.fixture(autouse=True)
def _no_thread_leaks():
    before = threading.active_count()
    yield
    # Shutdown paths are asserted elsewhere; here we only catch gross leaks
    # that would otherwise poison later networking tests.
    assert threading.active_count() < before + 40
