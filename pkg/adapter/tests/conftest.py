import threading

import pytest

from model_adapter.models import LinearEchoModel
from model_adapter.server import make_server


@pytest.fixture
def bare_server():
    """Server without a model attached: health must report loading."""
    server = make_server(port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


@pytest.fixture
def echo_server(bare_server):
    server, url = bare_server
    server.state.model = LinearEchoModel()
    return server, url
