import pytest

from bubblelab.mockserver import MockChatServer


@pytest.fixture
def mock_server():
    """Factory for scripted chat servers; stops them all at teardown."""
    servers = []

    def start(script: dict) -> MockChatServer:
        server = MockChatServer(script).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()
