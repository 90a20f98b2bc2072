from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from walletscope.rpc import ENV_URL, JsonRpcClient, RpcError, flatten_call_frame
from walletscope.trace import MessageKind

A, B, C = "0x" + "aa" * 20, "0x" + "bb" * 20, "0x" + "cc" * 20


def test_flatten_call_frame():
    transfer = "0xa9059cbb" + "00" * 12 + "dd" * 20 + "00" * 31 + "05"
    frame = {
        "type": "CALL", "from": A, "to": B, "value": "0x1", "input": "0x12345678",
        "calls": [
            {"type": "CREATE", "from": B, "to": C, "value": "0x0", "input": "0x6080"},
            {"type": "DELEGATECALL", "from": B, "to": C, "input": transfer, "error": "revert",
             "calls": [{"type": "STATICCALL", "from": C, "to": A, "input": "0x"}]},
        ],
    }
    messages, calls = flatten_call_frame(frame, 9, "0xABC")
    assert [m.kind for m in messages] == [MessageKind.CALL, MessageKind.CREATE,
                                          MessageKind.DELEGATECALL, MessageKind.STATICCALL]
    assert [m.intra_tx_index for m in messages] == [0, 1, 2, 3]
    assert [m.success for m in messages] == [True, True, False, False]
    assert messages[0].value == 1 and str(messages[0].selector) == "12345678"
    assert messages[1].selector is None and messages[1].to == C
    assert messages[0].tx_id == "0xabc"
    (call,) = calls
    assert call.holders == ("0x" + "dd" * 20,) and call.token == C


def test_failed_create_has_no_address():
    messages, _ = flatten_call_frame({"type": "CREATE", "from": A, "to": B, "error": "oog"}, 1, "0x1")
    assert messages[0].to is None and not messages[0].success


def test_client_needs_endpoint(monkeypatch):
    monkeypatch.delenv(ENV_URL, raising=False)
    with pytest.raises(RpcError):
        JsonRpcClient()


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if req["method"] == "eth_getCode":
            body = {"jsonrpc": "2.0", "id": req["id"], "result": "0x6001"}
        else:
            body = {"jsonrpc": "2.0", "id": req["id"], "error": {"code": -32601, "message": "nope"}}
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_client_against_local_server(monkeypatch):
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        monkeypatch.setenv(ENV_URL, f"http://127.0.0.1:{server.server_port}")
        client = JsonRpcClient()
        assert client.get_code(A) == b"\x60\x01"
        with pytest.raises(RpcError):
            client.trace_block(1)
    finally:
        server.shutdown()
