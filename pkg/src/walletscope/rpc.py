"""Optional live ingestion over Ethereum JSON-RPC.

Produces the same :class:`~walletscope.trace.Message` and
:class:`~walletscope.trace.TokenCall` records as the trace files, from
``debug_traceBlockByNumber`` with the built-in ``callTracer``.
"""

from __future__ import annotations

import itertools
import json
import os
import urllib.request
from typing import Any

from .evm import from_hex, normalize_address
from .interface import Selector
from .trace import Message, MessageKind, TokenCall, holders_from_calldata

ENV_URL = "WALLETSCOPE_RPC_URL"


class RpcError(RuntimeError):
    pass


class JsonRpcClient:
    def __init__(self, url: str | None = None, timeout: float = 60.0) -> None:
        url = url or os.environ.get(ENV_URL)
        if not url:
            raise RpcError(f"no RPC endpoint; pass a URL or set {ENV_URL}")
        self.url = url
        self.timeout = timeout
        self._ids = itertools.count(1)

    def call(self, method: str, *params: Any) -> Any:
        body = json.dumps(
            {"jsonrpc": "2.0", "id": next(self._ids), "method": method, "params": list(params)}
        ).encode()
        req = urllib.request.Request(self.url, body, {"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            reply = json.load(resp)
        if reply.get("error"):
            raise RpcError(f"{method}: {reply['error']}")
        return reply.get("result")

    def get_code(self, address: str, block: int | str = "latest") -> bytes:
        tag = hex(block) if isinstance(block, int) else block
        return from_hex(self.call("eth_getCode", normalize_address(address), tag) or "0x")

    def trace_block(self, number: int) -> list[dict]:
        return self.call("debug_traceBlockByNumber", hex(number), {"tracer": "callTracer"})

    def block_messages(self, number: int) -> tuple[list[Message], list[TokenCall]]:
        block = self.call("eth_getBlockByNumber", hex(number), False)
        traces = self.trace_block(number)
        messages: list[Message] = []
        calls: list[TokenCall] = []
        for tx_hash, item in zip(block["transactions"], traces):
            frame = item.get("result", item)
            m, c = flatten_call_frame(frame, number, tx_hash)
            messages.extend(m)
            calls.extend(c)
        return messages, calls


_KINDS = {
    "CREATE": MessageKind.CREATE,
    "CREATE2": MessageKind.CREATE2,
    "CALL": MessageKind.CALL,
    "CALLCODE": MessageKind.CALL,
    "DELEGATECALL": MessageKind.DELEGATECALL,
    "STATICCALL": MessageKind.STATICCALL,
    "SELFDESTRUCT": MessageKind.SELFDESTRUCT,
}


def flatten_call_frame(
    frame: dict, block: int, tx_id: str
) -> tuple[list[Message], list[TokenCall]]:
    """Pre-order walk of a callTracer frame tree.

    A frame fails if it reports an error or any enclosing frame does, since a
    revert undoes everything beneath it.
    """
    messages: list[Message] = []
    calls: list[TokenCall] = []
    tx_id = tx_id.lower()

    def walk(node: dict, parent_ok: bool) -> None:
        kind = _KINDS.get(node.get("type", "").upper())
        ok = parent_ok and not node.get("error")
        if kind is not None:
            data = from_hex(node.get("input") or "0x")
            to = node.get("to")
            is_call = not kind.creates and kind is not MessageKind.SELFDESTRUCT
            messages.append(
                Message(
                    block=block,
                    tx_id=tx_id,
                    intra_tx_index=len(messages),
                    kind=kind,
                    sender=normalize_address(node["from"]),
                    to=normalize_address(to) if to and (ok or not kind.creates) else None,
                    value=int(node.get("value") or "0x0", 16),
                    selector=Selector(data[:4]) if is_call and len(data) >= 4 else None,
                    success=ok,
                )
            )
            decoded = holders_from_calldata(data) if is_call and to else None
            if decoded is not None:
                calls.append(TokenCall(block, tx_id, normalize_address(to), *decoded))
        for child in node.get("calls", ()):
            walk(child, ok)

    walk(frame, True)
    return messages, calls
