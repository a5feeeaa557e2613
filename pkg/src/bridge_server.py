"""
Bridge Server
Extension-host side of the loopback WebSocket bridge: one renderer client,
one request in flight, per-request timeout
"""

import asyncio
import json
from typing import Any, Dict, Optional

from loguru import logger
from websockets.asyncio.server import ServerConnection, serve
from websockets.exceptions import ConnectionClosed

from errors import (BridgeBusyError, BridgeStartupError, BridgeTimeoutError,
                    BridgeTransportError, RendererError)

METHODS = ('get_window_metadata', 'get_cursor_position')
POLICY_VIOLATION = 1008


class BridgeServer:
    """Sends requests to the renderer and waits for the matching response"""

    def __init__(self, host: str = '127.0.0.1', port: int = 54321, request_timeout_ms: int = 3000):
        """
        Args:
            host: Loopback address to bind
            port: TCP port (0 picks a free one)
            request_timeout_ms: How long a request may stay unanswered
        """
        self.host = host
        self.requested_port = port
        self.request_timeout_ms = request_timeout_ms
        self._server = None
        self._client: Optional[ServerConnection] = None
        self._connected = asyncio.Event()
        self._next_id = 0
        self._pending_id: Optional[int] = None
        self._pending: Optional[asyncio.Future] = None
        self.rejected_clients = 0
        self.stale_responses = 0

    async def __aenter__(self):
        await self.start()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()

    @property
    def port(self) -> int:
        if self._server is None:
            return self.requested_port
        return self._server.sockets[0].getsockname()[1]

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    @property
    def connected(self) -> bool:
        return self._client is not None

    @property
    def busy(self) -> bool:
        return self._pending is not None

    async def start(self):
        try:
            self._server = await serve(self._handle_client, self.host, self.requested_port)
        except OSError as e:
            raise BridgeStartupError(f"Cannot listen on {self.host}:{self.requested_port}: {e}")
        logger.info(f"Bridge listening on {self.url}")

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
            logger.info("Bridge closed")

    async def wait_for_client(self, timeout_s: float) -> bool:
        """True once a renderer is connected, False if none arrives in time"""
        try:
            await asyncio.wait_for(self._connected.wait(), timeout_s)
            return True
        except asyncio.TimeoutError:
            return False

    async def _handle_client(self, connection: ServerConnection):
        if self._client is not None:
            self.rejected_clients += 1
            logger.warning("Rejected a second renderer connection")
            await connection.close(code=POLICY_VIOLATION, reason='a renderer is already connected')
            return

        self._client = connection
        self._connected.set()
        logger.info("Renderer connected")
        try:
            async for message in connection:
                self._on_message(message)
        except ConnectionClosed:
            pass
        finally:
            self._client = None
            self._connected.clear()
            if self._pending is not None and not self._pending.done():
                self._pending.set_exception(BridgeTransportError("Renderer disconnected mid-request"))
            logger.warning("Renderer disconnected")

    def _on_message(self, message):
        try:
            response = json.loads(message)
        except (TypeError, ValueError):
            logger.warning(f"Dropped a malformed frame from the renderer: {message!r:.80}")
            return
        if self._pending is None or response.get('id') != self._pending_id or self._pending.done():
            self.stale_responses += 1
            logger.debug(f"Dropped stale response id={response.get('id')}")
            return
        self._pending.set_result(response)

    async def request(self, method: str, payload: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Send one request and wait for its response

        Args:
            method: One of METHODS
            payload: Method-specific arguments

        Returns:
            The response's result object

        Raises:
            BridgeBusyError: another request is still unanswered
            BridgeTimeoutError: no answer within request_timeout_ms (the slot is freed)
            BridgeTransportError: no renderer, or it disconnected mid-request
            RendererError: the renderer answered with an error
        """
        if method not in METHODS:
            raise ValueError(f"Unknown bridge method: {method}")
        if self._pending is not None:
            raise BridgeBusyError(f"Request {self._pending_id} is still in flight")
        client = self._client
        if client is None:
            raise BridgeTransportError("No renderer connected")

        self._next_id += 1
        request_id = self._next_id
        self._pending_id = request_id
        self._pending = asyncio.get_running_loop().create_future()
        try:
            try:
                await client.send(json.dumps({'id': request_id, 'method': method, 'payload': payload or {}}))
            except ConnectionClosed as e:
                raise BridgeTransportError(f"Renderer connection closed: {e}")
            try:
                response = await asyncio.wait_for(self._pending, self.request_timeout_ms / 1000.0)
            except asyncio.TimeoutError:
                raise BridgeTimeoutError(f"{method} (id {request_id}) timed out after {self.request_timeout_ms} ms")
        finally:
            self._pending = None
            self._pending_id = None

        if response.get('error'):
            raise RendererError(f"{method} (id {request_id}) failed: {response['error']}")
        return response.get('result') or {}
