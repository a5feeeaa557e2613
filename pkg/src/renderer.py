"""
Simulated Renderer
Renderer side of the bridge: answers window-metadata and cursor-measurement
requests from the synthetic editor geometry, with fault injection for tests
"""

import asyncio
import json
from typing import Any, Dict, Iterable, Optional

import numpy as np
from loguru import logger
from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from core_model import WindowGeometry
from errors import InvalidArgumentError, RendererError
from synth_editor import EditorLayout, cursor_ground_truth


class SimulatedRenderer:
    """Measures the caret box of the synthetic editor"""

    def __init__(self, layout: EditorLayout, window_geometry: WindowGeometry, device_pixel_ratio: float = 1.0,
                 fault_rate: float = 0.0, fault_seed: Optional[int] = None,
                 fault_steps: Iterable[int] = (), stall_steps: Iterable[int] = (), stall_ms: int = 0):
        """
        Args:
            layout: Editor geometry the caret is measured in
            window_geometry: Window position on screen and size
            device_pixel_ratio: Reported CSS-to-physical ratio
            fault_rate: Probability a cursor measurement fails
            fault_seed: Seed for the fault draws
            fault_steps: 1-based measurement steps that always fail
            stall_steps: 1-based measurement steps answered only after stall_ms
            stall_ms: Stall length
        """
        if device_pixel_ratio <= 0:
            raise InvalidArgumentError(f"Device pixel ratio must be positive, got {device_pixel_ratio}")
        if not 0 <= fault_rate <= 1:
            raise InvalidArgumentError(f"fault_rate must be in [0, 1], got {fault_rate}")
        self.layout = layout
        self.window_geometry = window_geometry
        self.device_pixel_ratio = device_pixel_ratio
        self.fault_rate = fault_rate
        self.fault_steps = set(fault_steps)
        self.stall_steps = set(stall_steps)
        self.stall_ms = stall_ms
        self._rng = np.random.Generator(np.random.PCG64(fault_seed))
        self.lines = ['']
        self.measurements = 0
        self.injected_faults = []

    def load_document(self, text: str):
        self.lines = text.split('\n')
        self.measurements = 0
        self.injected_faults = []

    def window_metadata(self) -> Dict[str, Any]:
        return {
            'window_geometry': self.window_geometry.to_list(),
            'device_pixel_ratio': self.device_pixel_ratio,
            'font_family': self.layout.font_family,
            'font_size': self.layout.font_size,
            'line_height': self.layout.line_height,
        }

    def _should_fail(self, step: int) -> bool:
        # One draw per step keeps the fault sequence independent of fault_steps
        drawn = self.fault_rate > 0 and self._rng.random() < self.fault_rate
        return drawn or step in self.fault_steps

    def measure_cursor(self, line: int, col: int) -> Dict[str, Any]:
        """
        Caret bounding box at a cursor stop

        Returns:
            Window-relative and screen-absolute top-left, caret size and pixel ratio

        Raises:
            RendererError: injected measurement failure
        """
        self.measurements += 1
        step = self.measurements
        if self._should_fail(step):
            self.injected_faults.append((line, col))
            raise RendererError(f"Measurement failed at step {step}")

        point = cursor_ground_truth(line, col, self.layout, self.lines)
        caret = self.layout.caret_width
        window_x = point.x - caret / 2
        window_y = self.layout.origin_y + line * self.layout.line_height
        return {
            'window_x': window_x,
            'window_y': window_y,
            'screen_x': window_x + self.window_geometry.screen_x,
            'screen_y': window_y + self.window_geometry.screen_y,
            'cursor_width': caret,
            'cursor_height': self.layout.line_height,
            'device_pixel_ratio': self.device_pixel_ratio,
        }

    async def handle(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Response frame for one request frame"""
        request_id = request.get('id')
        method = request.get('method')
        payload = request.get('payload') or {}
        try:
            if method == 'get_window_metadata':
                return {'id': request_id, 'result': self.window_metadata()}
            if method == 'get_cursor_position':
                stall = (self.measurements + 1) in self.stall_steps
                result = self.measure_cursor(int(payload['line']), int(payload['col']))
                if stall:
                    await asyncio.sleep(self.stall_ms / 1000.0)
                return {'id': request_id, 'result': result}
            return {'id': request_id, 'error': f"unknown method {method!r}"}
        except (RendererError, InvalidArgumentError, KeyError, TypeError, ValueError) as e:
            return {'id': request_id, 'error': str(e)}


class RendererClient:
    """Connects a SimulatedRenderer to the bridge and serves its requests"""

    def __init__(self, renderer: SimulatedRenderer, url: str, disconnect_after: Optional[int] = None):
        """
        Args:
            renderer: The renderer answering requests
            url: Bridge address
            disconnect_after: Drop the connection after this many requests (first connection only)
        """
        self.renderer = renderer
        self.url = url
        self.disconnect_after = disconnect_after
        self.requests_seen = 0

    async def _answer(self, connection, request: Dict[str, Any]):
        response = await self.renderer.handle(request)
        try:
            await connection.send(json.dumps(response))
        except ConnectionClosed:
            pass

    async def serve_once(self):
        """Serve one connection until it closes"""
        tasks = set()
        async with connect(self.url) as connection:
            try:
                async for message in connection:
                    self.requests_seen += 1
                    if self.disconnect_after is not None and self.requests_seen > self.disconnect_after:
                        self.disconnect_after = None
                        logger.warning(f"Renderer dropping the connection after {self.requests_seen - 1} requests")
                        await connection.close()
                        break
                    # Each request in its own task so a stalled answer does not hold up the next one
                    task = asyncio.create_task(self._answer(connection, json.loads(message)))
                    tasks.add(task)
                    task.add_done_callback(tasks.discard)
            except ConnectionClosed:
                pass
        for task in list(tasks):
            task.cancel()

    async def run(self, reconnect: bool = False, retry_delay_s: float = 0.05,
                  max_connections: Optional[int] = None):
        """Serve until the bridge closes; optionally reconnect after a drop"""
        connections = 0
        while True:
            connections += 1
            try:
                await self.serve_once()
            except (OSError, ConnectionClosed) as e:
                logger.debug(f"Renderer connection ended: {e}")
            if not reconnect or (max_connections is not None and connections >= max_connections):
                return
            await asyncio.sleep(retry_delay_s)
