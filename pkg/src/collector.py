"""
Cursor Collector
Steps the cursor through a document one position at a time, measuring each
stop over the bridge and writing a collection JSONL file
"""

import asyncio
import contextlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger

from bridge_server import BridgeServer
from core_model import CursorRecord, DatasetHeader, TruncationMarker, WindowGeometry
from dataset_manager import CollectionWriter
from errors import (BridgeStartupError, BridgeTimeoutError, BridgeTransportError,
                    InvalidArgumentError, RendererError)
from renderer import RendererClient, SimulatedRenderer
from synth_editor import EditorLayout, prepare_text, render

METADATA_ATTEMPTS = 3


@dataclass
class CollectorConfig:
    host: str = '127.0.0.1'
    port: int = 54321
    settle_delay_ms: int = 80
    request_timeout_ms: int = 3000
    eof_repeat_threshold: int = 3
    max_restarts: int = 1
    reconnect_timeout_ms: Optional[int] = None
    output_dir: str = 'data/collections'
    window_geometry: Tuple[float, float, float, float] = (0, 0, 1344, 1344)
    device_pixel_ratio: float = 1.0
    fault_rate: float = 0.0
    fault_seed: Optional[int] = None

    def __post_init__(self):
        if self.settle_delay_ms <= 0 or self.request_timeout_ms <= 0:
            raise InvalidArgumentError("settle_delay_ms and request_timeout_ms must be > 0")
        if self.eof_repeat_threshold < 2:
            raise InvalidArgumentError("eof_repeat_threshold must be >= 2")
        if self.max_restarts < 0:
            raise InvalidArgumentError("max_restarts must be >= 0")
        if self.reconnect_timeout_ms is None:
            self.reconnect_timeout_ms = self.request_timeout_ms

    @classmethod
    def from_config(cls, collector_config: Dict[str, Any]) -> 'CollectorConfig':
        values = {k: v for k, v in collector_config.items() if k in cls.__dataclass_fields__}
        if 'window_geometry' in values:
            values['window_geometry'] = tuple(values['window_geometry'])
        return cls(**values)


class EditorModel:
    """Symbolic cursor over the document, kept on the host side"""

    def __init__(self, text: str):
        self.lines = text.split('\n')
        self.line = 0
        self.col = 0

    @property
    def position(self) -> Tuple[int, int]:
        return self.line, self.col

    def cursor_right(self):
        """Move one stop right, wrapping past the end of line; stays put at end of file"""
        if self.col < len(self.lines[self.line]):
            self.col += 1
        elif self.line < len(self.lines) - 1:
            self.line += 1
            self.col = 0

    def character_at(self, line: int, col: int) -> str:
        """Token after the stop: the character, "\\n" at end of line, "" at end of file"""
        if col < len(self.lines[line]):
            return self.lines[line][col]
        return '\n' if line < len(self.lines) - 1 else ''


@dataclass
class SkippedStop:
    line: int
    col: int
    reason: str


@dataclass
class CollectionResult:
    path: Path
    file_id: str
    char_count: int
    records_written: int = 0
    skipped: List[SkippedStop] = field(default_factory=list)
    truncated: bool = False
    restarts: int = 0
    error: Optional[str] = None

    @property
    def timeouts(self) -> int:
        return sum(1 for stop in self.skipped if stop.reason == 'timeout')


class CursorCollector:
    """Runs the traversal procedure for one file at a time"""

    def __init__(self, bridge: BridgeServer, config: CollectorConfig, layout: EditorLayout):
        self.bridge = bridge
        self.config = config
        self.layout = layout

    async def _header(self, text: str, file_id: str, screenshot_path: Path) -> DatasetHeader:
        for attempt in range(1, METADATA_ATTEMPTS + 1):
            try:
                metadata = await self.bridge.request('get_window_metadata')
                break
            except (BridgeTimeoutError, RendererError) as e:
                if attempt == METADATA_ATTEMPTS:
                    raise
                logger.warning(f"{file_id}: window metadata attempt {attempt}/{METADATA_ATTEMPTS} failed: {e}")
        return DatasetHeader(
            file_content=text,
            char_count=len(text),
            font_family=metadata.get('font_family', self.layout.font_family),
            font_size=metadata.get('font_size', self.layout.font_size),
            line_height=metadata.get('line_height', self.layout.line_height),
            settle_delay_ms=self.config.settle_delay_ms,
            window_geometry=WindowGeometry(*metadata['window_geometry']),
            screenshot_path=str(screenshot_path),
            timestamp=datetime.now(timezone.utc).isoformat(),
            file_id=file_id,
            device_pixel_ratio=metadata.get('device_pixel_ratio', 1.0),
        )

    async def _measure(self, model: EditorModel, file_id: str) -> CursorRecord:
        line, col = model.position
        result = await self.bridge.request('get_cursor_position', {'line': line, 'col': col})
        return CursorRecord(
            file_id=file_id,
            line=line,
            col=col,
            character=model.character_at(line, col),
            screen_x=result['screen_x'],
            screen_y=result['screen_y'],
            window_x=result['window_x'],
            window_y=result['window_y'],
            cursor_width=result['cursor_width'],
            cursor_height=result['cursor_height'],
            device_pixel_ratio=result['device_pixel_ratio'],
        )

    async def _traverse(self, text: str, output_path: Path, result: CollectionResult, header: DatasetHeader):
        settle_s = self.config.settle_delay_ms / 1000.0
        model = EditorModel(text)
        previous = None
        repeats = 0

        with CollectionWriter(output_path, header) as writer:
            try:
                while True:
                    await asyncio.sleep(settle_s)
                    position = model.position
                    if position == previous:
                        repeats += 1
                    else:
                        previous, repeats = position, 1
                        try:
                            writer.write_record(await self._measure(model, result.file_id))
                        except RendererError as e:
                            result.skipped.append(SkippedStop(*position, reason='fault'))
                            logger.warning(f"{result.file_id} {position}: {e}; skipping")
                        except BridgeTimeoutError as e:
                            result.skipped.append(SkippedStop(*position, reason='timeout'))
                            logger.warning(f"{result.file_id} {position}: {e}; skipping")
                    if repeats >= self.config.eof_repeat_threshold:
                        break
                    model.cursor_right()
            except BridgeTransportError as e:
                writer.write_truncation(TruncationMarker(reason=str(e), last_line=previous[0] if previous else None,
                                                         last_col=previous[1] if previous else None))
                raise
            finally:
                result.records_written = writer.records_written

    async def collect_file(self, text: str, output_path: Union[str, Path], file_id: str,
                           screenshot_path: Optional[Union[str, Path]] = None) -> CollectionResult:
        """
        Collect every cursor stop of a document

        Args:
            text: Document text, as loaded into the renderer
            output_path: Collection JSONL to write
            file_id: Identifier stored in every record
            screenshot_path: Where the rendered document image goes (default: next to the JSONL)

        Returns:
            CollectionResult; a lost renderer leaves a truncated file unless a restart succeeds, and a
            renderer that never answers the window metadata request leaves no file and sets error
        """
        output_path = Path(output_path)
        screenshot_path = Path(screenshot_path) if screenshot_path else output_path.with_suffix('.png')
        screenshot_path.parent.mkdir(parents=True, exist_ok=True)
        render(text, self.layout).save(screenshot_path, format='PNG')

        restarts = 0
        while True:
            result = CollectionResult(path=output_path, file_id=file_id, char_count=len(text), restarts=restarts)
            header = None
            try:
                header = await self._header(text, file_id, screenshot_path)
                await self._traverse(text, output_path, result, header)
                logger.info(f"{file_id}: {result.records_written} records, {len(result.skipped)} skipped stops "
                            f"-> {output_path}")
                return result
            except BridgeTransportError as e:
                logger.error(f"{file_id}: bridge failure: {e}")
                if restarts < self.config.max_restarts and \
                        await self.bridge.wait_for_client(self.config.reconnect_timeout_ms / 1000.0):
                    restarts += 1
                    logger.warning(f"{file_id}: renderer reconnected, restarting the file ({restarts}/"
                                   f"{self.config.max_restarts})")
                    continue
                if header is None:
                    raise
                result.truncated = True
                logger.warning(f"{file_id}: partial file kept with a truncation marker")
                return result
            except (BridgeTimeoutError, RendererError) as e:
                result.error = str(e)
                logger.error(f"{file_id}: no window metadata, file skipped: {e}")
                return result


async def run_collection(config: CollectorConfig, layout: EditorLayout, corpus: Sequence[Union[str, Path]],
                         output_dir: Union[str, Path], **renderer_options) -> List[CollectionResult]:
    """
    Serve the bridge, attach an in-process simulated renderer and collect every corpus file

    Args:
        config: Collector parameters
        layout: Synthetic editor geometry
        corpus: Source files
        output_dir: Receives one <stem>.jsonl and <stem>.png per file
        renderer_options: Extra SimulatedRenderer arguments (fault_steps, stall_steps, stall_ms)

    Returns:
        One CollectionResult per file, in corpus order
    """
    output_dir = Path(output_dir)
    results = []
    async with BridgeServer(config.host, config.port, config.request_timeout_ms) as bridge:
        renderer = SimulatedRenderer(
            layout,
            WindowGeometry(*config.window_geometry),
            device_pixel_ratio=config.device_pixel_ratio,
            fault_rate=config.fault_rate,
            fault_seed=config.fault_seed,
            **renderer_options,
        )
        client_task = asyncio.create_task(RendererClient(renderer, bridge.url).run(reconnect=True))
        try:
            if not await bridge.wait_for_client(config.request_timeout_ms / 1000.0):
                raise BridgeStartupError("Renderer did not connect")
            collector = CursorCollector(bridge, config, layout)
            for source in corpus:
                source = Path(source)
                text = prepare_text(source.read_text(encoding='utf-8'))
                renderer.load_document(text)
                results.append(await collector.collect_file(text, output_dir / f"{source.stem}.jsonl", source.stem))
        finally:
            client_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await client_task
    return results
