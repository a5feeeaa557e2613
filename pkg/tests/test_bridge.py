import asyncio
import contextlib
import json

import pytest
from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from bridge_server import BridgeServer
from collector import METADATA_ATTEMPTS, CollectorConfig, CursorCollector, EditorModel, run_collection
from core_model import WindowGeometry
from dataset_manager import read_collection
from errors import BridgeBusyError, BridgeStartupError, BridgeTimeoutError, BridgeTransportError, RendererError
from renderer import RendererClient, SimulatedRenderer

GEOMETRY = WindowGeometry(10, 20, 400, 300)

# 25 + 25 + 24 + 23 characters plus three newlines
HUNDRED_CHARS = '\n'.join(['abcdefghijklmnopqrstuvwxy', 'def area(w, h): return wh', 'x = [1, 2, 3]  # numbers',
                           'print(area(3, 4)) # end'])


def collector_config(**overrides):
    values = {'port': 0, 'settle_delay_ms': 1, 'request_timeout_ms': 500, 'window_geometry': GEOMETRY.to_list()}
    values.update(overrides)
    return CollectorConfig(**values)


async def collect(layout, text, tmp_path, config=None, disconnect_after=None, **renderer_options):
    config = config or collector_config()
    async with BridgeServer(config.host, config.port, config.request_timeout_ms) as bridge:
        renderer = SimulatedRenderer(layout, WindowGeometry(*config.window_geometry),
                                     fault_rate=config.fault_rate, fault_seed=config.fault_seed, **renderer_options)
        renderer.load_document(text)
        client = RendererClient(renderer, bridge.url, disconnect_after=disconnect_after)
        task = asyncio.create_task(client.run(reconnect=True))
        try:
            assert await bridge.wait_for_client(2.0)
            result = await CursorCollector(bridge, config, layout).collect_file(text, tmp_path / 'doc.jsonl', 'doc')
        finally:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task
    return result, renderer


async def with_renderer(layout, body, request_timeout_ms=500, **renderer_options):
    """Run body(bridge, renderer) with a simulated renderer attached"""
    async with BridgeServer(port=0, request_timeout_ms=request_timeout_ms) as bridge:
        renderer = SimulatedRenderer(layout, GEOMETRY, **renderer_options)
        renderer.load_document('abc\ndef')
        task = asyncio.create_task(RendererClient(renderer, bridge.url).run())
        try:
            assert await bridge.wait_for_client(2.0)
            return await body(bridge, renderer)
        finally:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task


def test_port_zero_binds_a_free_port():
    async def scenario():
        async with BridgeServer(port=0) as bridge:
            return bridge.port
    assert asyncio.run(scenario()) > 0


def test_port_in_use_is_a_startup_error():
    async def scenario():
        async with BridgeServer(port=0) as first:
            await BridgeServer(port=first.port).start()
    with pytest.raises(BridgeStartupError):
        asyncio.run(scenario())


def test_request_without_renderer_is_a_transport_error():
    async def scenario():
        async with BridgeServer(port=0) as bridge:
            await bridge.request('get_window_metadata')
    with pytest.raises(BridgeTransportError):
        asyncio.run(scenario())


def test_second_client_is_rejected_with_policy_violation():
    async def scenario():
        async with BridgeServer(port=0) as bridge:
            async with connect(bridge.url):
                assert await bridge.wait_for_client(2.0)
                async with connect(bridge.url) as second:
                    with pytest.raises(ConnectionClosed) as excinfo:
                        await second.recv()
                    return excinfo.value.rcvd.code, bridge.rejected_clients
    assert asyncio.run(scenario()) == (1008, 1)


def test_responses_are_matched_by_id():
    async def scenario():
        async with BridgeServer(port=0) as bridge:
            async with connect(bridge.url) as renderer:
                assert await bridge.wait_for_client(2.0)
                pending = asyncio.create_task(bridge.request('get_cursor_position', {'line': 0, 'col': 2}))
                frame = json.loads(await renderer.recv())
                await renderer.send(json.dumps({'id': frame['id'] + 100, 'result': {'stale': True}}))
                await renderer.send(json.dumps({'id': frame['id'], 'result': {'ok': True}}))
                return frame, await pending, bridge.stale_responses
    frame, result, stale = asyncio.run(scenario())
    assert frame['method'] == 'get_cursor_position'
    assert frame['payload'] == {'line': 0, 'col': 2}
    assert result == {'ok': True}
    assert stale == 1


def test_disconnect_mid_request_reaches_the_caller():
    async def scenario():
        async with BridgeServer(port=0) as bridge:
            renderer = await connect(bridge.url)
            assert await bridge.wait_for_client(2.0)
            pending = asyncio.create_task(bridge.request('get_cursor_position', {'line': 0, 'col': 0}))
            await renderer.recv()
            await renderer.close()
            with pytest.raises(BridgeTransportError):
                await pending
            return bridge.busy, bridge.connected
    assert asyncio.run(scenario()) == (False, False)


def test_one_request_in_flight(small_layout):
    async def body(bridge, renderer):
        first = asyncio.create_task(bridge.request('get_cursor_position', {'line': 0, 'col': 0}))
        await asyncio.sleep(0.05)
        assert bridge.busy
        with pytest.raises(BridgeBusyError):
            await bridge.request('get_window_metadata')
        return await first
    result = asyncio.run(with_renderer(small_layout, body, request_timeout_ms=2000, stall_steps=[1], stall_ms=200))
    assert result['window_y'] == small_layout.origin_y


def test_stalled_answer_times_out_and_frees_the_slot(small_layout):
    async def body(bridge, renderer):
        with pytest.raises(BridgeTimeoutError):
            await bridge.request('get_cursor_position', {'line': 0, 'col': 0})
        assert not bridge.busy
        second = await bridge.request('get_cursor_position', {'line': 0, 'col': 1})
        await asyncio.sleep(0.3)
        return second, bridge.stale_responses
    second, stale = asyncio.run(with_renderer(small_layout, body, request_timeout_ms=50,
                                              stall_steps=[1], stall_ms=200))
    assert second['window_x'] == small_layout.origin_x + small_layout.char_width - small_layout.caret_width / 2
    assert stale == 1


def test_renderer_error_reaches_the_caller(small_layout):
    async def body(bridge, renderer):
        await bridge.request('get_cursor_position', {'line': 0, 'col': 0})
    with pytest.raises(RendererError):
        asyncio.run(with_renderer(small_layout, body, fault_steps=[1]))


def test_measure_cursor_at_origin(small_layout):
    renderer = SimulatedRenderer(small_layout, GEOMETRY)
    renderer.load_document('abc')
    result = renderer.measure_cursor(0, 0)
    assert result['window_x'] == small_layout.origin_x - small_layout.caret_width / 2
    assert result['window_y'] == small_layout.origin_y
    assert result['screen_x'] == result['window_x'] + 10
    assert result['screen_y'] == result['window_y'] + 20
    assert result['cursor_height'] == small_layout.line_height


def test_pixel_ratio_is_reported_unchanged(small_layout):
    renderer = SimulatedRenderer(small_layout, GEOMETRY, device_pixel_ratio=2.0)
    renderer.load_document('abc')
    assert renderer.measure_cursor(0, 1)['device_pixel_ratio'] == 2.0
    assert renderer.window_metadata()['device_pixel_ratio'] == 2.0


def test_editor_model_walks_every_stop():
    model = EditorModel('ab\nc')
    stops = [model.position]
    for _ in range(6):
        model.cursor_right()
        stops.append(model.position)
    assert stops == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 1), (1, 1)]
    assert [model.character_at(*stop) for stop in stops[:5]] == ['a', 'b', '\n', 'c', '']


def test_two_characters_give_three_records(small_layout, tmp_path):
    result, _ = asyncio.run(collect(small_layout, 'ab', tmp_path))
    collection = read_collection(result.path)
    assert [(r.line, r.col, r.character) for r in collection.records] == [(0, 0, 'a'), (0, 1, 'b'), (0, 2, '')]
    assert collection.header.char_count == 2


def test_newline_stop_is_recorded(small_layout, tmp_path):
    result, _ = asyncio.run(collect(small_layout, 'a\nb', tmp_path))
    records = read_collection(result.path).records
    assert [r.character for r in records] == ['a', '\n', 'b', '']
    assert (records[2].line, records[2].col) == (1, 0)


def test_empty_file_gives_one_record(small_layout, tmp_path):
    result, _ = asyncio.run(collect(small_layout, '', tmp_path))
    records = read_collection(result.path).records
    assert [(r.line, r.col, r.character) for r in records] == [(0, 0, '')]


def test_full_traversal_is_complete_ordered_and_consistent(small_layout, tmp_path):
    assert len(HUNDRED_CHARS) == 100
    result, _ = asyncio.run(collect(small_layout, HUNDRED_CHARS, tmp_path))
    collection = read_collection(result.path)
    positions = [(r.line, r.col) for r in collection.records]

    assert len(positions) == collection.header.char_count + 1
    assert positions == sorted(set(positions))
    assert all(record.frame_consistent(collection.header) for record in collection.records)
    assert collection.truncation is None
    assert result.path.with_suffix('.png').exists()


def test_random_faults_leave_gaps_that_match_the_injections(small_layout, tmp_path):
    config = collector_config(fault_rate=0.1, fault_seed=17)
    result, renderer = asyncio.run(collect(small_layout, HUNDRED_CHARS, tmp_path, config))
    records = read_collection(result.path).records

    assert len(result.skipped) == len(renderer.injected_faults)
    assert len(records) + len(result.skipped) == 101
    assert {(s.line, s.col) for s in result.skipped} == set(renderer.injected_faults)


def test_fault_at_one_step_is_logged_and_skipped(small_layout, tmp_path):
    result, _ = asyncio.run(collect(small_layout, 'abcd', tmp_path, fault_steps=[3]))
    records = read_collection(result.path).records
    assert [(s.line, s.col, s.reason) for s in result.skipped] == [(0, 2, 'fault')]
    assert [r.col for r in records] == [0, 1, 3, 4]


def test_timeout_is_skipped(small_layout, tmp_path):
    config = collector_config(request_timeout_ms=50)
    result, _ = asyncio.run(collect(small_layout, 'abc', tmp_path, config, stall_steps=[2], stall_ms=150))
    assert result.timeouts == 1
    assert [r.col for r in read_collection(result.path).records] == [0, 2, 3]


def test_disconnect_restarts_the_file(small_layout, tmp_path):
    result, _ = asyncio.run(collect(small_layout, 'abcdefgh', tmp_path, disconnect_after=4))
    collection = read_collection(result.path)
    assert result.restarts == 1
    assert not result.truncated
    assert len(collection.records) == 9
    assert collection.truncation is None


def test_disconnect_without_restarts_truncates(small_layout, tmp_path):
    config = collector_config(max_restarts=0)
    result, _ = asyncio.run(collect(small_layout, 'abcdefgh', tmp_path, config, disconnect_after=4))
    collection = read_collection(result.path)
    assert result.truncated
    assert collection.truncation is not None
    assert len(collection.records) == 3
    assert (collection.truncation.last_line, collection.truncation.last_col) == (0, 3)


def test_run_collection_over_corpus_files(small_layout, tmp_path):
    corpus = []
    for name, text in (('one.py', 'x = 1\n'), ('two.py', 'y\tz')):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        corpus.append(path)
    results = asyncio.run(run_collection(collector_config(), small_layout, corpus, tmp_path / 'out'))
    assert [r.file_id for r in results] == ['one', 'two']
    two = read_collection(tmp_path / 'out' / 'two.jsonl')
    assert two.header.file_content == 'y   z'
    assert len(two.records) == 6


def test_default_timeouts():
    config = CollectorConfig()
    assert config.request_timeout_ms == 3000
    assert config.reconnect_timeout_ms == 3000
    assert config.settle_delay_ms == 80
    assert BridgeServer().request_timeout_ms == 3000


class SlowMetadataRenderer(SimulatedRenderer):
    """Answers the first few window metadata requests late"""

    def __init__(self, *args, late_answers=1, delay_s=0.2, **kwargs):
        super().__init__(*args, **kwargs)
        self.late_answers = late_answers
        self.delay_s = delay_s

    async def handle(self, request):
        if request.get('method') == 'get_window_metadata' and self.late_answers > 0:
            self.late_answers -= 1
            await asyncio.sleep(self.delay_s)
        return await super().handle(request)


async def collect_two_files(renderer, text, tmp_path, config):
    async with BridgeServer(config.host, config.port, config.request_timeout_ms) as bridge:
        renderer.load_document(text)
        task = asyncio.create_task(RendererClient(renderer, bridge.url).run())
        try:
            assert await bridge.wait_for_client(2.0)
            collector = CursorCollector(bridge, config, renderer.layout)
            first = await collector.collect_file(text, tmp_path / 'first.jsonl', 'first')
            second = await collector.collect_file(text, tmp_path / 'second.jsonl', 'second')
        finally:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task
    return first, second


def test_late_window_metadata_is_retried(small_layout, tmp_path):
    renderer = SlowMetadataRenderer(small_layout, GEOMETRY, late_answers=1)
    first, second = asyncio.run(collect_two_files(renderer, 'ab', tmp_path, collector_config(request_timeout_ms=50)))
    assert first.error is None
    assert len(read_collection(first.path).records) == 3
    assert second.error is None


def test_missing_window_metadata_skips_only_that_file(small_layout, tmp_path):
    renderer = SlowMetadataRenderer(small_layout, GEOMETRY, late_answers=METADATA_ATTEMPTS)
    first, second = asyncio.run(collect_two_files(renderer, 'ab', tmp_path, collector_config(request_timeout_ms=50)))
    assert 'timed out' in first.error
    assert first.records_written == 0
    assert not first.path.exists()
    assert second.error is None
    assert len(read_collection(second.path).records) == 3
