"""
Feedback Loop
Runs the multi-turn prediction / red-cross refinement loop over an eval dataset
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger
from PIL import Image

from backends import Backend, ChatTurn, request_digest
from core_model import Granularity, PixelBox, PixelPoint, Sample
from errors import BackendAuthError, BackendTransportError, InvalidArgumentError
from overlay import OverlaySpec, mark
from prompt_kit import ParseOutcome, ParseStatus, PromptKit, extract_decision
from synth_editor import EditorLayout, png_bytes

# Slack for float noise from denormalizing stored targets (e.g. 100.00000000000001)
HIT_EPSILON = 1e-6


class TerminalStatus(str, Enum):
    HIT = 'hit'
    EXHAUSTED = 'exhausted'
    INFRASTRUCTURE_FAILED = 'infrastructure_failed'


@dataclass
class HarnessConfig:
    max_turns: int = 2
    tolerance_x: float = 0.0
    tolerance_y: float = 0.0
    system_prompt: str = 'baseline_cot'
    feedback_template: str = 'baseline'
    custom_prompt: Optional[str] = None
    parallelism: int = 4
    save_turn_images: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.max_turns < 1:
            raise InvalidArgumentError(f"max_turns must be >= 1, got {self.max_turns}")
        if self.tolerance_x < 0 or self.tolerance_y < 0:
            raise InvalidArgumentError("Tolerances must be >= 0")
        if self.parallelism < 1:
            raise InvalidArgumentError(f"parallelism must be >= 1, got {self.parallelism}")


def default_tolerances(layout: EditorLayout) -> Tuple[float, float]:
    """Half a character cell horizontally, half a line vertically"""
    return layout.char_width / 2.0, layout.line_height / 2.0


def hit_test(point: PixelPoint, target: PixelBox, tolerance_x: float = 0.0, tolerance_y: float = 0.0) -> bool:
    """
    Inclusive containment in the target box expanded by the tolerances

    Args:
        point: Prediction in the image's pixel frame
        target: Denormalized target box (degenerate for boundaries)
        tolerance_x: Horizontal slack in pixels
        tolerance_y: Vertical slack in pixels
    """
    return (target.x0 - tolerance_x - HIT_EPSILON <= point.x <= target.x1 + tolerance_x + HIT_EPSILON
            and target.y0 - tolerance_y - HIT_EPSILON <= point.y <= target.y1 + tolerance_y + HIT_EPSILON)


def distances(point: PixelPoint, target: PixelBox) -> Tuple[float, float]:
    """(distance to the nearest point of the box, distance to its center)"""
    nearest_x = min(max(point.x, target.x0), target.x1)
    nearest_y = min(max(point.y, target.y0), target.y1)
    center = target.center
    return (math.hypot(point.x - nearest_x, point.y - nearest_y),
            math.hypot(point.x - center.x, point.y - center.y))


@dataclass
class TurnRecord:
    turn_index: int
    prompt_messages_digest: str
    parse: ParseOutcome
    point: Optional[PixelPoint]
    hit: bool
    dist_box: Optional[float]
    dist_center: Optional[float]
    latency_ms: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'turn_index': self.turn_index,
            'prompt_messages_digest': self.prompt_messages_digest,
            'parse': self.parse.to_dict(),
            'point': [self.point.x, self.point.y] if self.point else None,
            'hit': self.hit,
            'dist_box': self.dist_box,
            'dist_center': self.dist_center,
            'latency_ms': self.latency_ms,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TurnRecord':
        parse = data['parse']
        parse_point = PixelPoint(*parse['point']) if parse.get('point') else None
        span = tuple(parse['matched_span']) if parse.get('matched_span') else None
        return cls(
            turn_index=data['turn_index'],
            prompt_messages_digest=data['prompt_messages_digest'],
            parse=ParseOutcome(ParseStatus(parse['status']), parse_point, span, parse.get('raw_text', '')),
            point=PixelPoint(*data['point']) if data.get('point') else None,
            hit=bool(data['hit']),
            dist_box=data.get('dist_box'),
            dist_center=data.get('dist_center'),
            latency_ms=int(data.get('latency_ms', 0)),
        )


@dataclass
class EvalTrace:
    """Per-sample transcript; it ends at the first hit"""

    sample_id: str
    granularity: Granularity
    turns: List[TurnRecord] = field(default_factory=list)
    first_hit_turn: Optional[int] = None
    terminal_status: TerminalStatus = TerminalStatus.EXHAUSTED
    prediction_history: str = ''
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sample_id': self.sample_id,
            'granularity': self.granularity.value,
            'turns': [turn.to_dict() for turn in self.turns],
            'first_hit_turn': self.first_hit_turn,
            'terminal_status': self.terminal_status.value,
            'prediction_history': self.prediction_history,
            'error': self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalTrace':
        return cls(
            sample_id=data['sample_id'],
            granularity=Granularity(data['granularity']),
            turns=[TurnRecord.from_dict(turn) for turn in data.get('turns', [])],
            first_hit_turn=data.get('first_hit_turn'),
            terminal_status=TerminalStatus(data['terminal_status']),
            prediction_history=data.get('prediction_history', ''),
            error=data.get('error'),
        )


def prediction_history(turns: Sequence[TurnRecord]) -> str:
    """Compact per-turn summary, e.g. "t1:(310,475) t2:parse_failure" """
    parts = []
    for turn in turns:
        if turn.point is None:
            parts.append(f"t{turn.turn_index}:parse_failure")
        else:
            parts.append(f"t{turn.turn_index}:({turn.point.x:g},{turn.point.y:g})")
    return ' '.join(parts)


def write_traces(path: Union[str, Path], traces: Sequence[EvalTrace]) -> Path:
    """One EvalTrace per line, in sample id order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for trace in sorted(traces, key=lambda t: t.sample_id):
            f.write(json.dumps(trace.to_dict(), ensure_ascii=False, sort_keys=True) + '\n')
    return path


def read_traces(path: Union[str, Path]) -> List[EvalTrace]:
    with open(path, 'r', encoding='utf-8') as f:
        return [EvalTrace.from_dict(json.loads(line)) for line in f if line.strip()]


@dataclass
class SampleSession:
    """Mutable state of one sample while its turns run"""

    sample: Sample
    image: Image.Image
    image_png: bytes
    target: PixelBox
    history: List[ChatTurn]
    trace: EvalTrace
    cross: Optional[PixelPoint] = None
    last_raw_text: Optional[str] = None


class FeedbackLoop:
    """Evaluates samples turn by turn against one backend"""

    def __init__(self, config: HarnessConfig, backend: Backend, prompt_kit: PromptKit,
                 overlay_spec: OverlaySpec = OverlaySpec(), dataset_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            config: Harness parameters
            backend: Model backend, shared by all workers
            prompt_kit: Loaded prompt templates
            overlay_spec: Cross-hair parameters
            dataset_dir: Directory sample image paths are relative to
        """
        self.config = config
        self.backend = backend
        self.prompt_kit = prompt_kit
        self.overlay_spec = overlay_spec
        self.dataset_dir = Path(dataset_dir) if dataset_dir else Path('.')
        self.turn_image_dir = Path(config.output_dir) / 'turn_images' if config.output_dir else None

    def open_session(self, sample: Sample) -> SampleSession:
        image_path = Path(sample.image_path)
        if not image_path.is_absolute():
            image_path = self.dataset_dir / image_path
        with Image.open(image_path) as source:
            image = source.convert('RGB')
        if image.size != (sample.image_width, sample.image_height):
            logger.warning(f"{sample.id}: image is {image.size}, sample declares "
                           f"{sample.image_width}x{sample.image_height}")

        system_text = self.prompt_kit.render_system_prompt(
            self.config.system_prompt, sample.image_width, sample.image_height, self.config.custom_prompt)
        return SampleSession(
            sample=sample,
            image=image,
            image_png=png_bytes(image),
            target=sample.pixel_target(),
            history=[ChatTurn('system', system_text)],
            trace=EvalTrace(sample_id=sample.id, granularity=sample.granularity),
        )

    def _query(self, session: SampleSession, turn_index: int, text: str, image_png: bytes) -> TurnRecord:
        session.history.append(ChatTurn('user', text, image_png))
        digest = request_digest(session.history, self.backend.model)
        if self.config.save_turn_images and self.turn_image_dir:
            self.turn_image_dir.mkdir(parents=True, exist_ok=True)
            (self.turn_image_dir / f"{session.sample.id}_t{turn_index}.png").write_bytes(image_png)

        started = time.perf_counter()
        raw_text = self.backend.complete(session.history, request_key=session.sample.id)
        latency_ms = int((time.perf_counter() - started) * 1000)
        session.last_raw_text = raw_text

        parse = extract_decision(raw_text)
        record = TurnRecord(turn_index, digest, parse, parse.point, False, None, None, latency_ms)
        if parse.parsed:
            record.hit = hit_test(parse.point, session.target, self.config.tolerance_x, self.config.tolerance_y)
            record.dist_box, record.dist_center = distances(parse.point, session.target)
            session.cross = parse.point
        return record

    def run_turn_1(self, session: SampleSession) -> TurnRecord:
        """Instruction with the clean screenshot"""
        return self._query(session, 1, session.sample.instruction, session.image_png)

    def run_refinement_turn(self, session: SampleSession) -> TurnRecord:
        """
        Feedback turn: prior answer into the history, cross drawn on a clean copy

        A turn whose predecessor failed to parse reuses the last cross; with no cross
        at all yet the instruction and clean screenshot are sent again.
        """
        turn_index = len(session.trace.turns) + 1
        session.history.append(ChatTurn('assistant', session.last_raw_text or ''))
        if session.cross is None:
            return self._query(session, turn_index, session.sample.instruction, session.image_png)

        marked = mark(session.image, session.cross, self.overlay_spec)
        text = self.prompt_kit.render_feedback_message(self.config.feedback_template,
                                                       session.cross.x, session.cross.y)
        return self._query(session, turn_index, text, png_bytes(marked))

    def evaluate_sample(self, sample: Sample) -> EvalTrace:
        """
        Run up to max_turns turns, stopping at the first hit

        Returns:
            The sample's trace; transport failures mark it infrastructure_failed
        """
        session = self.open_session(sample)
        trace = session.trace
        try:
            for turn_index in range(1, self.config.max_turns + 1):
                record = self.run_turn_1(session) if turn_index == 1 else self.run_refinement_turn(session)
                trace.turns.append(record)
                if record.hit:
                    trace.first_hit_turn = turn_index
                    trace.terminal_status = TerminalStatus.HIT
                    break
        except BackendAuthError:
            raise
        except BackendTransportError as e:
            trace.terminal_status = TerminalStatus.INFRASTRUCTURE_FAILED
            trace.error = str(e)
            logger.error(f"{sample.id}: backend failed after retries at turn {len(trace.turns) + 1}: {e}")

        trace.prediction_history = prediction_history(trace.turns)
        logger.debug(f"{sample.id}: {trace.terminal_status.value} after {len(trace.turns)} turn(s)")
        return trace

    def run(self, samples: Sequence[Sample]) -> List[EvalTrace]:
        """
        Evaluate every sample, up to `parallelism` at a time

        Returns:
            Traces sorted by sample id
        """
        ordered = sorted(samples, key=lambda s: s.id)
        logger.info(f"Evaluating {len(ordered)} samples, max_turns={self.config.max_turns}, "
                    f"parallelism={self.config.parallelism}")
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as executor:
            traces = list(executor.map(self.evaluate_sample, ordered))

        hits = sum(1 for trace in traces if trace.terminal_status is TerminalStatus.HIT)
        logger.info(f"Finished: {hits}/{len(traces)} samples hit within {self.config.max_turns} turn(s)")
        return sorted(traces, key=lambda t: t.sample_id)
