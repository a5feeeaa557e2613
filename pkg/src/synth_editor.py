"""
Synthetic Editor
Renders deterministic code-editor screenshots and derives cursor ground truth
in closed form from the layout geometry
"""

import io
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from loguru import logger
from PIL import Image

from bitmap_font import GLYPH_COLUMNS, GLYPH_ROWS, glyph_mask
from core_model import Granularity, NormalizedBox, PixelBox, PixelPoint, Sample, normalize
from dataset_manager import write_samples
from errors import CapacityError, GenerationError, InvalidArgumentError

RGB = Tuple[int, int, int]
TAB_SIZE = 4
WORD_PATTERN = re.compile(r'[A-Za-z_][A-Za-z0-9_]*')


@dataclass(frozen=True)
class Theme:
    foreground: RGB = (212, 212, 212)
    background: RGB = (30, 30, 30)
    gutter_background: RGB = (37, 37, 38)
    gutter_foreground: RGB = (133, 133, 133)


@dataclass(frozen=True)
class EditorLayout:
    """Geometry of the synthetic editor; every pixel position derives from it"""

    origin_x: int
    origin_y: int
    char_width: int
    line_height: int
    gutter_width: int
    image_width: int = 1344
    image_height: int = 1344
    theme: Theme = field(default_factory=Theme)
    caret_width: float = 2.0
    font_family: str = 'SynthMono 5x8'
    font_size: float = 14.0

    def __post_init__(self):
        if self.char_width <= 0 or self.line_height <= 0:
            raise InvalidArgumentError("char_width and line_height must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidArgumentError("image dimensions must be positive")
        if self.gutter_width < 0 or self.origin_x < self.gutter_width:
            raise InvalidArgumentError("origin_x must not fall inside the gutter")
        if self.origin_y < 0 or self.origin_x + self.char_width > self.image_width \
                or self.origin_y + self.line_height > self.image_height:
            raise InvalidArgumentError("the first character cell must lie inside the image")
        if self.caret_width <= 0:
            raise InvalidArgumentError("caret_width must be positive")

    @property
    def columns(self) -> int:
        return (self.image_width - self.origin_x) // self.char_width

    @property
    def rows(self) -> int:
        return (self.image_height - self.origin_y) // self.line_height

    @property
    def glyph_scale(self) -> int:
        return max(1, min(self.char_width // (GLYPH_COLUMNS + 1), self.line_height // (GLYPH_ROWS + 2)))

    @classmethod
    def from_config(cls, layout_config: Dict[str, Any]) -> 'EditorLayout':
        values = dict(layout_config)
        theme = values.pop('theme', None) or {}
        return cls(theme=Theme(**{k: tuple(v) for k, v in theme.items()}), **values)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['theme'] = {k: list(v) for k, v in data['theme'].items()}
        return data


def prepare_text(text: str) -> str:
    """Normalize line endings and expand tabs so every character takes one cell"""
    return text.replace('\r\n', '\n').replace('\r', '\n').expandtabs(TAB_SIZE)


def check_capacity(lines: Sequence[str], layout: EditorLayout):
    if len(lines) > layout.rows:
        raise CapacityError(
            f"Line {layout.rows + 1} is past the layout's {layout.rows} visible lines", layout.rows + 1)
    for index, line in enumerate(lines):
        if len(line) > layout.columns:
            raise CapacityError(
                f"Line {index + 1} has {len(line)} columns, layout fits {layout.columns}", index + 1)


def glyph_top_offset(layout: EditorLayout) -> int:
    """Rows between a line's top edge and its glyphs' top edge (glyphs sit at the cell's left edge)"""
    return max(0, (layout.line_height - GLYPH_ROWS * layout.glyph_scale) // 2)


def _paint_glyph(canvas: np.ndarray, char: str, left: int, top: int, layout: EditorLayout, color: RGB):
    mask = glyph_mask(char, layout.glyph_scale)[:layout.line_height, :layout.char_width]
    height, width = mask.shape
    y = top + glyph_top_offset(layout)
    canvas[y:y + height, left:left + width][mask] = color


def render(text: str, layout: EditorLayout) -> Image.Image:
    """
    Render source text into an editor screenshot

    Args:
        text: Source text (tabs should already be expanded)
        layout: Editor geometry and colors

    Returns:
        RGB image of size image_width x image_height

    Raises:
        CapacityError: naming the first line that does not fit
    """
    lines = text.split('\n')
    check_capacity(lines, layout)
    theme = layout.theme

    canvas = np.empty((layout.image_height, layout.image_width, 3), dtype=np.uint8)
    canvas[:, :] = theme.background
    canvas[:, :layout.gutter_width] = theme.gutter_background

    for line_index, line in enumerate(lines):
        top = layout.origin_y + line_index * layout.line_height

        # 1-based line numbers, right-aligned half a cell before the gutter edge
        number = str(line_index + 1)
        right = layout.gutter_width - layout.char_width // 2
        for digit_index, digit in enumerate(reversed(number)):
            left = right - (digit_index + 1) * layout.char_width
            if left < 0:
                break
            _paint_glyph(canvas, digit, left, top, layout, theme.gutter_foreground)

        for col, char in enumerate(line):
            if char == ' ':
                continue
            _paint_glyph(canvas, char, layout.origin_x + col * layout.char_width, top, layout, theme.foreground)

    return Image.fromarray(canvas, 'RGB')


def png_bytes(image: Image.Image) -> bytes:
    buffer = io.BytesIO()
    image.save(buffer, format='PNG')
    return buffer.getvalue()


def cursor_ground_truth(line: int, col: int, layout: EditorLayout,
                        lines: Optional[Sequence[str]] = None) -> PixelPoint:
    """
    Pixel position of the caret boundary before column `col` on `line`

    x is the left edge of the character at col; y is the vertical center of the line.

    Args:
        line: Zero-based line
        col: Zero-based column (may equal the line length: end of line)
        layout: Editor geometry
        lines: Document lines, when the stop must be checked against real text
    """
    if line < 0 or col < 0 or line >= layout.rows or col > layout.columns:
        raise InvalidArgumentError(f"Cursor position ({line},{col}) is outside the layout")
    if lines is not None and (line >= len(lines) or col > len(lines[line])):
        raise InvalidArgumentError(f"Cursor position ({line},{col}) is not a stop in the document")
    x = layout.origin_x + col * layout.char_width
    y = layout.origin_y + line * layout.line_height + layout.line_height / 2
    return PixelPoint(x, y)


@dataclass(frozen=True)
class InstructionTemplate:
    """Instruction wording for one granularity"""

    granularity: Granularity
    pattern: str
    occurrence_pattern: str

    def render(self, occurrence: Optional[int] = None, **slots) -> str:
        if occurrence is None:
            return self.pattern.format(**slots)
        return self.occurrence_pattern.format(occurrence=occurrence, **slots)


TEMPLATES = {
    Granularity.CHARACTER: InstructionTemplate(
        Granularity.CHARACTER,
        'Place the cursor between "{left}" and "{right}" on line {line}.',
        'Place the cursor between "{left}" and "{right}" on line {line} '
        '(occurrence {occurrence} of that pair on the line).',
    ),
    Granularity.WORD: InstructionTemplate(
        Granularity.WORD,
        'Place the cursor before the word "{word}" on line {line}.',
        'Place the cursor before the word "{word}" on line {line} '
        '(occurrence {occurrence} of that word on the line).',
    ),
    Granularity.LINE: InstructionTemplate(
        Granularity.LINE,
        'Place the cursor at the start of line {line}.',
        'Place the cursor at the start of line {line}.',
    ),
}

_CHARACTER_RE = re.compile(
    r'^Place the cursor between "(.)" and "(.)" on line (\d+)'
    r'(?: \(occurrence (\d+) of that pair on the line\))?\.$')
_WORD_RE = re.compile(
    r'^Place the cursor before the word "([A-Za-z_][A-Za-z0-9_]*)" on line (\d+)'
    r'(?: \(occurrence (\d+) of that word on the line\))?\.$')
_LINE_RE = re.compile(r'^Place the cursor at the start of line (\d+)\.$')


def _pair_columns(line: str, left: str, right: str) -> List[int]:
    return [col for col in range(1, len(line)) if line[col - 1] == left and line[col] == right]


def _word_columns(line: str, word: str) -> List[int]:
    return [m.start() for m in WORD_PATTERN.finditer(line) if m.group() == word]


def resolve_instruction(instruction: str, lines: Sequence[str]) -> List[Tuple[int, int]]:
    """
    Resolve an instruction against the source text

    Returns:
        Every (line, col) stop the instruction could mean; exactly one when unambiguous
    """
    match = _CHARACTER_RE.match(instruction)
    if match:
        left, right, line_no, occurrence = match.groups()
        finder = lambda text: _pair_columns(text, left, right)
    else:
        match = _WORD_RE.match(instruction)
        if match:
            word, line_no, occurrence = match.groups()
            finder = lambda text: _word_columns(text, word)
        else:
            match = _LINE_RE.match(instruction)
            if not match:
                return []
            line_no, occurrence = match.group(1), None
            finder = lambda text: [0]

    line_index = int(line_no) - 1
    if not 0 <= line_index < len(lines):
        return []
    columns = finder(lines[line_index])
    if occurrence is not None:
        k = int(occurrence) - 1
        columns = columns[k:k + 1] if 0 <= k < len(columns) else []
    return [(line_index, col) for col in columns]


@dataclass(frozen=True)
class Candidate:
    file_index: int
    line: int
    col: int
    instruction: str


def _candidates(file_index: int, lines: Sequence[str], granularity: Granularity) -> List[Candidate]:
    template = TEMPLATES[granularity]
    found = []

    def add(line_index: int, col: int, instruction: str):
        # Only instructions that resolve back to exactly this stop are usable
        if resolve_instruction(instruction, lines) == [(line_index, col)]:
            found.append(Candidate(file_index, line_index, col, instruction))

    for line_index, line in enumerate(lines):
        line_no = line_index + 1
        if granularity is Granularity.CHARACTER:
            for col in range(1, len(line)):
                left, right = line[col - 1], line[col]
                if left.isspace() or right.isspace():
                    continue
                columns = _pair_columns(line, left, right)
                occurrence = columns.index(col) + 1 if len(columns) > 1 else None
                add(line_index, col, template.render(occurrence, left=left, right=right, line=line_no))
        elif granularity is Granularity.WORD:
            for match in WORD_PATTERN.finditer(line):
                columns = _word_columns(line, match.group())
                occurrence = columns.index(match.start()) + 1 if len(columns) > 1 else None
                add(line_index, match.start(), template.render(occurrence, word=match.group(), line=line_no))
        elif line.strip():
            add(line_index, 0, template.render(line=line_no))
    return found


@dataclass
class GeneratedDataset:
    samples_path: Path
    samples: List[Sample]
    image_paths: List[Path]


class DatasetGenerator:
    """Builds eval datasets of cursor-grounding samples from source files"""

    def __init__(self, layout: EditorLayout, seed: int):
        """
        Args:
            layout: Editor geometry used for every screenshot
            seed: RNG seed; identical seeds give byte-identical datasets
        """
        self.layout = layout
        self.seed = seed

    def generate_dataset(self, corpus: Sequence[Union[str, Path]], composition: Dict[str, int],
                         output_dir: Union[str, Path]) -> GeneratedDataset:
        """
        Render every corpus file and draw the requested number of targets per granularity

        Args:
            corpus: Source file paths
            composition: Counts per granularity name
            output_dir: Receives samples.jsonl, images/ and generator_config.yaml

        Returns:
            The written dataset
        """
        if not corpus:
            raise GenerationError("Corpus is empty")
        counts = {Granularity(name): int(count) for name, count in composition.items()}
        if any(count < 0 for count in counts.values()):
            raise GenerationError(f"Composition counts must be non-negative: {composition}")

        output_dir = Path(output_dir)
        image_dir = output_dir / 'images'
        image_dir.mkdir(parents=True, exist_ok=True)

        documents = []
        image_paths = []
        for index, source in enumerate(corpus):
            source = Path(source)
            lines = prepare_text(source.read_text(encoding='utf-8')).split('\n')
            try:
                image = render('\n'.join(lines), self.layout)
            except CapacityError as e:
                raise GenerationError(f"{source}: {e}")
            image_path = image_dir / f"{index:02d}_{source.stem}.png"
            image.save(image_path, format='PNG')
            documents.append(lines)
            image_paths.append(image_path)
        logger.info(f"Rendered {len(documents)} corpus file(s) into {image_dir}")

        rng = np.random.Generator(np.random.PCG64(self.seed))
        chosen: List[Tuple[Granularity, Candidate]] = []
        for granularity in (Granularity.CHARACTER, Granularity.WORD, Granularity.LINE):
            count = counts.get(granularity, 0)
            if count == 0:
                continue
            pool = [c for i, lines in enumerate(documents) for c in _candidates(i, lines, granularity)]
            if count > len(pool):
                raise GenerationError(
                    f"Corpus offers {len(pool)} unambiguous {granularity.value} targets, "
                    f"{count} requested (short by {count - len(pool)})")
            picks = rng.choice(len(pool), size=count, replace=False)
            chosen.extend((granularity, pool[int(i)]) for i in picks)

        samples = []
        width, height = self.layout.image_width, self.layout.image_height
        for index, (granularity, candidate) in enumerate(chosen):
            point = cursor_ground_truth(candidate.line, candidate.col, self.layout,
                                        documents[candidate.file_index])
            target = normalize(PixelBox(point.x, point.y, point.x, point.y), width, height)
            samples.append(Sample(
                id=f"s{index:04d}",
                image_path=image_paths[candidate.file_index].relative_to(output_dir).as_posix(),
                instruction=candidate.instruction,
                target=target,
                granularity=granularity,
                image_width=width,
                image_height=height,
            ))

        samples_path = write_samples(output_dir / 'samples.jsonl', samples)
        self._write_generator_config(output_dir, corpus, composition)
        logger.info(f"Wrote {len(samples)} samples to {samples_path}")
        return GeneratedDataset(samples_path=samples_path, samples=samples, image_paths=image_paths)

    def _write_generator_config(self, output_dir: Path, corpus, composition):
        generator_config = {
            'layout': self.layout.to_dict(),
            'composition': {name: int(count) for name, count in composition.items()},
            'corpus': [str(p) for p in corpus],
            'seed': self.seed,
        }
        with open(output_dir / 'generator_config.yaml', 'w', encoding='utf-8') as f:
            yaml.safe_dump(generator_config, f, default_flow_style=False, sort_keys=False)


def load_generator_layout(dataset_path: Union[str, Path]) -> Optional[EditorLayout]:
    """Layout recorded next to a generated dataset, if any"""
    config_path = Path(dataset_path).parent / 'generator_config.yaml'
    if not config_path.exists():
        return None
    with open(config_path, 'r', encoding='utf-8') as f:
        generator_config = yaml.safe_load(f) or {}
    if 'layout' not in generator_config:
        return None
    return EditorLayout.from_config(generator_config['layout'])
