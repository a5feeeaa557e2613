"""
Prompt Kit
System prompt variants, feedback templates and coordinate extraction from model output
"""

import hashlib
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import yaml
from loguru import logger

from core_model import PixelPoint, round_half_away
from errors import ConfigurationError, InvalidArgumentError

SYSTEM_VARIANTS = ('baseline', 'baseline_cot', 'cursor_aware', 'step_by_step', 'minimal', 'visual_anchor', 'custom')
FEEDBACK_TEMPLATES = ('baseline', 'spatial')
CUSTOM_PLACEHOLDER = 'PUT YOUR CUSTOM PROMPT HERE.'

DEFAULT_PROMPTS_DIR = Path(__file__).parent.parent / 'config' / 'prompts'

# A pair of non-negative numbers inside () or [], spaces allowed around each number
COORDINATE_PATTERN = re.compile(r'[\(\[]\s*(\d+(?:\.\d+)?)\s*,\s*(\d+(?:\.\d+)?)\s*[\)\]]')


class ParseStatus(str, Enum):
    PARSED = 'parsed'
    PARSE_FAILURE = 'parse_failure'


@dataclass(frozen=True)
class ParseOutcome:
    """Model decision extracted from free-form text"""

    status: ParseStatus
    point: Optional[PixelPoint]
    matched_span: Optional[Tuple[int, int]]
    raw_text: str

    @property
    def parsed(self) -> bool:
        return self.status is ParseStatus.PARSED

    def to_dict(self):
        return {
            'status': self.status.value,
            'point': [self.point.x, self.point.y] if self.point else None,
            'matched_span': list(self.matched_span) if self.matched_span else None,
            'raw_text': self.raw_text,
        }


def extract_decision(raw_text: str) -> ParseOutcome:
    """
    Take the last coordinate pair in the text as the model's decision

    Args:
        raw_text: Full model output

    Returns:
        ParseOutcome; no pair found, or a last pair too large for a float, is a parse_failure
        value, never an exception
    """
    last = None
    for match in COORDINATE_PATTERN.finditer(raw_text or ''):
        last = match
    if last is None:
        return ParseOutcome(ParseStatus.PARSE_FAILURE, None, None, raw_text)
    x, y = float(last.group(1)), float(last.group(2))
    if not (math.isfinite(x) and math.isfinite(y)):
        return ParseOutcome(ParseStatus.PARSE_FAILURE, None, last.span(), raw_text)
    point = PixelPoint(x, y)
    return ParseOutcome(ParseStatus.PARSED, point, last.span(), raw_text)


def last_attempt_line(cross_x: int, cross_y: int) -> str:
    return f"Last attempt: [{cross_x}, {cross_y}]"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class PromptKit:
    """Loads the prompt data files and renders them"""

    def __init__(self, prompts_dir: Optional[Union[str, Path]] = None, verify_checksums: bool = True):
        """
        Args:
            prompts_dir: Directory with system/, feedback/ and checksums.yaml
            verify_checksums: Refuse to load templates whose bytes changed
        """
        self.prompts_dir = Path(prompts_dir) if prompts_dir else DEFAULT_PROMPTS_DIR
        self.system_templates: Dict[str, str] = {}
        self.feedback_templates: Dict[str, str] = {}
        self.checksums: Dict[str, Dict[str, str]] = {'system': {}, 'feedback': {}}

        expected = self._load_expected_checksums() if verify_checksums else {}
        for group, names, store in (('system', SYSTEM_VARIANTS, self.system_templates),
                                    ('feedback', FEEDBACK_TEMPLATES, self.feedback_templates)):
            for name in names:
                path = self.prompts_dir / group / f"{name}.txt"
                if not path.exists():
                    raise ConfigurationError(f"Prompt file missing: {path}")
                data = path.read_bytes()
                digest = _sha256(data)
                if verify_checksums and expected.get(group, {}).get(name) != digest:
                    raise ConfigurationError(f"Checksum mismatch for {group}/{name}.txt")
                self.checksums[group][name] = digest
                text = data.decode('utf-8')
                # Files end with exactly one newline that is not part of the template
                store[name] = text[:-1] if text.endswith('\n') else text

        logger.debug(f"Loaded {len(self.system_templates)} system prompts and "
                     f"{len(self.feedback_templates)} feedback templates from {self.prompts_dir}")

    def _load_expected_checksums(self) -> Dict[str, Dict[str, str]]:
        path = self.prompts_dir / 'checksums.yaml'
        if not path.exists():
            raise ConfigurationError(f"Prompt checksum file missing: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}

    def render_system_prompt(self, variant: str, width: int, height: int,
                             custom_text: Optional[str] = None) -> str:
        """
        Fill the {width}/{height} slots of a system prompt variant

        Args:
            variant: One of SYSTEM_VARIANTS
            width: Image width in pixels
            height: Image height in pixels
            custom_text: Required for the custom variant; replaces its placeholder sentence

        Returns:
            Rendered prompt text
        """
        if variant not in self.system_templates:
            raise ConfigurationError(f"Unknown system prompt variant: {variant!r}")
        if width <= 0 or height <= 0:
            raise InvalidArgumentError(f"Image dimensions must be positive, got {width}x{height}")

        text = self.system_templates[variant].replace('{width}', str(int(width))).replace('{height}', str(int(height)))
        if variant == 'custom':
            if not custom_text or not custom_text.strip():
                raise ConfigurationError("The custom system prompt needs non-empty custom text")
            text = text.replace(CUSTOM_PLACEHOLDER, custom_text.strip())
        return text

    def render_feedback(self, template: str, cross_x: float, cross_y: float) -> str:
        """Feedback text for the previous prediction, coordinates rounded half away from zero"""
        if template not in self.feedback_templates:
            raise ConfigurationError(f"Unknown feedback template: {template!r}")
        return (self.feedback_templates[template]
                .replace('{cross_x}', str(round_half_away(cross_x)))
                .replace('{cross_y}', str(round_half_away(cross_y))))

    def render_feedback_message(self, template: str, cross_x: float, cross_y: float) -> str:
        """Feedback text followed by the "Last attempt" line the harness sends with marked images"""
        x, y = round_half_away(cross_x), round_half_away(cross_y)
        return f"{self.render_feedback(template, x, y)}\n{last_attempt_line(x, y)}"
