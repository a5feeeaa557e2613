"""
Core Model
Dataset schema, coordinate frames and scaling rules shared by every module
"""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from errors import InvalidArgumentError, SchemaError

NORMALIZED_SCALE = 1000.0


class Granularity(str, Enum):
    """How fine a grounding target is"""

    CHARACTER = 'character'
    WORD = 'word'
    LINE = 'line'


def round_half_away(value: float) -> int:
    """Round to the nearest integer, halves away from zero"""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


@dataclass(frozen=True)
class PixelPoint:
    """A point in an image frame, pixels from the top-left corner"""

    x: float
    y: float

    def in_frame(self, width: float, height: float) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height

    def rounded(self) -> Tuple[int, int]:
        return round_half_away(self.x), round_half_away(self.y)


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in pixel space (corner form)"""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidArgumentError(f"Box corners out of order: {self}")

    @property
    def center(self) -> PixelPoint:
        return PixelPoint((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def is_degenerate(self) -> bool:
        return self.x0 == self.x1 or self.y0 == self.y1


@dataclass(frozen=True)
class NormalizedBox:
    """
    Box in the [0,1000] normalized frame, corner form (x0, y0, x1, y1).

    Degenerate boxes (x0 == x1 and/or y0 == y1) are legal and stand for
    cursor boundaries.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0 <= self.x0 <= self.x1 <= NORMALIZED_SCALE and 0 <= self.y0 <= self.y1 <= NORMALIZED_SCALE):
            raise InvalidArgumentError(f"Normalized box outside [0,1000] or unordered: {self}")

    @classmethod
    def point(cls, x: float, y: float) -> 'NormalizedBox':
        return cls(x, y, x, y)

    @property
    def is_degenerate(self) -> bool:
        return self.x0 == self.x1 or self.y0 == self.y1

    def to_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


def _check_dimensions(width: float, height: float):
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f"Image dimensions must be positive, got {width}x{height}")


def denormalize(box: NormalizedBox, width: float, height: float) -> PixelBox:
    """
    Rescale a normalized box to the pixel frame of a width x height image

    Args:
        box: Box in [0,1000] coordinates
        width: Image width in pixels
        height: Image height in pixels

    Returns:
        The same box in pixel coordinates
    """
    _check_dimensions(width, height)
    sx = width / NORMALIZED_SCALE
    sy = height / NORMALIZED_SCALE
    return PixelBox(box.x0 * sx, box.y0 * sy, box.x1 * sx, box.y1 * sy)


def normalize(box: PixelBox, width: float, height: float) -> NormalizedBox:
    """Inverse of denormalize"""
    _check_dimensions(width, height)
    sx = NORMALIZED_SCALE / width
    sy = NORMALIZED_SCALE / height
    return NormalizedBox(
        min(box.x0 * sx, NORMALIZED_SCALE),
        min(box.y0 * sy, NORMALIZED_SCALE),
        min(box.x1 * sx, NORMALIZED_SCALE),
        min(box.y1 * sy, NORMALIZED_SCALE),
    )


def physical_point(point: PixelPoint, ratio: float) -> PixelPoint:
    """
    Convert a CSS-pixel point to physical pixels

    Args:
        point: Point in CSS pixels
        ratio: Device pixel ratio

    Returns:
        Point in physical pixels
    """
    if ratio <= 0:
        raise InvalidArgumentError(f"Device pixel ratio must be positive, got {ratio}")
    return PixelPoint(point.x * ratio, point.y * ratio)


@dataclass(frozen=True)
class Sample:
    """One grounding task"""

    id: str
    image_path: str
    instruction: str
    target: NormalizedBox
    granularity: Granularity
    image_width: int
    image_height: int

    def __post_init__(self):
        if not isinstance(self.granularity, Granularity):
            try:
                object.__setattr__(self, 'granularity', Granularity(self.granularity))
            except ValueError:
                raise InvalidArgumentError(f"Unknown granularity: {self.granularity!r}")
        _check_dimensions(self.image_width, self.image_height)

    def pixel_target(self) -> PixelBox:
        return denormalize(self.target, self.image_width, self.image_height)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'image_path': self.image_path,
            'instruction': self.instruction,
            'target': self.target.to_list(),
            'granularity': self.granularity.value,
            'image_width': self.image_width,
            'image_height': self.image_height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Sample':
        try:
            return cls(
                id=str(data['id']),
                image_path=data['image_path'],
                instruction=data['instruction'],
                target=NormalizedBox(*data['target']),
                granularity=data['granularity'],
                image_width=int(data['image_width']),
                image_height=int(data['image_height']),
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed sample: {e}")


@dataclass(frozen=True)
class WindowGeometry:
    screen_x: float
    screen_y: float
    width: float
    height: float

    def to_list(self):
        return [self.screen_x, self.screen_y, self.width, self.height]


@dataclass(frozen=True)
class DatasetHeader:
    """Metadata line at the top of a collection file"""

    file_content: str
    char_count: int
    font_family: str
    font_size: float
    line_height: float
    settle_delay_ms: int
    window_geometry: WindowGeometry
    screenshot_path: str
    timestamp: str
    file_id: str = ''
    device_pixel_ratio: float = 1.0

    def __post_init__(self):
        if self.char_count != len(self.file_content):
            raise SchemaError(
                f"char_count {self.char_count} does not match file_content length {len(self.file_content)}"
            )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['window_geometry'] = self.window_geometry.to_list()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DatasetHeader':
        try:
            fields_ = dict(data)
            fields_['window_geometry'] = WindowGeometry(*fields_['window_geometry'])
            return cls(**fields_)
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed header: {e}")


@dataclass(frozen=True)
class CursorRecord:
    """One measured cursor stop"""

    file_id: str
    line: int
    col: int
    character: str
    screen_x: float
    screen_y: float
    window_x: float
    window_y: float
    cursor_width: float
    cursor_height: float
    device_pixel_ratio: float

    def __post_init__(self):
        if self.line < 0 or self.col < 0:
            raise SchemaError(f"Negative cursor position ({self.line},{self.col})")
        if self.cursor_width <= 0 or self.cursor_height <= 0 or self.device_pixel_ratio <= 0:
            raise SchemaError(f"Non-positive cursor box or pixel ratio at ({self.line},{self.col})")

    def frame_consistent(self, header: DatasetHeader) -> bool:
        """screen = window + window_geometry offset, on both axes"""
        geometry = header.window_geometry
        return (self.screen_x == self.window_x + geometry.screen_x
                and self.screen_y == self.window_y + geometry.screen_y)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CursorRecord':
        try:
            return cls(**data)
        except TypeError as e:
            raise SchemaError(f"Malformed cursor record: {e}")


@dataclass(frozen=True)
class PhysicalRecord:
    file_id: str
    line: int
    col: int
    screen: PixelPoint
    window: PixelPoint


def reproject_physical(records) -> list:
    """
    Re-project cursor records into physical pixels using each record's own ratio

    Args:
        records: Iterable of CursorRecord

    Returns:
        List of PhysicalRecord
    """
    projected = []
    for record in records:
        ratio = record.device_pixel_ratio
        projected.append(PhysicalRecord(
            file_id=record.file_id,
            line=record.line,
            col=record.col,
            screen=physical_point(PixelPoint(record.screen_x, record.screen_y), ratio),
            window=physical_point(PixelPoint(record.window_x, record.window_y), ratio),
        ))
    return projected


@dataclass(frozen=True)
class TruncationMarker:
    """Last line of a collection file whose run lost the renderer"""

    reason: str
    last_line: Optional[int] = None
    last_col: Optional[int] = None
    truncated: bool = field(default=True)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
