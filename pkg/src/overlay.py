"""
Overlay
Draws the semi-transparent red cross-hair marking a previous prediction
"""

from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from loguru import logger
from PIL import Image

from core_model import PixelPoint, round_half_away
from errors import InvalidArgumentError


@dataclass(frozen=True)
class OverlaySpec:
    color: Tuple[int, int, int] = (255, 0, 0)
    alpha: float = 0.6
    arm_fraction: float = 0.05
    stroke_width: int = 3

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 < self.arm_fraction < 0.5:
            raise InvalidArgumentError(f"arm_fraction must be in (0, 0.5), got {self.arm_fraction}")
        if self.stroke_width < 1:
            raise InvalidArgumentError(f"stroke_width must be >= 1, got {self.stroke_width}")

    @classmethod
    def from_config(cls, overlay_config: Dict[str, Any]) -> 'OverlaySpec':
        values = dict(overlay_config)
        if 'color' in values:
            values['color'] = tuple(values['color'])
        return cls(**values)


def arm_lengths(width: int, height: int, spec: OverlaySpec) -> Tuple[int, int]:
    """Total length of the horizontal and vertical arms"""
    return round_half_away(spec.arm_fraction * width), round_half_away(spec.arm_fraction * height)


def cross_mask(width: int, height: int, center: Tuple[int, int], spec: OverlaySpec) -> np.ndarray:
    """
    Boolean mask of the cross-hair pixels, clipped at the image borders

    Args:
        width: Image width
        height: Image height
        center: Integer pixel the arms are centered on
        spec: Overlay parameters
    """
    cx, cy = center
    horizontal, vertical = arm_lengths(width, height, spec)
    stroke = spec.stroke_width
    mask = np.zeros((height, width), dtype=bool)

    # Python slices clip at the upper border; lower bounds are clipped here
    top, left = max(cy - stroke // 2, 0), max(cx - horizontal // 2, 0)
    mask[top:max(cy - stroke // 2 + stroke, 0), left:max(cx - horizontal // 2 + horizontal, 0)] = True
    top, left = max(cy - vertical // 2, 0), max(cx - stroke // 2, 0)
    mask[top:max(cy - vertical // 2 + vertical, 0), left:max(cx - stroke // 2 + stroke, 0)] = True
    return mask


def clamp_point(point: PixelPoint, width: int, height: int) -> Tuple[int, int]:
    """Rounded pixel position, clamped into the frame"""
    x, y = point.rounded()
    clamped = min(max(x, 0), width - 1), min(max(y, 0), height - 1)
    if clamped != (x, y):
        logger.info(f"Cross at ({point.x}, {point.y}) is outside {width}x{height}, clamped to {clamped}")
    return clamped


def mark(image: Image.Image, point: PixelPoint, spec: OverlaySpec = OverlaySpec()) -> Image.Image:
    """
    Draw the cross-hair on a copy of the image

    Args:
        image: Clean screenshot; never modified
        point: Previous prediction in the image's pixel frame
        spec: Overlay parameters

    Returns:
        New RGB image with the arms alpha-blended over the original
    """
    width, height = image.size
    if width == 0 or height == 0:
        raise InvalidArgumentError("Cannot mark a zero-sized image")

    center = clamp_point(point, width, height)
    pixels = np.array(image.convert('RGB'), dtype=np.float64)
    mask = cross_mask(width, height, center, spec)

    a = spec.alpha
    color = np.asarray(spec.color, dtype=np.float64)
    blended = np.floor(a * color + (1.0 - a) * pixels[mask] + 0.5)
    pixels[mask] = blended
    return Image.fromarray(pixels.astype(np.uint8), 'RGB')
