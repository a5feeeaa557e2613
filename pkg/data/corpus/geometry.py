from dataclasses import dataclass
from math import hypot


@dataclass(frozen=True)
class Rect:
    left: float
    top: float
    right: float
    bottom: float

    @property
    def width(self):
        return self.right - self.left

    @property
    def height(self):
        return self.bottom - self.top

    def center(self):
        return ((self.left + self.right) / 2, (self.top + self.bottom) / 2)

    def contains(self, x, y):
        return self.left <= x <= self.right and self.top <= y <= self.bottom

    def inflate(self, dx, dy):
        return Rect(self.left - dx, self.top - dy, self.right + dx, self.bottom + dy)


def clamp(value, low, high):
    return max(low, min(high, value))


def distance_to_rect(x, y, rect):
    nx = clamp(x, rect.left, rect.right)
    ny = clamp(y, rect.top, rect.bottom)
    return hypot(x - nx, y - ny)


def scale_point(x, y, sx=1.0, sy=1.0):
    return (x * sx, y * sy)


def union(a, b):
    return Rect(min(a.left, b.left), min(a.top, b.top),
                max(a.right, b.right), max(a.bottom, b.bottom))
