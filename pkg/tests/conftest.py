import sys
from pathlib import Path

import pytest
from loguru import logger
from PIL import Image

sys.path.append(str(Path(__file__).parent.parent / 'src'))

from core_model import NormalizedBox, Sample  # noqa: E402
from prompt_kit import PromptKit  # noqa: E402
from synth_editor import EditorLayout  # noqa: E402

PROJECT_ROOT = Path(__file__).parent.parent


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def small_layout():
    """origin (100,40), 8x18 cells, enough room for short documents"""
    return EditorLayout(origin_x=100, origin_y=40, char_width=8, line_height=18, gutter_width=60,
                        image_width=400, image_height=300)


@pytest.fixture(scope='session')
def prompt_kit():
    return PromptKit()


@pytest.fixture
def make_samples(tmp_path):
    """
    Write a blank 1000x1000 screenshot and one point sample per target

    Targets are normalized coordinates; on a 1000 px image they equal pixel coordinates.
    """
    def _make(targets, granularities=None, size=1000):
        image_path = tmp_path / 'screen.png'
        Image.new('RGB', (size, size), (30, 30, 30)).save(image_path)
        samples = []
        for index, (x, y) in enumerate(targets):
            granularity = granularities[index] if granularities else 'character'
            samples.append(Sample(
                id=f"s{index:04d}",
                image_path=image_path.name,
                instruction=f"Place the cursor at target {index}.",
                target=NormalizedBox.point(x, y),
                granularity=granularity,
                image_width=size,
                image_height=size,
            ))
        return samples
    return _make
