"""Shared test constructors and the acceptance summary hook."""

import numpy as np
import pytest

# One line per acceptance criterion, echoed after the run (capture-proof).
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from overtile.core import (BoundingBox, ClassTable, Detection, Frame,
                           GroundTruthLabel, RasterImage)


def box(xmin, ymin, xmax, ymax) -> BoundingBox:
    return BoundingBox(float(xmin), float(ymin), float(xmax), float(ymax))


def det(class_id, xmin, ymin, xmax, ymax, conf, frame=Frame.GLOBAL,
        tile_id=None) -> Detection:
    return Detection(class_id, box(xmin, ymin, xmax, ymax), conf, frame,
                     tile_id)


def gt(class_id, xmin, ymin, xmax, ymax) -> GroundTruthLabel:
    return GroundTruthLabel(class_id, box(xmin, ymin, xmax, ymax))


def gray_image(name: str, width: int, height: int, gsd: float,
               value: int = 50, bands: int = 1) -> RasterImage:
    pixels = np.full((height, width, bands), value, dtype=np.uint8)
    return RasterImage(name, pixels, gsd)


@pytest.fixture
def car_table() -> ClassTable:
    return ClassTable.from_names(["car"], small={"car"})


@pytest.fixture
def multi_table() -> ClassTable:
    return ClassTable.from_names(["airplane", "boat", "car", "airport"],
                                 small={"car"})
