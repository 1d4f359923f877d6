from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import BUBBLE_SORT_SOURCE  # noqa: E402

from tutorkit import astseg  # noqa: E402


@pytest.fixture(scope="session")
def bubble_source() -> str:
    return BUBBLE_SORT_SOURCE


@pytest.fixture(scope="session")
def bubble_plan():
    return astseg.segment(astseg.parse_source(BUBBLE_SORT_SOURCE))
