import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oohlab.generators import synthetic_instance  # noqa: E402


@pytest.fixture(scope="session")
def rc_instance():
    """Desk-scale synthetic RC case (seed 0, 10 unlimited lockers)."""
    return synthetic_instance("RC", 0)
