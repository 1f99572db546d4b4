import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rulekit import build_graph


@pytest.fixture
def chain_kg():
    """a -r1-> b -r2-> c with shortcut a -r3-> c (the composition triangle)."""
    return build_graph([("a", "r1", "b"), ("b", "r2", "c"), ("a", "r3", "c")])


@pytest.fixture
def diamond_kg():
    """Two parallel paths a -> {m1, m2} -> z plus the shortcut a -r3-> z."""
    return build_graph(
        [
            ("a", "r1", "m1"),
            ("a", "r1", "m2"),
            ("m1", "r2", "z"),
            ("m2", "r2", "z"),
            ("a", "r3", "z"),
        ]
    )
