import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def safe_field(rng, extents, scale=0.5):
    """Random smooth-ish field whose samples stay strictly interior and
    whose fractional parts stay away from lattice points (keeps trilinear
    finite-difference checks away from derivative kinks)."""
    field = rng.uniform(-scale, scale, size=(3,) + tuple(extents))
    base = np.stack(np.meshgrid(*[np.arange(e) for e in extents],
                                indexing="ij")).astype(np.float64)
    coords = base + field
    for a, e in enumerate(extents):
        np.clip(coords[a], 0.3, e - 1.3, out=coords[a])
    frac = coords - np.floor(coords)
    coords += np.where(frac < 0.15, 0.15 - frac, 0.0)
    coords -= np.where(frac > 0.85, frac - 0.85, 0.0)
    return coords - base
