import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from fallchain.fingerprint import OccupancyRaster  # noqa: E402
from fallchain.mission import synth_room  # noqa: E402
from fallchain.preproc import TimeSeries  # noqa: E402
from fallchain.signal_io import samples_to_arrays, synth_trace  # noqa: E402


@pytest.fixture
def fall_trace():
    """10 s synthetic fall at 200 Hz as (t, values)."""
    return samples_to_arrays(synth_trace("fall", 11, 10.0, 200.0))


@pytest.fixture
def adl_trace():
    return samples_to_arrays(synth_trace("adl", 11, 10.0, 200.0))


@pytest.fixture
def ramp_series():
    """Uniform 50 Hz series whose six channels are linear ramps."""
    t = np.arange(100) / 50.0
    values = np.column_stack([t * (k + 1) for k in range(6)])
    return TimeSeries(t, values)


@pytest.fixture
def empty_grid():
    return OccupancyRaster.empty(5, 5, 1.0)


@pytest.fixture
def room():
    """10 m x 10 m room, 0.25 m cells, walled border."""
    return synth_room(10.0, 10.0, 0.25)
