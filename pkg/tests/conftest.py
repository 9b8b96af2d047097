import numpy as np
import pytest

from pdpcrn import tensor as tz


@pytest.fixture(autouse=True)
def _float64_session():
    # Gradient checks and oracles run in double precision.
    tz.set_default_dtype(np.float64)
    yield
    tz.set_default_dtype(np.float64)
