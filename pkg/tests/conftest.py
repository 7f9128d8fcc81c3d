import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
# allow several kernel threads even on a one-core box so worker-count invariance is exercised
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
