import numpy as np
import pytest

from neatboost import gbdt


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Compile (or load the cached) numba kernels once so timed tests
    measure algorithm time, not compilation."""
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 3, size=30)
    gbdt.fit(X, y, gbdt.GbdtConfig(n_estimators=2, max_depth=2, num_leaves=4))
