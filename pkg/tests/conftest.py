import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from metric_splitting.problems import make_fused_toy, make_lasso

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def lasso():
    return make_lasso(seed=42, m_rows=5, n_cols=20)


@pytest.fixture(scope="session")
def fused():
    return make_fused_toy(seed=7, n=12, tau=0.5, smoothing_nu=10.0)


def random_spd(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = np.geomspace(1.0, cond, d)
    M = (Q * w) @ Q.T
    return 0.5 * (M + M.T)
