import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    max_examples=60,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ball_points(rng, n, d, c, max_frac=0.95):
    """Uniform-direction points inside the c-ball, radius up to ``max_frac`` of the boundary."""
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0.0, max_frac, size=(n, 1)) / np.sqrt(c)
    return u * r
