import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from halfstokes.fields import GridSpec, ScalarField, TimeSpec, make_grid

settings.register_profile(
    "repo", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")


def gaussian(grid: GridSpec, center, var: float, full: bool = False) -> np.ndarray:
    """exp(-|x - c|^2 / (2 var)) sampled on the half-space (or doubled) box."""
    X = grid.mesh(full)
    r2 = sum((x - c) ** 2 for x, c in zip(X, center))
    return np.broadcast_to(np.exp(-r2 / (2 * var)), grid.full_shape if full else grid.shape).copy()


def bandlimited(grid: GridSpec, seed: int, kmax: float = 3.0, full: bool = True) -> np.ndarray:
    """Random real field on the doubled box with spectrum inside |k| <= kmax, mean zero."""
    from halfstokes.norms import kabs_grid

    rng = np.random.default_rng(seed)
    kabs = kabs_grid(grid.full_shape, grid.spacings)
    noise = rng.standard_normal(grid.full_shape)
    a = np.fft.ifftn(np.where((kabs <= kmax) & (kabs > 0), 1.0, 0.0) * np.fft.fftn(noise)).real
    a /= np.abs(a).max()
    if full:
        return a
    return a[..., : grid.N // 2 + 1]


@pytest.fixture
def grid2():
    return GridSpec(2, 4.0, 4.0, 32)


@pytest.fixture
def grid3():
    return GridSpec(3, 4.0, 4.0, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
