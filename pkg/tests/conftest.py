import numpy as np
import pytest

from dynamap.geometry import PoseSE3, rot_x, rot_y, rot_z


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation from three random axis angles."""
    return rot_z(rng.uniform(-np.pi, np.pi)) \
        @ rot_y(rng.uniform(-np.pi, np.pi)) \
        @ rot_x(rng.uniform(-np.pi, np.pi))


def random_pose(rng: np.random.Generator, t_scale: float = 2.0) -> PoseSE3:
    return PoseSE3(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
