import math

import numpy as np
import pytest

from safearm.arm import ArmParams, ArmState


@pytest.fixture
def arm2() -> ArmParams:
    """Two-link arm with generous joint range for geometric tests."""
    return ArmParams([0.5, 0.5], [0.0, 0.0],
                     [-math.pi, -math.pi + 0.05], [math.pi, math.pi - 0.05],
                     [8.0, 8.0], [0.05, 0.05])


@pytest.fixture
def unit_arm() -> ArmParams:
    """Unit-length links, zero capsule radius: pure kinematics."""
    return ArmParams([1.0, 1.0], [0.0, 0.0], [-math.pi, -math.pi],
                     [math.pi, math.pi], [10.0, 10.0], [0.0, 0.0])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def random_state(rng: np.random.Generator, arm: ArmParams,
                 speed: float = 2.0) -> ArmState:
    theta = rng.uniform(arm.joint_lower, arm.joint_upper)
    theta_dot = rng.uniform(-speed, speed, size=arm.n)
    return ArmState(theta, theta_dot)
