import numpy as np
import pytest

from covplan import (Box, CollisionCostParams, ConnectorParams,
                     DoubleIntegrator, ObstacleSet, SamplerParams, Sphere,
                     TimeGrid, build_sdf, position_observation)


@pytest.fixture(scope="session")
def grid50():
    return TimeGrid(1.0, 50)


@pytest.fixture(scope="session")
def linear_model():
    return DoubleIntegrator(dim=2, drag_coeff=0.0, epsilon=0.01,
                            observation=position_observation(2, 0.01))


@pytest.fixture(scope="session")
def drag_model():
    return DoubleIntegrator(dim=2, drag_coeff=0.1, epsilon=0.01,
                            observation=position_observation(2, 0.01))


@pytest.fixture(scope="session")
def empty_map():
    return build_sdf(ObstacleSet(()), (-6.0, -6.0), 0.12, (101, 101))


@pytest.fixture(scope="session")
def single_obstacle_map():
    obs = ObstacleSet((Sphere((0.0, 0.35), 0.8),))
    return build_sdf(obs, (-5.0, -5.0), 0.1, (101, 101))


@pytest.fixture(scope="session")
def five_box_obstacles():
    return ObstacleSet((Box((-3.0, -1.0), (-1.5, 1.0)),
                        Box((0.0, -4.0), (1.5, -1.5)),
                        Box((0.5, 1.5), (2.0, 3.5)),
                        Box((2.5, -1.0), (4.0, 0.5)),
                        Box((-1.0, 2.5), (0.0, 4.5))))


@pytest.fixture(scope="session")
def five_box_map(five_box_obstacles):
    return build_sdf(five_box_obstacles, (-6.0, -6.0), 0.12, (101, 101))


@pytest.fixture(scope="session")
def no_penalty():
    return CollisionCostParams(margin=0.2, weight=0.0)


@pytest.fixture(scope="session")
def obstacle_penalty():
    return CollisionCostParams(margin=0.2, weight=3e5)


@pytest.fixture(scope="session")
def budget_params():
    """Full iteration budget; convergence by construction."""
    return ConnectorParams(step_size=0.001, max_iterations=50, tolerance=0.0)


@pytest.fixture(scope="session")
def sampler_params():
    return SamplerParams(confidence=0.95, clearance=0.3, velocity_var=0.02)


def random_spd(rng, n, scale=0.02, floor=0.05):
    A = rng.normal(size=(n, n))
    return A @ A.T * scale + floor * np.eye(n)
