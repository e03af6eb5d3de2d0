import numpy as np
import pytest

from src.config import DEFAULT_MODEL_PATH, load_run_config
from src.robot_model import Joint, Link, RobotModel, Thruster, load_model
from src.trajectory import TrajectorySpec


def _box_inertia(mass, a, b, c):
    return mass / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])


@pytest.fixture
def run_config(tmp_path):
    return load_run_config(overrides={"output_dir": str(tmp_path / "results")})


@pytest.fixture(scope="session")
def model():
    return load_model(DEFAULT_MODEL_PATH)


@pytest.fixture
def hover_model():
    """Base box with two arms on pitch joints, one vertical jet per arm."""
    links = {
        "base": Link("base", 10.0, np.zeros(3), _box_inertia(10.0, 0.3, 0.3, 0.4)),
        "left": Link("left", 1.0, np.array([0.0, 0.0, -0.1]), _box_inertia(1.0, 0.05, 0.05, 0.2)),
        "right": Link("right", 1.0, np.array([0.0, 0.0, -0.1]), _box_inertia(1.0, 0.05, 0.05, 0.2)),
    }
    joints = [
        Joint("left_pitch", "revolute", "base", "left", np.array([0.0, 0.2, 0.0]), np.zeros(3),
              np.array([0.0, 1.0, 0.0]), -1.0, 1.0, 2.0, "arms"),
        Joint("right_pitch", "revolute", "base", "right", np.array([0.0, -0.2, 0.0]), np.zeros(3),
              np.array([0.0, 1.0, 0.0]), -1.0, 1.0, 2.0, "torso"),
    ]
    thrusters = [
        Thruster("jet_left", "left", np.array([0.0, 0.0, -0.2]), np.array([0.0, 0.0, 1.0]), 0.0, 150.0),
        Thruster("jet_right", "right", np.array([0.0, 0.0, -0.2]), np.array([0.0, 0.0, 1.0]), 0.0, 150.0),
    ]
    return RobotModel("hover", links, joints, thrusters)


@pytest.fixture
def short_hover():
    return TrajectorySpec.from_segments("short-hover", [{"action": "hover", "duration": 1.0}])
