import importlib.resources
from pathlib import Path

import numpy as np
import pytest

from robowatt.energy import ElectricalParams
from robowatt.robot_model import load_urdf, parse_urdf
from robowatt.trajio import Trajectory, static_hold, trajectory_to_csv

from .lagrangian import DOUBLE_PENDULUM, PENDULUM, PlanarChain

CONTENT = Path(__file__).parent / "content"

METHOD1 = ElectricalParams(r_kt2=0.0, p_overhead=92.3)
METHOD2 = ElectricalParams(r_kt2=0.0036, p_overhead=88.04)


def content_path(name: str) -> str:
    return str(CONTENT / name)


@pytest.fixture(scope="session")
def pendulum():
    return load_urdf(CONTENT / "pendulum.urdf")


@pytest.fixture(scope="session")
def double_pendulum():
    return load_urdf(CONTENT / "double_pendulum.urdf")


@pytest.fixture(scope="session")
def panda():
    text = importlib.resources.files("robowatt").joinpath("data", "panda.urdf").read_bytes()
    return parse_urdf(text, source="panda.urdf")


@pytest.fixture(scope="session")
def pendulum_oracle():
    return PlanarChain(PENDULUM)


@pytest.fixture(scope="session")
def double_pendulum_oracle():
    return PlanarChain(DOUBLE_PENDULUM)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pendulum_swing(
    duration: float = 2.0, dt: float = 1e-3, amplitude: float = 0.6, omega: float = 2.5
):
    """Analytic swing q = A sin(ωt) through the bottom of a single pendulum."""
    t = np.arange(0.0, duration + dt / 2, dt)
    q = amplitude * np.sin(omega * t)
    qd = amplitude * omega * np.cos(omega * t)
    qdd = -amplitude * omega**2 * np.sin(omega * t)
    return Trajectory(t=t, q=q[:, None], qd=qd[:, None], qdd=qdd[:, None])


def hold(q, duration: float = 5.0, dt: float = 0.01) -> Trajectory:
    return static_hold(q, duration, dt)


def write_trajectory(path: Path, trajectory: Trajectory) -> str:
    path.write_text(trajectory_to_csv(trajectory))
    return str(path)
