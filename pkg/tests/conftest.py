import numpy as np
import pytest

from bangtrack.control import BangBangControl, ChannelBounds, GapPolicy, SwitchingEvent
from bangtrack.dynamics import RigidBodyModel
from bangtrack.robustness import (
    CostWeights,
    RobustnessGrid,
    derive_nominal,
    enumerate_needle_channels,
)

X0 = np.zeros(3)
XF = np.array([0.4, -0.3, 0.4])
ETA = 0.05


@pytest.fixture(scope="session")
def model():
    return RigidBodyModel()


@pytest.fixture(scope="session")
def nominal(model):
    """The derived rigid-body nominal used throughout the suite."""
    return derive_nominal(model, X0, XF, seed=0, eta=ETA, jobs=2)


@pytest.fixture(scope="session")
def needle_tables(model, nominal):
    """Exhaustive channel enumeration for 1, 2 and 3 needles at the reduced
    quadrature; shared by the acceptance criteria (this is the expensive
    part of the suite)."""
    gap = GapPolicy(ETA)
    weights = CostWeights(1.0, 1.0)
    grid = RobustnessGrid(samples=50)
    out = {}
    for l in (1, 2, 3):
        out[l] = enumerate_needle_channels(
            model, X0, nominal, l, weights, gap, XF, grid=grid, jobs=2
        )
    return out


def simple_control(events=(), initial=(0.0, 0.0, 0.0, 0.0), t_f=1.5):
    """Four-channel 0/1 control with the given (time, channel) events."""
    return BangBangControl(
        bounds=ChannelBounds(lower=(0.0,) * 4, upper=(1.0,) * 4),
        initial_values=initial,
        events=tuple(SwitchingEvent(t, ch) for t, ch in events),
        final_time=t_f,
    )


@pytest.fixture
def cross_control():
    """Control exercising several channels; used by differential tests."""
    return simple_control(
        events=((0.2, 1), (0.4, 3), (0.7, 1), (1.1, 3)), t_f=1.5
    )


class ScalarIntegrator:
    """dx/dt = u with one control channel: everything in closed form."""

    state_dim = 1
    control_dim = 1

    def rhs(self, t, x, u):
        return np.array([u[0]])

    def jacobian_x(self, t, x, u):
        return np.zeros((1, 1))

    def kernel_params(self):
        return None

    def control_fields(self):
        return None


@pytest.fixture
def scalar_model():
    return ScalarIntegrator()


def scalar_control(times, t_f=1.0, u0=0.0):
    """Single-channel 0/1 control switching at the given times."""
    return BangBangControl(
        bounds=ChannelBounds(lower=(0.0,), upper=(1.0,)),
        initial_values=(u0,),
        events=tuple(SwitchingEvent(t, 1) for t in times),
        final_time=t_f,
    )
