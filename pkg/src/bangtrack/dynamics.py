"""Controlled dynamics interface and the rigid-body attitude instance.

Models expose the right-hand side f(t, x, u) and its state Jacobian
df/dx; both are needed by the variational equations that seed the
end-point differentials. The rigid-body family additionally exposes its
parameters to the compiled propagation kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = (1.0, -1.0, 1.0)
DEFAULT_TORQUES = (
    (2.0, 1.0, 0.3),
    (-2.0, -1.0, -0.3),
    (0.0, 0.0, 1.0),
    (0.0, 0.0, -1.0),
)
DEFAULT_PERIODS = (0.7, 1.1, 1.3)
DEFAULT_PHASES = (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0)


class DynamicsModel:
    """Interface: rhs(t, x, u), jacobian_x(t, x, u), state_dim, control_dim.

    Subclasses backed by the compiled kernels return a KernelParams from
    kernel_params(); generic models return None and are integrated by the
    pure-Python path.
    """

    state_dim: int
    control_dim: int

    def rhs(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_x(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kernel_params(self):
        return None

    def control_fields(self):
        """For control-affine systems, the matrix B with column k the vector
        field multiplying u_k; None when not affine (disables the affine
        seeding shortcut)."""
        return None


@dataclass(frozen=True)
class RigidBodyParams:
    """Inertia ratios and normalized torque directions of the rigid body."""

    alpha: tuple[float, float, float] = DEFAULT_ALPHA
    torques: tuple[tuple[float, float, float], ...] = DEFAULT_TORQUES

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(
            self, "torques", tuple(tuple(float(v) for v in b) for b in self.torques)
        )
        if len(self.alpha) != 3 or any(len(b) != 3 for b in self.torques):
            raise ValueError("alpha must be length 3 and torques 3-vectors")
        if not all(np.isfinite(self.alpha)) or not all(
            np.isfinite(v) for b in self.torques for v in b
        ):
            raise ValueError("parameters must be finite")

    @property
    def num_torques(self) -> int:
        return len(self.torques)

    def torque_matrix(self) -> np.ndarray:
        """3 x m matrix whose column k is torque vector b^k."""
        return np.array(self.torques, dtype=float).T


@dataclass(frozen=True)
class PerturbationSpec:
    """Periodic inertia-ratio perturbation alpha_i + epsilon * h_i(t) with
    h_i(t) = amplitude_i * sin(2 pi t / period_i + phase_i), |amplitude_i| <= 1.
    """

    epsilon: float = 0.0
    periods: tuple[float, float, float] = DEFAULT_PERIODS
    phases: tuple[float, float, float] = DEFAULT_PHASES
    amplitudes: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if any(p <= 0 for p in self.periods):
            raise ValueError("periods must be positive")
        if any(abs(a) > 1.0 for a in self.amplitudes):
            raise ValueError("wave amplitudes must satisfy |amplitude| <= 1")

    def waves(self, t: float) -> np.ndarray:
        """h(t) per axis."""
        return np.array(
            [
                a * math.sin(2.0 * math.pi * t / p + ph)
                for a, p, ph in zip(self.amplitudes, self.periods, self.phases)
            ]
        )

    def alpha_at(self, params: RigidBodyParams, t: float) -> np.ndarray:
        return np.asarray(params.alpha, dtype=float) + self.epsilon * self.waves(t)


@dataclass(frozen=True)
class KernelParams:
    """Parameter pack consumed by the compiled rigid-body kernels."""

    alpha: np.ndarray
    torque_matrix: np.ndarray
    epsilon: float
    periods: np.ndarray
    phases: np.ndarray
    amplitudes: np.ndarray


def rigid_body_rhs(params: RigidBodyParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Euler equations in inertia-ratio form: gyroscopic coupling plus the
    torque contribution of each active channel."""
    a1, a2, a3 = params.alpha
    B = params.torque_matrix()
    bu = B @ np.asarray(u, dtype=float)
    return np.array(
        [
            a1 * x[1] * x[2] + bu[0],
            a2 * x[0] * x[2] + bu[1],
            a3 * x[0] * x[1] + bu[2],
        ]
    )


def rigid_body_jacobian(
    params: RigidBodyParams, x: np.ndarray, u: np.ndarray
) -> np.ndarray:
    a1, a2, a3 = params.alpha
    return np.array(
        [
            [0.0, a1 * x[2], a1 * x[1]],
            [a2 * x[2], 0.0, a2 * x[0]],
            [a3 * x[1], a3 * x[0], 0.0],
        ]
    )


def perturbed_rhs(
    params: RigidBodyParams,
    spec: PerturbationSpec,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Rigid-body rhs with alpha_i replaced by alpha_i + epsilon * h_i(t)."""
    a = spec.alpha_at(params, t)
    B = params.torque_matrix()
    bu = B @ np.asarray(u, dtype=float)
    return np.array(
        [
            a[0] * x[1] * x[2] + bu[0],
            a[1] * x[0] * x[2] + bu[1],
            a[2] * x[0] * x[1] + bu[2],
        ]
    )


class RigidBodyModel(DynamicsModel):
    """Unperturbed rigid-body attitude dynamics (autonomous)."""

    def __init__(self, params: RigidBodyParams | None = None):
        self.params = params if params is not None else RigidBodyParams()
        self.state_dim = 3
        self.control_dim = self.params.num_torques
        self._B = self.params.torque_matrix()

    def rhs(self, t, x, u):
        return rigid_body_rhs(self.params, x, u)

    def jacobian_x(self, t, x, u):
        return rigid_body_jacobian(self.params, x, u)

    def kernel_params(self):
        return KernelParams(
            alpha=np.asarray(self.params.alpha, dtype=float),
            torque_matrix=self._B,
            epsilon=0.0,
            periods=np.asarray(DEFAULT_PERIODS, dtype=float),
            phases=np.asarray(DEFAULT_PHASES, dtype=float),
            amplitudes=np.ones(3),
        )

    def control_fields(self):
        return self._B


class PerturbedRigidBodyModel(DynamicsModel):
    """Rigid body with time-periodic inertia-ratio perturbation."""

    def __init__(self, params: RigidBodyParams, spec: PerturbationSpec):
        self.params = params
        self.spec = spec
        self.state_dim = 3
        self.control_dim = params.num_torques
        self._B = params.torque_matrix()

    def rhs(self, t, x, u):
        return perturbed_rhs(self.params, self.spec, t, x, u)

    def jacobian_x(self, t, x, u):
        a = self.spec.alpha_at(self.params, t)
        return np.array(
            [
                [0.0, a[0] * x[2], a[0] * x[1]],
                [a[1] * x[2], 0.0, a[1] * x[0]],
                [a[2] * x[1], a[2] * x[0], 0.0],
            ]
        )

    def kernel_params(self):
        return KernelParams(
            alpha=np.asarray(self.params.alpha, dtype=float),
            torque_matrix=self._B,
            epsilon=self.spec.epsilon,
            periods=np.asarray(self.spec.periods, dtype=float),
            phases=np.asarray(self.spec.phases, dtype=float),
            amplitudes=np.asarray(self.spec.amplitudes, dtype=float),
        )

    def control_fields(self):
        return self._B
