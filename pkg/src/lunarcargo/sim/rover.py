"""Planar rover dynamics: unicycle kinematics with first-order steering lag."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..geometry import Pose2, TwistCommand, wrap_heading
from .params import CARGO_MASS, MAX_SPEED, UNLOADED_MASS
from .world import SimNoise


@dataclass(frozen=True)
class RoverState:
    """Vehicle state at the rear-axle center (the control point)."""

    pose: Pose2 = Pose2()
    body_speed: float = 0.0
    yaw_rate: float = 0.0
    commanded_yaw_rate: float = 0.0
    steering_lag_tau: float = 0.4
    cargo_loaded: bool = False
    mass: float = UNLOADED_MASS
    fault: bool = False

    def with_cargo(self, loaded: bool) -> "RoverState":
        mass = UNLOADED_MASS + (CARGO_MASS if loaded else 0.0)
        return replace(self, cargo_loaded=loaded, mass=mass)

    def stopped(self) -> "RoverState":
        return replace(self, body_speed=0.0, yaw_rate=0.0, commanded_yaw_rate=0.0)


def step_rover(state: RoverState, cmd: TwistCommand, dt: float, noise: SimNoise) -> RoverState:
    """Advance one control period.

    The yaw rate relaxes toward the commanded value with time constant
    `steering_lag_tau`; the pose is integrated along the exact arc of the
    interval-average yaw rate. Multiplicative slip noise shortens the
    travelled arc (slip never adds distance) and perturbs the heading change.
    A non-finite command is rejected: the state is returned unchanged except
    for the raised fault flag.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not cmd.is_finite():
        return replace(state, fault=True)

    v = max(-MAX_SPEED, min(MAX_SPEED, cmd.v))
    tau = state.steering_lag_tau
    if tau > 1e-9:
        decay = math.exp(-dt / tau)
        yaw_rate = cmd.omega + (state.yaw_rate - cmd.omega) * decay
        # exact time average of the first-order response over the step
        yaw_avg = cmd.omega + (state.yaw_rate - cmd.omega) * (tau / dt) * (1.0 - decay)
    else:
        yaw_rate = cmd.omega
        yaw_avg = cmd.omega

    # two draws per step, always, to keep replay streams aligned
    n_v, n_w = noise.rng_slip.standard_normal(2)
    slip_v = max(0.0, 1.0 - abs(n_v) * noise.odometry_slip_std)
    slip_w = 1.0 + n_w * noise.odometry_slip_std

    arc = v * dt * slip_v
    dheading = yaw_avg * dt * slip_w
    h0 = state.pose.heading
    if abs(dheading) > 1e-9:
        radius = arc / dheading
        dx = radius * (math.sin(h0 + dheading) - math.sin(h0))
        dy = -radius * (math.cos(h0 + dheading) - math.cos(h0))
    else:
        hm = h0 + 0.5 * dheading
        dx = arc * math.cos(hm)
        dy = arc * math.sin(hm)

    return replace(
        state,
        pose=Pose2(state.pose.x + dx, state.pose.y + dy, wrap_heading(h0 + dheading)),
        body_speed=v * slip_v,
        yaw_rate=yaw_rate,
        commanded_yaw_rate=cmd.omega,
    )
