"""Vehicle and cargo geometry shared by the simulator, mission logic and UI fixtures.

All offsets are in the rover body frame: origin at the rear-axle center
(the control point), x forward, y left, z up from the ground contact plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_SPEED = 13.0 / 3.6          # 13 km/h hardware limit, m/s
UNLOADED_MASS = 800.0           # kg
CARGO_MASS = 182.0              # kg
LEG_TRAVEL = 1.52               # m of telescopic extension per leg
CARGO_RAISE_ABOVE_DECK = 0.5    # m the legs lift the cargo above the bed


@dataclass
class RoverParams:
    wheelbase: float = 1.8
    width: float = 1.5
    min_turn_radius: float = 3.0
    steering_lag_tau: float = 0.4
    bed_height: float = 1.0          # cargo deck surface above ground
    cab_rear_x: float = 1.3          # rear face of the cab, ahead of the rear axle
    cab_top_z: float = 2.1
    v_max: float = 1.5               # scenario operating speed, <= MAX_SPEED
    v_min: float = 0.15
    omega_max: float = 1.0
    mass: float = UNLOADED_MASS
    # body-frame exclusion box for lidar self-returns: x range, |y|, z range
    body_crop_x: tuple[float, float] = (-2.6, 2.9)
    body_crop_half_y: float = 1.1
    body_crop_z: tuple[float, float] = (-0.2, 2.9)


@dataclass
class CargoParams:
    length: float = 2.2              # along rover x
    width: float = 1.6
    height: float = 1.6
    mount_x: float = 0.0             # cargo center over the rear axle
    cab_gap: float = 0.2             # clearance to the cab when seated
    # deployed feet in the cargo frame; splayed so the rover (width 1.5) keeps
    # +-15 cm of lateral clearance when driving between them
    leg_feet: np.ndarray = field(
        default_factory=lambda: np.array(
            [[1.05, 0.90], [1.05, -0.90], [-1.05, 0.90], [-1.05, -0.90]]
        )
    )
    leg_rate: float = 0.15           # m/s of telescopic travel
    latch_rate: float = 0.8          # latch position fraction per second
    latch_contact: float = 0.85      # hooks touch the rod at this position
    latch_current_base: float = 1.2  # A while moving free
    latch_current_slope: float = 60.0  # A per unit position past contact
    latch_current_threshold: float = 8.0  # A, "securely clamped" proxy
