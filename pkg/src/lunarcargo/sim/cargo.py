"""Smart-cargo model: latches with current feedback, four telescopic legs,
roll/pitch from the feet support plane, and an ultrasonic height sensor.

The module is quasistatic: `cargo_command` advances actuators by `dt` and then
resolves what the cargo is resting on (rover bed, its own legs, or a platform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..geometry import Pose2, Pose3, compose2
from .params import CargoParams, LEG_TRAVEL, RoverParams
from .world import Box, World

SUPPORT_LATCHED = "rover_latched"
SUPPORT_BED = "rover_bed"
SUPPORT_LEGS = "legs"
SUPPORT_PLATFORM = "platform"


@dataclass(frozen=True)
class CargoState:
    latched: bool = False
    latch_position: float = 0.0          # 0 clear .. 1 fully engaged
    latch_current: float = 0.0           # A
    leg_extension: np.ndarray = field(default_factory=lambda: np.zeros(4))
    roll: float = 0.0
    pitch: float = 0.0
    height_ultrasonic: float = 0.0       # cargo base above the ground beneath it
    pose: Pose3 = field(default_factory=Pose3)
    support: str = SUPPORT_PLATFORM
    platform_height: float = 0.0
    fault: Optional[str] = None

    def __post_init__(self):
        ext = np.asarray(self.leg_extension, dtype=np.float64).reshape(4).copy()
        ext.setflags(write=False)
        object.__setattr__(self, "leg_extension", ext)

    def planar(self) -> Pose2:
        from ..geometry import planar_project

        return planar_project(self.pose)


@dataclass
class CargoContext:
    """World/rover context the quasistatic solve needs."""

    world: World
    rover_pose: Optional[Pose2] = None
    rover_ground_z: float = 0.0
    rover_params: RoverParams = field(default_factory=RoverParams)
    params: CargoParams = field(default_factory=CargoParams)
    rover_stationary: bool = True


@dataclass(frozen=True)
class CargoAction:
    kind: str  # latch | unlatch | legs_extend | legs_retract
    targets: Optional[np.ndarray] = None

    @staticmethod
    def latch() -> "CargoAction":
        return CargoAction("latch")

    @staticmethod
    def unlatch() -> "CargoAction":
        return CargoAction("unlatch")

    @staticmethod
    def legs_extend(targets) -> "CargoAction":
        return CargoAction("legs_extend", np.asarray(targets, dtype=np.float64).reshape(4))

    @staticmethod
    def legs_retract(targets) -> "CargoAction":
        return CargoAction("legs_retract", np.asarray(targets, dtype=np.float64).reshape(4))


def bed_pose(rover_pose: Pose2, ground_z: float, rp: RoverParams, cp: CargoParams) -> Pose3:
    """World pose of a seated cargo's base center."""
    planar = compose2(rover_pose, Pose2(cp.mount_x, 0.0, 0.0))
    return planar.to_pose3(ground_z + rp.bed_height)


def feet_world_xy(cargo_planar: Pose2, cp: CargoParams) -> np.ndarray:
    return cargo_planar.apply(cp.leg_feet)


def _support_plane(feet_xy: np.ndarray, ext: np.ndarray, world: World, cp: CargoParams):
    """Base height plus roll/pitch for a leg-supported cargo."""
    ground = np.asarray(world.ground_height(feet_xy[:, 0], feet_xy[:, 1]), dtype=np.float64)
    tops = ground + ext
    base_z = float(tops.mean())
    x = cp.leg_feet[:, 0]
    y = cp.leg_feet[:, 1]
    b = float((tops * x).sum() / (x * x).sum())
    c = float((tops * y).sum() / (y * y).sum())
    pitch = math.atan(b)
    roll = math.atan(c)
    return base_z, roll, pitch, ground


def cargo_command(cargo: CargoState, action: CargoAction, dt: float, ctx: CargoContext) -> CargoState:
    """Advance latch/leg actuators by dt and resolve the support state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cp = ctx.params

    if action.kind == "latch":
        if not ctx.rover_stationary:
            return replace(cargo, fault="latch while rover moving")
        if np.any(cargo.leg_extension > 1e-3):
            return replace(cargo, fault="latch while legs extended")
        if cargo.support not in (SUPPORT_BED, SUPPORT_LATCHED):
            return replace(cargo, fault="latch with cargo off the bed")
        pos = min(1.0, cargo.latch_position + cp.latch_rate * dt)
        if pos <= cp.latch_contact:
            current = cp.latch_current_base
        else:
            current = cp.latch_current_base + cp.latch_current_slope * (pos - cp.latch_contact)
        latched = current >= cp.latch_current_threshold
        return replace(
            cargo,
            latch_position=pos,
            latch_current=current,
            latched=cargo.latched or latched,
            support=SUPPORT_LATCHED if (cargo.latched or latched) else cargo.support,
            fault=None,
        )

    if action.kind == "unlatch":
        if not ctx.rover_stationary:
            return replace(cargo, fault="unlatch while rover moving")
        pos = max(0.0, cargo.latch_position - cp.latch_rate * dt)
        still_engaged = pos >= cp.latch_contact
        support = cargo.support
        if not still_engaged and cargo.support == SUPPORT_LATCHED:
            support = SUPPORT_BED
        return replace(
            cargo,
            latch_position=pos,
            latch_current=cp.latch_current_base if pos > 0 else 0.0,
            latched=still_engaged and cargo.latched,
            support=support,
            fault=None,
        )

    if action.kind in ("legs_extend", "legs_retract"):
        targets = action.targets
        if targets is None or np.any(targets < -1e-9) or np.any(targets > LEG_TRAVEL + 1e-9):
            return replace(cargo, fault="leg target outside travel range")
        if cargo.latched:
            return replace(cargo, fault="leg motion while latched")
        step = cp.leg_rate * dt
        ext = cargo.leg_extension + np.clip(targets - cargo.leg_extension, -step, step)
        ext = np.clip(ext, 0.0, LEG_TRAVEL)
        return _resolve_support(replace(cargo, leg_extension=ext, fault=None), ctx)

    raise ValueError(f"unknown cargo action {action.kind!r}")


def _resolve_support(cargo: CargoState, ctx: CargoContext) -> CargoState:
    cp = ctx.params
    planar = cargo.planar()
    feet = feet_world_xy(planar, cp)
    base_legs, roll, pitch, ground = _support_plane(feet, cargo.leg_extension, ctx.world, cp)
    ground_center = float(ctx.world.ground_height(planar.x, planar.y))

    if cargo.support in (SUPPORT_BED, SUPPORT_LATCHED) and ctx.rover_pose is not None:
        bp = bed_pose(ctx.rover_pose, ctx.rover_ground_z, ctx.rover_params, cp)
        bed_z = float(bp.t[2])
        if base_legs > bed_z + 1e-6:
            # legs push past the bed: cargo now stands on its own feet
            pose = planar.to_pose3(base_legs)
            return replace(
                cargo, support=SUPPORT_LEGS, pose=pose, roll=roll, pitch=pitch,
                height_ultrasonic=base_legs - ground_center,
            )
        return replace(
            cargo, pose=bp, roll=0.0, pitch=0.0,
            height_ultrasonic=bed_z - ground_center,
        )

    if cargo.support == SUPPORT_LEGS:
        base = base_legs
        seated = False
        if ctx.rover_pose is not None:
            bp = bed_pose(ctx.rover_pose, ctx.rover_ground_z, ctx.rover_params, cp)
            under = float(np.linalg.norm(bp.t[:2] - np.array([planar.x, planar.y]))) < 0.5
            if under and base_legs <= float(bp.t[2]) + 1e-6:
                seated = True
                base = float(bp.t[2])
        if seated:
            return replace(
                cargo, support=SUPPORT_BED, pose=bp, roll=0.0, pitch=0.0,
                height_ultrasonic=base - ground_center,
            )
        base = max(base, ground_center)
        pose = planar.to_pose3(base)
        return replace(
            cargo, support=SUPPORT_LEGS, pose=pose, roll=roll, pitch=pitch,
            height_ultrasonic=base - ground_center,
        )

    # platform support: legs dangle, nothing changes geometrically
    return replace(cargo, height_ultrasonic=float(cargo.pose.t[2]) - ground_center)


def sync_latched_pose(cargo: CargoState, rover_pose: Pose2, ground_z: float,
                      rp: RoverParams, cp: CargoParams) -> CargoState:
    """Keep a latched/seated cargo rigidly on the bed as the rover moves."""
    if cargo.support not in (SUPPORT_LATCHED, SUPPORT_BED):
        return cargo
    bp = bed_pose(rover_pose, ground_z, rp, cp)
    return replace(cargo, pose=bp, height_ultrasonic=float(bp.t[2]) - ground_z)


def cargo_solids(cargo: CargoState, cp: CargoParams) -> list[Box]:
    """Solids for raycasting: the shell, plus leg boxes when standing."""
    planar = cargo.planar()
    base_z = float(cargo.pose.t[2])
    shell = Box(planar.x, planar.y, base_z, planar.heading, cp.length, cp.width, cp.height)
    solids = [shell]
    if cargo.support == SUPPORT_LEGS:
        feet = feet_world_xy(planar, cp)
        for i in range(4):
            x, y = feet[i]
            solids.append(Box(float(x), float(y), base_z - cargo.leg_extension[i],
                              planar.heading, 0.12, 0.12, float(cargo.leg_extension[i])))
    return solids


def crane_place_on_rover(cargo: CargoState, rover_pose: Pose2, ground_z: float,
                         rp: RoverParams, cp: CargoParams) -> CargoState:
    """Instantaneous scripted crane transfer onto the bed (unlatched)."""
    bp = bed_pose(rover_pose, ground_z, rp, cp)
    return replace(
        cargo, support=SUPPORT_BED, pose=bp, latched=False, latch_position=0.0,
        latch_current=0.0, leg_extension=np.zeros(4), roll=0.0, pitch=0.0,
        height_ultrasonic=float(bp.t[2]) - ground_z, fault=None,
    )


def crane_place_on_platform(cargo: CargoState, platform_pose: Pose2,
                            platform_top_z: float) -> CargoState:
    return replace(
        cargo, support=SUPPORT_PLATFORM, pose=platform_pose.to_pose3(platform_top_z),
        latched=False, latch_position=0.0, latch_current=0.0,
        leg_extension=np.zeros(4), roll=0.0, pitch=0.0,
        platform_height=platform_top_z, fault=None,
    )


def initial_cargo_state(scenario) -> CargoState:
    """Place the cargo per the scenario's `cargo start` directive."""
    from .world import LANDER_SIZE

    cargo = CargoState()
    if scenario.cargo_start == "none":
        # parked far outside any scenario geometry
        return crane_place_on_platform(cargo, Pose2(-1e6, -1e6, 0.0), 0.0)
    if scenario.cargo_start == "on_rover":
        gz = float(scenario.world.ground_height(scenario.start.x, scenario.start.y))
        cargo = crane_place_on_rover(cargo, scenario.start, gz,
                                     scenario.rover_params, scenario.cargo_params)
    elif scenario.cargo_start == "free" and scenario.cargo_free_pose is not None:
        gz = float(scenario.world.ground_height(scenario.cargo_free_pose.x, scenario.cargo_free_pose.y))
        cargo = crane_place_on_platform(cargo, scenario.cargo_free_pose, gz)
    else:
        lander = scenario.world.structures.get("lander")
        if lander is not None:
            gz = float(scenario.world.ground_height(lander.pose.x, lander.pose.y))
            cargo = crane_place_on_platform(cargo, lander.pose, gz + LANDER_SIZE[2])
    return cargo
