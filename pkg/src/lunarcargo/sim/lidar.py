"""Raycast lidar over the heightfield world, with cargo self-occlusion.

Scans are returned in the rover body frame (extrinsics applied) so the
odometry pipeline estimates body motion directly. The loaded cargo is part of
the ray world: rays in the rear sector hit its shell at close range, which is
exactly what the occlusion contract requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import Pose3, compose, quat_from_axis_angle
from ..pointcloud import PointCloud
from .cargo import CargoState, cargo_solids, SUPPORT_BED, SUPPORT_LATCHED
from .params import CargoParams, RoverParams
from .rover import RoverState
from .world import SimNoise, World, raycast

SCAN_PERIOD = 0.1


@dataclass(frozen=True)
class LidarMount:
    name: str
    extrinsic: Pose3
    fov_azimuth: float
    fov_elevation: float
    channels: int
    azimuth_steps: int
    range_max: float
    occluded_sector_when_cargo: Optional[tuple[float, float]] = None

    def occluded_interval(self, cargo_loaded: bool) -> Optional[tuple[float, float]]:
        """Azimuth interval blocked by the cargo; empty unless it is loaded."""
        return self.occluded_sector_when_cargo if cargo_loaded else None

    def ray_directions(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit rays in the sensor frame plus each ray's azimuth."""
        az = -0.5 * self.fov_azimuth + (np.arange(self.azimuth_steps) + 0.5) * (
            self.fov_azimuth / self.azimuth_steps
        )
        el = (
            np.linspace(-0.5 * self.fov_elevation, 0.5 * self.fov_elevation, self.channels)
            if self.channels > 1
            else np.zeros(1)
        )
        azg, elg = np.meshgrid(az, el)
        ce = np.cos(elg)
        dirs = np.stack([ce * np.cos(azg), ce * np.sin(azg), np.sin(elg)], axis=-1)
        return dirs.reshape(-1, 3), azg.reshape(-1)


def default_mounts(rp: RoverParams, azimuth_steps: int = 512, channels: int = 32) -> dict[str, LidarMount]:
    """The three mounts: navigation on the cab, ground-facing, and rear."""
    pitch_down_40 = Pose3(t=np.array([1.56, 0.0, rp.cab_top_z - 0.05]),
                          q=quat_from_axis_angle((0, 1, 0), math.radians(40)))
    return {
        "nav_top": LidarMount(
            "nav_top",
            Pose3.from_translation(1.56, 0.0, rp.cab_top_z),
            2 * math.pi, math.radians(45.0), channels, azimuth_steps, 60.0,
            occluded_sector_when_cargo=(2 * math.pi / 3, 4 * math.pi / 3),
        ),
        "ground_top": LidarMount(
            "ground_top", pitch_down_40,
            2 * math.pi, math.radians(90.0), max(8, channels // 2), max(64, azimuth_steps // 2), 30.0,
        ),
        "rear": LidarMount(
            "rear",
            Pose3.from_yaw(math.pi, -1.35, 0.0, 0.65),
            math.radians(200.0), math.radians(60.0), max(8, channels // 2), max(64, azimuth_steps // 2), 40.0,
        ),
    }


def simulate_lidar(
    world: World,
    rover: RoverState,
    cargo: CargoState,
    mount: LidarMount,
    noise: SimNoise,
    stamp: float = 0.0,
    rover_params: Optional[RoverParams] = None,
    cargo_params: Optional[CargoParams] = None,
) -> PointCloud:
    """One full scan: nearest hits with Gaussian range noise, body frame."""
    rp = rover_params or RoverParams()
    cp = cargo_params or CargoParams()

    ground_z = float(world.ground_height(rover.pose.x, rover.pose.y))
    body = rover.pose.to_pose3(ground_z)
    sensor = compose(body, mount.extrinsic)

    dirs_sensor, az = mount.ray_directions()
    rot = sensor.rotation_matrix
    dirs_world = dirs_sensor @ rot.T
    origins = np.broadcast_to(sensor.t, dirs_world.shape).copy()

    extra = cargo_solids(cargo, cp)
    t = raycast(world, origins, dirs_world, mount.range_max, extra_solids=extra)
    hit = np.isfinite(t)
    n = int(hit.sum())
    rng = noise.lidar_rng(mount.name)
    ranges = t[hit] + rng.standard_normal(n) * noise.lidar_range_std
    ranges = np.maximum(ranges, 0.05)

    pts_sensor = dirs_sensor[hit] * ranges[:, None]
    pts_body = mount.extrinsic.apply(pts_sensor)
    # per-column firing time across the mechanical sweep
    col = (az[hit] + 0.5 * mount.fov_azimuth) / mount.fov_azimuth
    stamps = stamp + np.clip(col, 0.0, 1.0) * SCAN_PERIOD
    return PointCloud(pts_body, stamps, stamp=stamp, frame=f"body/{mount.name}")


def carried_cargo(cargo: CargoState) -> bool:
    return cargo.support in (SUPPORT_BED, SUPPORT_LATCHED)


def body_self_mask(cloud: PointCloud, rp: RoverParams) -> np.ndarray:
    """True for points outside the rover/cargo exclusion box (keepers)."""
    x, y, z = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    inside = (
        (x >= rp.body_crop_x[0]) & (x <= rp.body_crop_x[1])
        & (np.abs(y) <= rp.body_crop_half_y)
        & (z >= rp.body_crop_z[0]) & (z <= rp.body_crop_z[1])
    )
    return ~inside
