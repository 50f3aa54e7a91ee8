"""The 10 Hz navigation loop: simulated sensing, continuous lidar odometry,
teach recording, and repeat localization with the EMA skip policy.

One odometry instance runs for the whole mission, so the teach graph's edges
(odometry deltas) and the repeat estimator live in the same frame, anchored at
the mission-start body pose. Skip decisions consume a deterministic runtime
model rather than wall time so that replays are bit-identical; measured wall
time is recorded in the diagnostics alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .geometry import Pose2, Pose3, TwistCommand, compose, invert, planar_project
from .localizer import EmaState, LocPrior, SubmapFollower, should_skip, update_ema
from .odometry import IcpConfig, LocalMap, estimate_normals, register_scan, update_local_map
from .pointcloud import PointCloud, voxel_downsample
from .sim.cargo import CargoState, sync_latched_pose
from .sim.lidar import body_self_mask, default_mounts, simulate_lidar
from .sim.rover import RoverState, step_rover
from .sim.world import Scenario
from .teach_graph import TeachGraph, metric_embedding


@dataclass
class RuntimeModel:
    """Deterministic compute-time proxy for the estimator lanes."""

    odom_base: float = 0.004
    odom_per_point: float = 8e-7
    loc_base: float = 0.005
    loc_per_point: float = 8e-7
    loc_per_iteration: float = 0.0012
    injected_localization: float = 0.0

    def odometry(self, n_points: int) -> float:
        return self.odom_base + self.odom_per_point * n_points

    def localization(self, n_scan: int, n_map: int, iterations: int) -> float:
        return (
            self.loc_base
            + self.loc_per_point * (n_scan + n_map)
            + self.loc_per_iteration * iterations
            + self.injected_localization
        )


@dataclass
class CycleDiag:
    t: float
    published_at: float
    odom_converged: bool
    odom_iterations: int
    localized: bool = False
    skipped: bool = False
    loc_inlier: float = 0.0
    loc_runtime: float = 0.0
    wall_runtime: float = 0.0
    submap_id: int = -1
    ema_runtime: float = 0.0


class TrackingLost(RuntimeError):
    pass


class TeachSession:
    """Accumulates odometry into graph vertices while a teach drive runs."""

    def __init__(self, graph: TeachGraph, submap_stride: int):
        self.graph = graph
        self.submap_stride = submap_stride
        self.delta = Pose3.identity()

    def _submap_due(self) -> bool:
        return self.graph._next_id % self.submap_stride == 0

    def on_motion(self, odom_delta: Pose3, stamp: float, submap_source) -> None:
        self.delta = compose(self.delta, odom_delta)
        submap = submap_source() if self._submap_due() else None
        v = self.graph.record_pose(self.delta, submap=submap, stamp=stamp)
        if v is not None:
            self.delta = Pose3.identity()

    def bookmark(self, stamp: float, submap_source) -> int:
        v = self.graph.bookmark(self.delta, stamp=stamp, submap=submap_source())
        self.delta = Pose3.identity()
        return v.id

    def rebase(self) -> None:
        """After a branch/repeat the rover sits at the head again."""
        self.delta = Pose3.identity()


class RepeatSession:
    """Pose estimation relative to the taught network during a repeat."""

    def __init__(self, graph: TeachGraph, x_start: Pose3, ema: EmaState,
                 icp: IcpConfig, embedding: Optional[dict[int, Pose3]] = None):
        self.graph = graph
        self.embedding = embedding if embedding is not None else metric_embedding(graph)
        self.follower = SubmapFollower(graph)
        self.x_path = x_start
        self.prior = LocPrior(x_start, Pose3.identity())
        self.ema = ema
        self.icp = icp
        self.failures = 0

    def dead_reckon(self, odom_delta: Pose3) -> None:
        self.x_path = compose(self.x_path, odom_delta)
        self.prior = self.prior.advanced(odom_delta)

    def try_localize(self, scan: PointCloud, model: RuntimeModel) -> tuple[bool, CycleDiag]:
        diag = CycleDiag(0.0, 0.0, True, 0)
        vid = self.follower.select(self.x_path, self.embedding)
        submap: LocalMap = self.graph.submaps[vid]
        anchor = self.embedding[vid]
        seed = LocPrior(compose(invert(anchor), self.prior.last_loc_pose),
                        self.prior.odom_since_loc)
        result = register_scan(scan, submap, seed.seed(), self.icp)
        runtime = model.localization(len(scan), len(submap), result.iterations)
        self.ema = update_ema(self.ema, runtime)
        diag.localized = result.converged
        diag.loc_inlier = result.inlier_fraction
        diag.loc_runtime = runtime
        diag.wall_runtime = result.runtime
        diag.submap_id = vid
        diag.ema_runtime = self.ema.ema_runtime
        if result.converged:
            self.x_path = compose(anchor, result.pose)
            self.prior = LocPrior(self.x_path, Pose3.identity())
            self.failures = 0
            return True, diag
        self.failures += 1
        if self.failures >= 3:
            raise TrackingLost("three consecutive localization failures")
        return False, diag


class NavRig:
    """Owns the simulated truth and the full estimator stack for one mission."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 runtime_model: Optional[RuntimeModel] = None):
        self.scenario = scenario
        self.world = scenario.world
        self.noise = scenario.fresh_noise(seed)
        self.rover = RoverState(pose=scenario.start,
                                steering_lag_tau=scenario.rover_params.steering_lag_tau)
        from .sim.cargo import initial_cargo_state

        self.cargo = initial_cargo_state(scenario)
        if scenario.cargo_start == "on_rover":
            self.rover = self.rover.with_cargo(True)
        ov = scenario.lidar.get("nav_top")
        az = ov.azimuth_steps if ov and ov.azimuth_steps else 512
        ch = ov.channels if ov and ov.channels else 32
        self.mounts = default_mounts(scenario.rover_params, az, ch)
        if ov and ov.range_max:
            self.mounts["nav_top"] = replace(self.mounts["nav_top"], range_max=ov.range_max)
        self.t = 0.0
        self.dt = scenario.autonomy.scan_period
        self.model = runtime_model or RuntimeModel()
        self.icp = IcpConfig()
        self.local_map = LocalMap.empty(radius=40.0, voxel_size=scenario.autonomy.voxel)
        gz = float(self.world.ground_height(scenario.start.x, scenario.start.y))
        self.x_odom = scenario.start.to_pose3(gz)
        self.last_delta = Pose3.identity()
        self.expected_delta = Pose3.identity()
        self.odom_failures = 0
        self.estop_latched = False
        # telemetry
        self.true_log: list[tuple[float, Pose2]] = []
        self.est_log: list[tuple[float, Pose2]] = []
        self.diags: list[CycleDiag] = []
        self.force_skip: Optional[Callable[[float], bool]] = None
        self._travel = 0.0
        self._synced_cargo()

    # -- truth side ---------------------------------------------------------

    def _synced_cargo(self) -> None:
        gz = float(self.world.ground_height(self.rover.pose.x, self.rover.pose.y))
        self.cargo = sync_latched_pose(self.cargo, self.rover.pose, gz,
                                       self.scenario.rover_params, self.scenario.cargo_params)

    def body_pose3(self) -> Pose3:
        gz = float(self.world.ground_height(self.rover.pose.x, self.rover.pose.y))
        return self.rover.pose.to_pose3(gz)

    def apply(self, cmd: TwistCommand) -> None:
        if self.estop_latched:
            cmd = TwistCommand(0.0, 0.0)
        prev = self.rover.pose
        # motion-model rollout (command + lag + measured yaw rate, no slip):
        # the estimator's kinematic prior, equivalent to wheel odometry / gyro
        self.expected_delta = self._model_delta(cmd)
        self.rover = step_rover(self.rover, cmd, self.dt, self.noise)
        self._travel += math.hypot(self.rover.pose.x - prev.x, self.rover.pose.y - prev.y)
        self._synced_cargo()
        self.t += self.dt

    def _model_delta(self, cmd: TwistCommand) -> Pose3:
        if not cmd.is_finite():
            return Pose3.identity()
        dt = self.dt
        tau = self.rover.steering_lag_tau
        if tau > 1e-9:
            decay = math.exp(-dt / tau)
            yaw_avg = cmd.omega + (self.rover.yaw_rate - cmd.omega) * (tau / dt) * (1.0 - decay)
        else:
            yaw_avg = cmd.omega
        arc = cmd.v * dt
        dth = yaw_avg * dt
        if abs(dth) > 1e-9:
            radius = arc / dth
            dx = radius * math.sin(dth)
            dy = radius * (1.0 - math.cos(dth))
        else:
            dx, dy = arc, 0.0
        return Pose3.from_yaw(dth, dx, dy, 0.0)

    def estop(self) -> None:
        self.estop_latched = True
        self.rover = self.rover.stopped()

    def clear_estop(self) -> None:
        self.estop_latched = False

    def advance_idle(self, duration: float) -> None:
        """Clock time that passes without motion (operator thinking, crane...)."""
        self.t += max(0.0, duration)

    # -- sensing + odometry -------------------------------------------------

    def raw_scan(self, mount_name: str = "nav_top") -> PointCloud:
        return simulate_lidar(
            self.world, self.rover, self.cargo, self.mounts[mount_name], self.noise,
            stamp=self.t, rover_params=self.scenario.rover_params,
            cargo_params=self.scenario.cargo_params,
        )

    def prepared_scan(self) -> PointCloud:
        scan = self.raw_scan("nav_top")
        scan = scan.masked(body_self_mask(scan, self.scenario.rover_params))
        scan = voxel_downsample(scan, self.scenario.autonomy.voxel)
        return estimate_normals(scan, self.icp.normal_neighbors)

    def odometry_cycle(self) -> tuple[Pose3, PointCloud, CycleDiag]:
        """One odometry update; returns (delta, prepared scan, diagnostics)."""
        scan = self.prepared_scan()
        if len(self.local_map) == 0:
            delta = Pose3.identity()
            diag = CycleDiag(self.t, self.t + self.model.odometry(len(scan)), True, 0)
        else:
            prior = compose(self.x_odom, self.expected_delta)
            res = register_scan(scan, self.local_map, prior, self.icp)
            if res.converged:
                delta = compose(invert(self.x_odom), res.pose)
                self.x_odom = res.pose
                self.odom_failures = 0
            else:
                # dead reckon on the motion model until the scene matches again
                delta = self.expected_delta
                self.x_odom = prior
                self.odom_failures += 1
                if self.odom_failures >= 3:
                    raise TrackingLost("three consecutive odometry failures")
            diag = CycleDiag(self.t, self.t + self.model.odometry(len(scan)),
                             res.converged, res.iterations, wall_runtime=res.runtime)
        self.local_map = update_local_map(self.local_map, scan, self.x_odom)
        self.last_delta = delta
        self.true_log.append((self.t, self.rover.pose))
        return delta, scan, diag

    def submap_snapshot(self) -> LocalMap:
        """The current local map re-expressed in the current body frame."""
        cloud = self.local_map.cloud.transformed(invert(self.x_odom), frame="submap")
        return LocalMap(cloud, Pose3.identity(), self.local_map.radius,
                        self.local_map.voxel_size)

    def estimate_teach(self, diag: CycleDiag) -> Pose2:
        est = planar_project(self.x_odom)
        self.est_log.append((self.t, est))
        self.diags.append(diag)
        return est

    def estimate_repeat(self, session: RepeatSession, scan: PointCloud,
                        delta: Pose3, diag: CycleDiag) -> Pose2:
        session.dead_reckon(delta)
        forced = self.force_skip(self._travel) if self.force_skip else False
        skip = should_skip(session.ema) or forced
        if skip:
            session.ema = update_ema(session.ema, self.model.odometry(len(scan)))
            diag.skipped = True
            diag.ema_runtime = session.ema.ema_runtime
        else:
            ok, ldiag = session.try_localize(scan, self.model)
            diag.localized = ldiag.localized
            diag.loc_inlier = ldiag.loc_inlier
            diag.loc_runtime = ldiag.loc_runtime
            diag.submap_id = ldiag.submap_id
            diag.ema_runtime = ldiag.ema_runtime
        est = planar_project(session.x_path)
        self.est_log.append((self.t, est))
        self.diags.append(diag)
        return est


# ---------------------------------------------------------------------------
# Discrete-event cadence model for the 10 Hz publication contract.


@dataclass
class CadenceResult:
    publish_times: np.ndarray
    skipped: np.ndarray
    loc_started: np.ndarray
    correction_age: np.ndarray


def simulate_cadence(
    n_cycles: int,
    odom_runtime: Callable[[int], float],
    loc_runtime: Callable[[int], float],
    ema: EmaState,
    scan_period: float = 0.1,
) -> CadenceResult:
    """Two concurrent lanes: odometry publishes every scan; localization solves
    run when the EMA admits them and the previous solve has finished. Results
    apply in scan order; the correction age tracks how stale the latest
    localization is at each publication."""
    pub = np.zeros(n_cycles)
    skipped = np.zeros(n_cycles, dtype=bool)
    started = np.zeros(n_cycles, dtype=bool)
    age = np.zeros(n_cycles)
    odom_free = 0.0
    loc_free = 0.0
    last_corrected_scan = 0.0
    for k in range(n_cycles):
        t_scan = k * scan_period
        start = max(t_scan, odom_free)
        odom_free = start + odom_runtime(k)
        pub[k] = odom_free
        if should_skip(ema) or loc_free > t_scan:
            skipped[k] = True
            ema = update_ema(ema, odom_runtime(k))
        else:
            rt = loc_runtime(k)
            loc_free = t_scan + rt
            started[k] = True
            last_corrected_scan = t_scan
            ema = update_ema(ema, rt)
        age[k] = t_scan - last_corrected_scan
    return CadenceResult(pub, skipped, started, age)
