"""Model-predictive path tracking.

A finite-horizon problem (15 steps, 0.25 s apart) over Frenet-frame error
dynamics with a first-order yaw-rate lag: speed is pinned to the curvature
schedule (the speed cost is optimal by construction) and the yaw-rate command
sequence is solved by iterated linearization around the nonlinear rollout,
warm-started from the previous solution shifted one step. The first command
is emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import Pose2, TwistCommand, wrap_heading

FORWARD = "forward"
REVERSE = "reverse"
END_RAMP_DISTANCE = 2.0      # linear slowdown window before the path end
SHORT_MOTION_LENGTH = 0.30   # below this, creep behaviour engages


@dataclass
class TrackerConfig:
    horizon_steps: int = 15
    step_dt: float = 0.25
    v_max: float = 1.5
    v_min: float = 0.15
    curvature_gain: float = 4.0
    lag_tau: float = 0.4
    w_cross_track: float = 10.0
    w_heading: float = 2.0
    w_speed: float = 1.0
    w_effort: float = 0.1
    done_tolerance: float = 0.05
    goal_offset: float = 0.0
    omega_max: float = 1.0
    done_speed: float = 0.1
    creep_speed: float = 0.08

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.done_tolerance <= 0:
            raise ValueError("done_tolerance must be positive")


@dataclass
class PathWindow:
    """Target poses ahead of the rover, ordered by arc length, one direction.

    `distance_to_end` is measured from the rover's projection at window-build
    time; `s_ref` is that projection in the window's local arc coordinate so a
    later re-projection can correct for movement within the same window.
    """

    poses: np.ndarray            # (M, 3): x, y, heading (taught headings)
    direction: str = FORWARD
    distance_to_end: float = 0.0
    s_ref: float = 0.0

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 3)
        if self.direction not in (FORWARD, REVERSE):
            raise ValueError("direction must be forward or reverse")

    def __len__(self) -> int:
        return self.poses.shape[0]

    def arc(self) -> np.ndarray:
        d = np.linalg.norm(np.diff(self.poses[:, :2], axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(d)])

    def curvatures(self) -> np.ndarray:
        """Signed curvature per pose by three-point circumcircle."""
        p = self.poses[:, :2]
        m = len(p)
        k = np.zeros(m)
        if m < 3:
            return k
        a, b, c = p[:-2], p[1:-1], p[2:]
        ab = b - a
        bc = c - b
        ac = c - a
        cross = ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]
        denom = np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1) * np.linalg.norm(ac, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            kk = np.where(denom > 1e-9, 2.0 * cross / np.maximum(denom, 1e-12), 0.0)
        k[1:-1] = kk
        k[0] = k[1] if m > 2 else 0.0
        k[-1] = k[-2]
        return k


def project_onto_window(window: PathWindow, x: float, y: float):
    """(arc position, signed lateral offset, path heading, segment index).

    The lateral sign is positive left of the path-heading direction.
    """
    p = window.poses[:, :2]
    if len(p) == 1:
        hp = window.poses[0, 2]
        dx, dy = x - p[0, 0], y - p[0, 1]
        e_lat = -math.sin(hp) * dx + math.cos(hp) * dy
        return 0.0, e_lat, hp, 0
    a = p[:-1]
    ab = p[1:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    rel = np.array([x, y]) - a
    u = np.clip(np.einsum("ij,ij->i", rel, ab) / np.maximum(denom, 1e-12), 0.0, 1.0)
    proj = a + u[:, None] * ab
    d2 = np.einsum("ij,ij->i", rel - u[:, None] * ab, rel - u[:, None] * ab)
    i = int(np.argmin(d2))
    arc = window.arc()
    s = float(arc[i] + u[i] * math.sqrt(max(denom[i], 0.0)))
    h0, h1 = window.poses[i, 2], window.poses[i + 1, 2]
    hp = wrap_heading(h0 + u[i] * wrap_heading(h1 - h0))
    dx, dy = x - proj[i, 0], y - proj[i, 1]
    e_lat = -math.sin(hp) * dx + math.cos(hp) * dy
    return s, e_lat, hp, i


def schedule_speed(window: PathWindow, cfg: TrackerConfig) -> float:
    """Curvature-scheduled target speed, ramped down near the path end; signed."""
    if len(window) == 0:
        raise ValueError("empty path window")
    kmax = float(np.abs(window.curvatures()).max()) if len(window) >= 3 else 0.0
    v = cfg.v_max / (1.0 + cfg.curvature_gain * kmax)
    v = min(cfg.v_max, max(cfg.v_min, v))
    ramp = min(1.0, max(0.0, window.distance_to_end) / END_RAMP_DISTANCE)
    v = cfg.v_min + (v - cfg.v_min) * ramp
    return v if window.direction == FORWARD else -v


def speed_profile_for_length(path_length: float, cfg: TrackerConfig) -> TrackerConfig:
    """Short motions (< 30 cm) creep and tighten the completion tolerance."""
    if path_length < 0:
        raise ValueError("path_length must be >= 0")
    if path_length < SHORT_MOTION_LENGTH:
        return replace(cfg, v_max=cfg.creep_speed, v_min=min(cfg.v_min, cfg.creep_speed),
                       done_tolerance=0.01)
    return cfg


def remaining_distance(state: Pose2, window: PathWindow, cfg: TrackerConfig) -> float:
    """Longitudinal distance to (path end - goal_offset); negative = overshot."""
    if len(window) == 0:
        return 0.0
    s, _, _, _ = project_onto_window(window, state.x, state.y)
    return window.distance_to_end - (s - window.s_ref) - cfg.goal_offset


def check_done(state: Pose2, window: PathWindow, cfg: TrackerConfig,
               speed: float = 0.0) -> bool:
    """Path complete: within tolerance of (end - goal_offset), nearly stopped."""
    if len(window) == 0:
        return True
    return abs(remaining_distance(state, window, cfg)) <= cfg.done_tolerance \
        and abs(speed) <= cfg.done_speed


@dataclass
class MpcDiagnostics:
    e_lat: float = 0.0
    e_heading: float = 0.0
    cost: float = 0.0
    degraded: bool = False


def mpc_step(
    state: Pose2,
    yaw_rate: float,
    window: PathWindow,
    cfg: TrackerConfig,
    warm_start: Optional[np.ndarray] = None,
) -> tuple[TwistCommand, np.ndarray, MpcDiagnostics]:
    """One MPC solve; returns the command, the full sequence (next warm start),
    and solve diagnostics. Deterministic for fixed inputs."""
    if len(window) == 0:
        return TwistCommand(0.0, 0.0), np.zeros(cfg.horizon_steps), MpcDiagnostics()

    v_cmd = schedule_speed(window, cfg)
    s0, e_lat0, hp0, _ = project_onto_window(window, state.x, state.y)
    e_th0 = wrap_heading(state.heading - hp0)
    arc = window.arc()
    curv = window.curvatures()

    H = cfg.horizon_steps
    dt = cfg.step_dt
    a = math.exp(-dt / cfg.lag_tau) if cfg.lag_tau > 1e-9 else 0.0

    # reference arc positions and curvature feedforward along the horizon
    s_targets = s0 + np.arange(1, H + 1) * abs(v_cmd) * dt
    s_targets = np.minimum(s_targets, arc[-1])
    kappa = np.interp(s_targets, arc, curv) if len(window) > 1 else np.zeros(H)

    u = np.zeros(H) if warm_start is None else np.asarray(warm_start, dtype=np.float64).copy()
    z0 = np.array([e_lat0, e_th0, yaw_rate])
    sq_w = np.array([math.sqrt(cfg.w_cross_track), math.sqrt(cfg.w_heading)])

    def rollout(useq):
        z = np.empty((H + 1, 3))
        z[0] = z0
        for k in range(H):
            e_lat, e_th, om = z[k]
            om1 = a * om + (1 - a) * useq[k]
            z[k + 1, 0] = e_lat + v_cmd * math.sin(e_th) * dt
            z[k + 1, 1] = e_th + (om1 - kappa[k] * abs(v_cmd)) * dt
            z[k + 1, 2] = om1
        return z

    degraded = False
    for _pass in range(2):
        z = rollout(u)
        # time-varying Jacobians around the rollout
        A = np.zeros((H, 3, 3))
        A[:, 0, 0] = 1.0
        A[:, 0, 1] = v_cmd * dt * np.cos(z[:-1, 1])
        A[:, 1, 1] = 1.0
        A[:, 1, 2] = a * dt
        A[:, 2, 2] = a
        B = np.array([0.0, (1 - a) * dt, (1 - a)])
        # sensitivities G[k] = d z_{k+1} / d u_j for j <= k
        G = np.zeros((H, 3, H))
        M = np.zeros((3, H))
        for k in range(H):
            M = A[k] @ M
            M[:, k] += B
            G[k] = M
        # weighted least squares on [e_lat, e_th] rows of z[1:]
        rows = []
        rhs = []
        for k in range(H):
            for d_idx in range(2):
                rows.append(sq_w[d_idx] * G[k, d_idx])
                rhs.append(sq_w[d_idx] * z[k + 1, d_idx])
        Jm = np.array(rows)
        r = np.array(rhs)
        Hm = Jm.T @ Jm + cfg.w_effort * np.eye(H)
        g = Jm.T @ r + cfg.w_effort * u
        try:
            du = np.linalg.solve(Hm, -g)
        except np.linalg.LinAlgError:
            degraded = True
            break
        if not np.all(np.isfinite(du)):
            degraded = True
            break
        u = u + du

    if degraded:
        # proportional fallback toward the path
        sign = 1.0 if v_cmd >= 0 else -1.0
        omega = -0.8 * sign * e_lat0 - 1.5 * e_th0
        u = np.full(H, omega)
    z = rollout(u)
    cost = float(
        cfg.w_cross_track * (z[1:, 0] ** 2).sum()
        + cfg.w_heading * (z[1:, 1] ** 2).sum()
        + cfg.w_effort * (u ** 2).sum()
    )
    omega0 = float(np.clip(u[0], -cfg.omega_max, cfg.omega_max))
    warm_next = np.concatenate([u[1:], u[-1:]])
    return (
        TwistCommand(v_cmd, omega0),
        warm_next,
        MpcDiagnostics(e_lat0, e_th0, cost, degraded),
    )


class MpcTracker:
    """Stateful wrapper owning the warm-start slot of a single control loop."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self._warm: Optional[np.ndarray] = None

    def reset(self) -> None:
        self._warm = None

    def step(self, state: Pose2, yaw_rate: float, window: PathWindow) -> tuple[TwistCommand, MpcDiagnostics]:
        cmd, warm, diag = mpc_step(state, yaw_rate, window, self.cfg, self._warm)
        self._warm = warm
        return cmd, diag


@dataclass
class TrackedPath:
    """A full direction-uniform target path with arc-windowed projection."""

    poses: np.ndarray            # (N, 3)
    direction: str = FORWARD
    window_behind: float = 1.0
    window_ahead: float = 8.0

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 3)
        d = np.linalg.norm(np.diff(self.poses[:, :2], axis=0), axis=1)
        self._arc = np.concatenate([[0.0], np.cumsum(d)])
        self._last_idx = 0

    def length(self) -> float:
        return float(self._arc[-1]) if len(self._arc) else 0.0

    def window_at(self, x: float, y: float) -> PathWindow:
        """Local window around the rover; the search is arc-windowed around the
        previous match so nearby opposite-direction branches are not captured."""
        n = self.poses.shape[0]
        lo = np.searchsorted(self._arc, self._arc[self._last_idx] - 12.0)
        hi = min(n, int(np.searchsorted(self._arc, self._arc[self._last_idx] + 12.0)) + 1)
        seg = PathWindow(self.poses[lo:hi], self.direction, 0.0)
        s, _, _, i = project_onto_window(seg, x, y)
        self._last_idx = min(n - 1, lo + i)
        s_abs = float(self._arc[lo]) + s
        w_lo = int(np.searchsorted(self._arc, s_abs - self.window_behind))
        w_hi = min(n, int(np.searchsorted(self._arc, s_abs + self.window_ahead)) + 1)
        w_lo = min(w_lo, n - 1)
        if w_hi - w_lo < 2:
            w_lo = max(0, w_hi - 2)
        return PathWindow(
            self.poses[w_lo:w_hi], self.direction,
            distance_to_end=float(self._arc[-1]) - s_abs,
            s_ref=s_abs - float(self._arc[w_lo]),
        )
