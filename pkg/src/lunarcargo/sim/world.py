"""2.5-D simulation world: heightfield terrain, convex solids, scenario files.

Scenario grammar (line oriented, `#` comments, whitespace-separated tokens):

    scenario <name>
    world extent <X> <Y> cell <size>
    terrain flat
    terrain seed <n> amplitude <m> smooth <cells>
    noise seed <n> slip <fraction> lidar_range <m>
    rover start <x> <y> <heading>
    rover <key> <value> [<key> <value> ...]
    lidar <mount> <key> <value> [...]
    autonomy <key> <value> [...]
    structure lander <x> <y> <heading>
    structure habitat <x> <y> <heading>
    marker apex <x> <y> <heading|auto>
    rock <x> <y> <height>
    rockfield count <n> hmin <m> hmax <m> clearance <m> seed <n>
    leg <from> <to> [via <x> <y> ...]
    cargo start <on_lander | on_rover | free <x> <y> <heading>>
    pad <x> <y> <radius>

Anchor names usable in `leg` lines: start, lander (the computed alignment
pose), apex, habitat (the computed dock approach pose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from ..geometry import Pose2, wrap_heading
from .params import CargoParams, RoverParams

LANDER_SIZE = (4.0, 2.2, 1.5)    # platform the crane serves
HABITAT_SIZE = (3.0, 3.0, 2.2)
HABITAT_DOCK_HEIGHT = 0.40       # target cargo base height at final alignment
LANDER_ALIGN_DISTANCE = 1.75     # rover centerline to lander face, mid-band


class ScenarioError(ValueError):
    """Scenario file problem, annotated with the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"scenario line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class Heightfield:
    x0: float
    y0: float
    cell: float
    z: np.ndarray  # (ny, nx)

    def height_at(self, x, y):
        """Bilinear terrain height; coordinates outside the grid clamp to the edge."""
        gx = np.clip((np.asarray(x, dtype=np.float64) - self.x0) / self.cell, 0.0, self.z.shape[1] - 1.001)
        gy = np.clip((np.asarray(y, dtype=np.float64) - self.y0) / self.cell, 0.0, self.z.shape[0] - 1.001)
        ix = gx.astype(np.int64)
        iy = gy.astype(np.int64)
        fx = gx - ix
        fy = gy - iy
        z = self.z
        h = (
            z[iy, ix] * (1 - fx) * (1 - fy)
            + z[iy, ix + 1] * fx * (1 - fy)
            + z[iy + 1, ix] * (1 - fx) * fy
            + z[iy + 1, ix + 1] * fx * fy
        )
        return h

    def max_height(self) -> float:
        return float(self.z.max())


@dataclass(frozen=True)
class Box:
    """Upright oriented box: yaw about +z, base at z0."""

    cx: float
    cy: float
    z0: float
    yaw: float
    lx: float
    ly: float
    lz: float

    def ray_hits(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        ox = origins[:, 0] - self.cx
        oy = origins[:, 1] - self.cy
        oz = origins[:, 2] - (self.z0 + 0.5 * self.lz)
        # into the box frame
        bx = c * ox + s * oy
        by = -s * ox + c * oy
        dx = c * dirs[:, 0] + s * dirs[:, 1]
        dy = -s * dirs[:, 0] + c * dirs[:, 1]
        dz = dirs[:, 2]
        t0 = np.zeros(len(origins))
        t1 = np.full(len(origins), np.inf)
        for o, d, half in ((bx, dx, 0.5 * self.lx), (by, dy, 0.5 * self.ly), (oz, dz, 0.5 * self.lz)):
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (-half - o) / d
                tb = (half - o) / d
            near = np.minimum(ta, tb)
            far = np.maximum(ta, tb)
            parallel = np.abs(d) < 1e-12
            inside = np.abs(o) <= half
            near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
            far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
            t0 = np.maximum(t0, near)
            t1 = np.minimum(t1, far)
        hit = (t0 <= t1) & (t1 > 0)
        t = np.where(t0 > 0, t0, t1)  # origin inside: exit point
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    cx: float
    cy: float
    cz: float
    r: float

    def ray_hits(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - np.array([self.cx, self.cy, self.cz])
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.r * self.r
        disc = b * b - c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = -b - sq
        t = np.where(t > 0, t, -b + sq)
        return np.where(ok & (t > 0), t, np.inf)


Solid = Union[Box, Sphere]


@dataclass
class Structure:
    name: str
    kind: str  # lander | habitat | marker
    pose: Pose2
    size: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def face_point(self, side: float = 1.0) -> np.ndarray:
        """Center of the +x face (habitat dock) or lateral face (lander, side=+-1)."""
        if self.kind == "habitat":
            off = np.array([0.5 * self.size[0], 0.0])
        else:
            off = np.array([0.0, side * 0.5 * self.size[1]])
        return self.pose.apply(off)


@dataclass
class SimNoise:
    """Deterministic noise source; identical seeds give identical trajectories."""

    odometry_slip_std: float = 0.01
    lidar_range_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed)
        slip_ss, nav_ss, ground_ss, rear_ss = ss.spawn(4)
        self.rng_slip = np.random.Generator(np.random.PCG64(slip_ss))
        self._lidar_rngs = {
            "nav_top": np.random.Generator(np.random.PCG64(nav_ss)),
            "ground_top": np.random.Generator(np.random.PCG64(ground_ss)),
            "rear": np.random.Generator(np.random.PCG64(rear_ss)),
        }

    def lidar_rng(self, mount_name: str) -> np.random.Generator:
        return self._lidar_rngs[mount_name]


@dataclass
class World:
    heightfield: Heightfield
    obstacles: list[Solid] = field(default_factory=list)
    structures: dict[str, Structure] = field(default_factory=dict)
    gravity_tag: str = "earth-analog"

    def ground_height(self, x, y):
        return self.heightfield.height_at(x, y)


def raycast(
    world: World,
    origins: np.ndarray,
    dirs: np.ndarray,
    range_max: float,
    extra_solids: Optional[list[Solid]] = None,
) -> np.ndarray:
    """Nearest hit distance per ray against terrain and solids; inf where none."""
    n = origins.shape[0]
    best = np.full(n, np.inf)
    for solid in list(world.obstacles) + list(extra_solids or []):
        best = np.minimum(best, solid.ray_hits(origins, dirs))
    best = np.minimum(best, _raycast_heightfield(world.heightfield, origins, dirs, range_max))
    return np.where(best <= range_max, best, np.inf)


def _raycast_heightfield(hf: Heightfield, origins, dirs, range_max: float) -> np.ndarray:
    n = origins.shape[0]
    step = 0.8 * hf.cell
    zmax = hf.max_height() + 1e-6
    t = np.full(n, 0.05)
    t_prev = t.copy()
    hit_lo = np.full(n, np.nan)
    hit_hi = np.full(n, np.nan)
    resolved = np.zeros(n, dtype=bool)

    def above(tv):
        p = origins + dirs * tv[:, None]
        return p[:, 2] - hf.height_at(p[:, 0], p[:, 1])

    prev_above = above(t) > 0
    # rays starting below terrain: treat as immediate contact at t0
    start_below = ~prev_above
    hit_lo[start_below] = 0.0
    hit_hi[start_below] = t[start_below]
    resolved |= start_below

    while True:
        active = ~resolved & (t < range_max)
        # climbing rays already above the highest terrain can never come back down
        p_z = origins[:, 2] + dirs[:, 2] * t
        active &= ~((dirs[:, 2] > 0) & (p_z > zmax))
        if not active.any():
            break
        t_prev[active] = t[active]
        t[active] = np.minimum(t[active] + step, range_max)
        gap = above(t)
        crossed = active & (gap <= 0)
        hit_lo[crossed] = t_prev[crossed]
        hit_hi[crossed] = t[crossed]
        resolved |= crossed
        ended = active & (t >= range_max) & ~crossed
        resolved |= ended  # miss

    have = np.isfinite(hit_lo)
    if have.any():
        lo = hit_lo[have]
        hi = hit_hi[have]
        o = origins[have]
        d = dirs[have]
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            p = o + d * mid[:, None]
            g = p[:, 2] - hf.height_at(p[:, 0], p[:, 1])
            below = g <= 0
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        out = np.full(n, np.inf)
        out[have] = 0.5 * (lo + hi)
        return out
    return np.full(n, np.inf)


# ---------------------------------------------------------------------------
# Scenario files


@dataclass
class LidarOverrides:
    azimuth_steps: Optional[int] = None
    channels: Optional[int] = None
    range_max: Optional[float] = None


@dataclass
class AutonomyParams:
    voxel: float = 0.2
    submap_stride: int = 5
    ema_alpha: float = 0.1
    ema_budget: float = 0.08
    scan_period: float = 0.1
    localization_every: int = 1


@dataclass
class Scenario:
    name: str
    world: World
    rover_params: RoverParams
    cargo_params: CargoParams
    noise: SimNoise
    start: Pose2
    cargo_start: str = "on_lander"
    cargo_free_pose: Optional[Pose2] = None
    lidar: dict[str, LidarOverrides] = field(default_factory=dict)
    autonomy: AutonomyParams = field(default_factory=AutonomyParams)
    legs: list[tuple[str, str, list[tuple[float, float]]]] = field(default_factory=list)
    anchors: dict[str, Pose2] = field(default_factory=dict)
    design_length: float = 0.0

    def fresh_noise(self, seed: Optional[int] = None) -> SimNoise:
        return SimNoise(
            self.noise.odometry_slip_std,
            self.noise.lidar_range_std,
            self.noise.seed if seed is None else seed,
        )


def _flatten_pad(hf: Heightfield, x: float, y: float, radius: float) -> None:
    xs = hf.x0 + np.arange(hf.z.shape[1]) * hf.cell
    ys = hf.y0 + np.arange(hf.z.shape[0]) * hf.cell
    gx, gy = np.meshgrid(xs, ys)
    r = np.hypot(gx - x, gy - y)
    w = np.clip(1.0 - r / radius, 0.0, 1.0) ** 2
    target = float(hf.height_at(x, y))
    hf.z = hf.z * (1 - w) + target * w


def _polyline_length(pts: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def _point_polyline_distance(p: np.ndarray, poly: np.ndarray) -> float:
    best = math.inf
    for a, b in zip(poly[:-1], poly[1:]):
        ab = b - a
        denom = float(ab @ ab)
        u = 0.0 if denom < 1e-12 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(p - (a + u * ab))))
    return best


class _Parser:
    def __init__(self, text: str, path: str = "<scenario>"):
        self.path = path
        self.lines = text.splitlines()
        self.name = "unnamed"
        self.extent = (100.0, 60.0)
        self.cell = 0.5
        self.terrain: tuple = ("flat",)
        self.noise_kw = dict(seed=0, slip=0.01, lidar_range=0.02)
        self.start: Optional[Pose2] = None
        self.rover_kw: dict[str, float] = {}
        self.lidar: dict[str, LidarOverrides] = {}
        self.autonomy_kw: dict[str, float] = {}
        self.structures: list[tuple[int, str, str, float, float, str]] = []
        self.rocks: list[tuple[float, float, float]] = []
        self.rockfield: Optional[dict[str, float]] = None
        self.legs: list[tuple[str, str, list[tuple[float, float]]]] = []
        self.cargo_start = "on_lander"
        self.cargo_free_pose: Optional[Pose2] = None
        self.pads: list[tuple[float, float, float]] = []

    def fail(self, i: int, msg: str):
        raise ScenarioError(i, msg)

    def fnum(self, i: int, tok: str) -> float:
        try:
            return float(tok)
        except ValueError:
            self.fail(i, f"expected a number, got {tok!r}")

    def parse(self):
        for i, raw in enumerate(self.lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            head = toks[0]
            handler = getattr(self, f"_d_{head}", None)
            if handler is None:
                self.fail(i, f"unknown directive {head!r}")
            handler(i, toks[1:])
        if self.start is None:
            self.fail(len(self.lines) or 1, "missing 'rover start' line")
        return self

    def _kv(self, i, toks) -> dict[str, str]:
        if len(toks) % 2 != 0:
            self.fail(i, "expected key/value pairs")
        return {toks[k]: toks[k + 1] for k in range(0, len(toks), 2)}

    def _d_scenario(self, i, toks):
        if not toks:
            self.fail(i, "scenario needs a name")
        self.name = toks[0]

    def _d_world(self, i, toks):
        if len(toks) != 5 or toks[0] != "extent" or toks[3] != "cell":
            self.fail(i, "usage: world extent <X> <Y> cell <size>")
        self.extent = (self.fnum(i, toks[1]), self.fnum(i, toks[2]))
        self.cell = self.fnum(i, toks[4])
        if self.cell <= 0:
            self.fail(i, "cell size must be positive")

    def _d_terrain(self, i, toks):
        if toks and toks[0] == "flat":
            self.terrain = ("flat",)
            return
        kv = self._kv(i, toks)
        try:
            amp = float(kv["amplitude"])
            fine = float(kv.get("fine", 0.12 * amp))
            self.terrain = ("noise", int(kv["seed"]), amp, float(kv["smooth"]), fine)
        except (KeyError, ValueError):
            self.fail(i, "usage: terrain seed <n> amplitude <m> smooth <cells> [fine <m>]")

    def _d_noise(self, i, toks):
        kv = self._kv(i, toks)
        for k, v in kv.items():
            if k not in self.noise_kw:
                self.fail(i, f"unknown noise key {k!r}")
            self.noise_kw[k] = int(v) if k == "seed" else self.fnum(i, v)

    def _d_rover(self, i, toks):
        if toks and toks[0] == "start":
            if len(toks) != 4:
                self.fail(i, "usage: rover start <x> <y> <heading>")
            self.start = Pose2(self.fnum(i, toks[1]), self.fnum(i, toks[2]), self.fnum(i, toks[3]))
            return
        for k, v in self._kv(i, toks).items():
            if not hasattr(RoverParams(), k):
                self.fail(i, f"unknown rover key {k!r}")
            self.rover_kw[k] = self.fnum(i, v)

    def _d_lidar(self, i, toks):
        if not toks:
            self.fail(i, "lidar needs a mount name")
        mount = toks[0]
        if mount not in ("nav_top", "ground_top", "rear"):
            self.fail(i, f"unknown lidar mount {mount!r}")
        ov = self.lidar.setdefault(mount, LidarOverrides())
        for k, v in self._kv(i, toks[1:]).items():
            if k == "azimuth_steps":
                ov.azimuth_steps = int(v)
            elif k == "channels":
                ov.channels = int(v)
            elif k == "range":
                ov.range_max = self.fnum(i, v)
            else:
                self.fail(i, f"unknown lidar key {k!r}")

    def _d_autonomy(self, i, toks):
        for k, v in self._kv(i, toks).items():
            if not hasattr(AutonomyParams(), k):
                self.fail(i, f"unknown autonomy key {k!r}")
            self.autonomy_kw[k] = self.fnum(i, v)

    def _d_structure(self, i, toks):
        if len(toks) != 4:
            self.fail(i, "usage: structure <lander|habitat> <x> <y> <heading>")
        kind = toks[0]
        if kind not in ("lander", "habitat"):
            self.fail(i, f"unknown structure kind {kind!r}")
        self.structures.append((i, kind, kind, self.fnum(i, toks[1]), self.fnum(i, toks[2]), toks[3]))

    def _d_marker(self, i, toks):
        if len(toks) != 4:
            self.fail(i, "usage: marker <name> <x> <y> <heading|auto>")
        self.structures.append((i, toks[0], "marker", self.fnum(i, toks[1]), self.fnum(i, toks[2]), toks[3]))

    def _d_rock(self, i, toks):
        if len(toks) != 3:
            self.fail(i, "usage: rock <x> <y> <height>")
        self.rocks.append((self.fnum(i, toks[0]), self.fnum(i, toks[1]), self.fnum(i, toks[2])))

    def _d_rockfield(self, i, toks):
        kv = self._kv(i, toks)
        try:
            self.rockfield = dict(
                count=int(kv["count"]), hmin=float(kv["hmin"]), hmax=float(kv["hmax"]),
                clearance=float(kv["clearance"]), seed=int(kv["seed"]),
            )
        except (KeyError, ValueError):
            self.fail(i, "usage: rockfield count <n> hmin <m> hmax <m> clearance <m> seed <n>")

    def _d_leg(self, i, toks):
        if len(toks) < 2:
            self.fail(i, "usage: leg <from> <to> [via <x> <y> ...]")
        vias: list[tuple[float, float]] = []
        rest = toks[2:]
        if rest:
            if rest[0] != "via" or (len(rest) - 1) % 2 != 0:
                self.fail(i, "leg via points must be x y pairs")
            vals = [self.fnum(i, t) for t in rest[1:]]
            vias = list(zip(vals[0::2], vals[1::2]))
        self.legs.append((toks[0], toks[1], vias))

    def _d_cargo(self, i, toks):
        if not toks or toks[0] != "start":
            self.fail(i, "usage: cargo start <on_lander|on_rover|none|free x y heading>")
        mode = toks[1]
        if mode in ("on_lander", "on_rover", "none"):
            self.cargo_start = mode
        elif mode == "free" and len(toks) == 5:
            self.cargo_start = "free"
            self.cargo_free_pose = Pose2(self.fnum(i, toks[2]), self.fnum(i, toks[3]), self.fnum(i, toks[4]))
        else:
            self.fail(i, "usage: cargo start <on_lander|on_rover|free x y heading>")

    def _d_pad(self, i, toks):
        if len(toks) != 3:
            self.fail(i, "usage: pad <x> <y> <radius>")
        self.pads.append((self.fnum(i, toks[0]), self.fnum(i, toks[1]), self.fnum(i, toks[2])))


def build_scenario(text: str, path: str = "<scenario>") -> Scenario:
    p = _Parser(text, path).parse()

    nx = int(round(p.extent[0] / p.cell)) + 1
    ny = int(round(p.extent[1] / p.cell)) + 1
    fine = None
    if p.terrain[0] == "flat":
        z = np.zeros((ny, nx))
    else:
        _, seed, amplitude, smooth, fine_amp = p.terrain
        rng = np.random.Generator(np.random.PCG64(seed))
        z = gaussian_filter(rng.standard_normal((ny, nx)), smooth, mode="reflect")
        s = z.std()
        if s > 1e-12:
            z = z / s * amplitude
        if fine_amp > 0:
            # short-correlation surface texture (sand/gravel scale); added after
            # pad flattening so scan matching keeps grip on the pads too
            rng2 = np.random.Generator(np.random.PCG64(seed + 1))
            fine = gaussian_filter(rng2.standard_normal((ny, nx)), max(1.0, smooth / 4.0),
                                   mode="reflect")
            fs = fine.std()
            fine = fine / fs * fine_amp if fs > 1e-12 else None
    hf = Heightfield(0.0, 0.0, p.cell, z)

    structures: dict[str, Structure] = {}
    pending_auto: list[str] = []
    for line_no, name, kind, x, y, htok in p.structures:
        if kind == "lander":
            size = LANDER_SIZE
        elif kind == "habitat":
            size = HABITAT_SIZE
        else:
            size = (0.0, 0.0, 0.0)
        if htok == "auto":
            structures[name] = Structure(name, kind, Pose2(x, y, 0.0), size)
            pending_auto.append(name)
        else:
            try:
                heading = float(htok)
            except ValueError:
                raise ScenarioError(line_no, f"bad heading {htok!r}")
            structures[name] = Structure(name, kind, Pose2(x, y, heading), size)

    # flatten pads under structures and the start before placing anything on them
    pads = list(p.pads)
    for st in structures.values():
        if st.kind != "marker":
            pads.append((st.pose.x, st.pose.y, 7.0))
    pads.append((p.start.x, p.start.y, 5.0))
    for x, y, r in pads:
        _flatten_pad(hf, x, y, r)
    if fine is not None:
        hf.z = hf.z + fine

    world = World(hf, [], structures)
    for st in structures.values():
        if st.kind == "marker":
            continue
        gz = float(hf.height_at(st.pose.x, st.pose.y))
        sx, sy, sz = st.size
        world.obstacles.append(Box(st.pose.x, st.pose.y, gz, st.pose.heading, sx, sy, sz))

    anchors: dict[str, Pose2] = {"start": p.start}
    cargo_params = CargoParams()
    if "habitat" in structures:
        hab = structures["habitat"]
        dock = hab.face_point()
        if "apex" in pending_auto and "apex" in structures:
            ap = structures["apex"].pose
            heading = math.atan2(ap.y - dock[1], ap.x - dock[0])
            structures["apex"] = Structure("apex", "marker", Pose2(ap.x, ap.y, heading))
        away = structures["apex"].pose.heading if "apex" in structures else hab.pose.heading
        gap_target = 0.08
        standoff = gap_target + 0.5 * cargo_params.length - cargo_params.mount_x
        anchors["habitat"] = Pose2(
            dock[0] + math.cos(away) * standoff, dock[1] + math.sin(away) * standoff, away
        )
    for st in structures.values():
        if st.kind == "marker" and st.name != "apex":
            anchors[st.name] = st.pose
    if "apex" in structures:
        anchors["apex"] = structures["apex"].pose
    if "lander" in structures:
        ld = structures["lander"]
        rel = np.array([p.start.x, p.start.y]) - ld.pose.xy
        perp = np.array([-math.sin(ld.pose.heading), math.cos(ld.pose.heading)])
        side = 1.0 if float(rel @ perp) >= 0 else -1.0
        face = ld.face_point(side)
        n = perp * side
        pos = face + n * LANDER_ALIGN_DISTANCE
        heading = ld.pose.heading
        nxt = anchors.get("apex") or anchors.get("habitat")
        if nxt is not None and math.cos(heading) * (nxt.x - pos[0]) + math.sin(heading) * (nxt.y - pos[1]) < 0:
            heading = wrap_heading(heading + math.pi)
        anchors["lander"] = Pose2(pos[0], pos[1], heading)

    # design polyline through the legs, used for rock clearance + design length
    design_pts: list[np.ndarray] = []
    design_length = 0.0
    for frm, to, vias in p.legs:
        for nm in (frm, to):
            if nm not in anchors:
                raise ScenarioError(1, f"leg references unknown anchor {nm!r}")
        pts = [anchors[frm].xy] + [np.array(v) for v in vias] + [anchors[to].xy]
        arr = np.stack(pts)
        design_length += _polyline_length(arr)
        design_pts.extend(pts)

    for x, y, h in p.rocks:
        gz = float(hf.height_at(x, y))
        world.obstacles.append(Sphere(x, y, gz, h))

    if p.rockfield:
        rf = p.rockfield
        rng = np.random.Generator(np.random.PCG64(int(rf["seed"])))
        poly = np.stack(design_pts) if len(design_pts) >= 2 else None
        placed = 0
        attempts = 0
        keep_out = [(st.pose.x, st.pose.y, 6.0) for st in structures.values()]
        while placed < rf["count"] and attempts < rf["count"] * 60:
            attempts += 1
            x = float(rng.uniform(2.0, p.extent[0] - 2.0))
            y = float(rng.uniform(2.0, p.extent[1] - 2.0))
            h = float(rng.uniform(rf["hmin"], rf["hmax"]))
            if poly is not None and _point_polyline_distance(np.array([x, y]), poly) < rf["clearance"]:
                continue
            if any(math.hypot(x - kx, y - ky) < kr for kx, ky, kr in keep_out):
                continue
            gz = float(hf.height_at(x, y))
            world.obstacles.append(Sphere(x, y, gz, h))
            placed += 1

    rover_params = RoverParams(**p.rover_kw)
    noise = SimNoise(p.noise_kw["slip"], p.noise_kw["lidar_range"], int(p.noise_kw["seed"]))
    autonomy = AutonomyParams()
    for k, v in p.autonomy_kw.items():
        cast = int(v) if isinstance(getattr(autonomy, k), int) else v
        setattr(autonomy, k, cast)

    return Scenario(
        name=p.name,
        world=world,
        rover_params=rover_params,
        cargo_params=cargo_params,
        noise=noise,
        start=p.start,
        cargo_start=p.cargo_start,
        cargo_free_pose=p.cargo_free_pose,
        lidar=p.lidar,
        autonomy=autonomy,
        legs=p.legs,
        anchors=anchors,
        design_length=design_length,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return build_scenario(path.read_text(), str(path))


def load_world(path):
    """Scenario file -> (World, RoverState, CargoState) with everything placed."""
    from .cargo import initial_cargo_state
    from .rover import RoverState

    sc = load_scenario(path)
    rover = RoverState(pose=sc.start, steering_lag_tau=sc.rover_params.steering_lag_tau)
    cargo = initial_cargo_state(sc)
    if sc.cargo_start == "on_rover":
        rover = rover.with_cargo(True)
    return sc.world, rover, cargo
