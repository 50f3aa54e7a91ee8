from .cargo import (
    CargoAction,
    CargoContext,
    CargoState,
    cargo_command,
    cargo_solids,
    crane_place_on_platform,
    crane_place_on_rover,
    initial_cargo_state,
    sync_latched_pose,
)
from .lidar import LidarMount, body_self_mask, default_mounts, simulate_lidar
from .params import CargoParams, RoverParams
from .rover import RoverState, step_rover
from .world import (
    AutonomyParams,
    Box,
    Heightfield,
    Scenario,
    ScenarioError,
    SimNoise,
    Sphere,
    Structure,
    World,
    build_scenario,
    load_scenario,
    load_world,
    raycast,
)

__all__ = [
    "AutonomyParams", "Box", "CargoAction", "CargoContext", "CargoParams", "CargoState",
    "Heightfield", "LidarMount", "RoverParams", "RoverState", "Scenario", "ScenarioError",
    "SimNoise", "Sphere", "Structure", "World", "body_self_mask", "build_scenario",
    "cargo_command", "cargo_solids", "crane_place_on_platform", "crane_place_on_rover",
    "default_mounts", "initial_cargo_state", "load_scenario", "load_world", "raycast",
    "simulate_lidar", "step_rover", "sync_latched_pose",
]
