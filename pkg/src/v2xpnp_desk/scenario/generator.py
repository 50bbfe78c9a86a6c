"""
Seeded synthetic scenario generator.

Layout: a grid of straight lanes plus two crossing roads. The ego drives along
y = 0. With the occlusion stressor enabled a long vehicle travels beside the
ego and hides a car from it; the second connected vehicle drives on a parallel
lane from which that car is in plain view.
"""

import logging
import math

import numpy as np

from v2xpnp_desk.shared.constants import (
    INFRASTRUCTURE_SENSOR_HEIGHT_M,
    LANE_SPACING_M,
    VEHICLE_SENSOR_HEIGHT_M,
    WAYPOINT_SPACING_M,
    WAYPOINTS_PER_POLYLINE,
)
from v2xpnp_desk.shared.errors import ScenarioError
from v2xpnp_desk.shared.types import (
    Agent,
    AgentKind,
    BoxParams,
    MotionModel,
    ObjectTrack,
    Polyline,
    Pose,
    Scenario,
    ScenarioConfig,
    VectorMap,
)

logger = logging.getLogger(__name__)

# Lane centre lines (y for through lanes, x for crossing roads)
THROUGH_LANES = tuple(LANE_SPACING_M * k for k in range(-5, 7))
CROSSING_ROADS = (-40.0, 60.0)
# Lanes kept clear of background traffic so the stressor geometry holds
STRESSOR_CORRIDOR = (-3.0, 25.0)

# Stressor geometry relative to the ego start (x, y, w, l, h)
OCCLUDER = (12.0, 5.5, 2.6, 12.0, 3.2)
HIDDEN_CAR = (14.0, 11.0, 2.0, 4.5, 1.5)

HELPER_SLOTS: tuple[tuple[float, float], ...] = (
    (14.0, 22.0),
    (-18.0, 16.5),
    (30.0, -5.5),
    (-35.0, -11.0),
)
INFRASTRUCTURE_SLOTS: tuple[tuple[float, float], ...] = (
    (20.0, -8.0),
    (-25.0, 30.0),
    (45.0, 14.0),
    (-50.0, -20.0),
)

CAR_SIZE = (2.0, 4.5, 1.5)
MIN_SPAWN_GAP_M = 8.0


def _box(x: float, y: float, size: tuple[float, float, float], yaw: float) -> BoxParams:
    w, l, h = size
    return (float(x), float(y), h / 2.0, float(w), float(l), float(h), float(yaw))


def _constant_velocity(
    start: tuple[float, float], yaw: float, speed: float, times: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = start[0] + speed * math.cos(yaw) * times
    y = start[1] + speed * math.sin(yaw) * times
    return x, y, np.full_like(times, yaw)


def _integrate(
    model: MotionModel,
    start: tuple[float, float],
    yaw: float,
    speed: float,
    dt: float,
    num_frames: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre and heading per frame for one motion model."""
    times = np.arange(num_frames) * dt
    match model:
        case MotionModel.STATIC:
            return (
                np.full(num_frames, start[0]),
                np.full(num_frames, start[1]),
                np.full(num_frames, yaw),
            )
        case MotionModel.CONSTANT_VELOCITY:
            return _constant_velocity(start, yaw, speed, times)
    if model is MotionModel.CONSTANT_TURN_RATE:
        omega = float(rng.uniform(-0.08, 0.08))
        speeds = np.full(num_frames, speed)
    else:
        # Stop-and-go: speed oscillates between zero and `speed`
        omega = 0.0
        period = float(rng.uniform(6.0, 10.0))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        cycle = 2.0 * math.pi * np.arange(num_frames) / period + phase
        speeds = speed * 0.5 * (1.0 + np.cos(cycle))

    xs, ys, yaws = np.empty(num_frames), np.empty(num_frames), np.empty(num_frames)
    x, y, heading = start[0], start[1], yaw
    for k in range(num_frames):
        xs[k], ys[k], yaws[k] = x, y, heading
        heading = heading + omega * dt
        x += speeds[k] * math.cos(heading) * dt
        y += speeds[k] * math.sin(heading) * dt
    return xs, ys, yaws


def _track(
    object_id: int,
    xs: np.ndarray,
    ys: np.ndarray,
    yaws: np.ndarray,
    size: tuple[float, float, float],
    model: MotionModel,
    intensity: float,
) -> ObjectTrack:
    boxes = tuple(
        _box(x, y, size, yaw) for x, y, yaw in zip(xs, ys, yaws, strict=True)
    )
    return ObjectTrack(
        object_id=object_id,
        motion_model=model,
        static=model is MotionModel.STATIC,
        intensity=intensity,
        boxes=boxes,
        valid=(True,) * len(boxes),
    )


def build_vector_map(config: ScenarioConfig) -> VectorMap:
    """Lane polylines of WAYPOINTS_PER_POLYLINE points covering the world."""
    x_min, x_max, y_min, y_max = config.world_extent
    stride = WAYPOINT_SPACING_M * WAYPOINTS_PER_POLYLINE
    offsets = np.arange(WAYPOINTS_PER_POLYLINE) * WAYPOINT_SPACING_M
    polylines: list[Polyline] = []

    for y in THROUGH_LANES:
        if not y_min <= y <= y_max:
            continue
        heading_positive = y >= 0.0
        for start in np.arange(x_min, x_max - stride + 1e-9, stride):
            xs = start + offsets
            if not heading_positive:
                xs = xs[::-1]
            points = tuple((float(x), float(y)) for x in xs)
            polylines.append(Polyline(points=points, lane_type=0))

    for x_road in CROSSING_ROADS:
        for lane_x, heading_positive in ((x_road - 2.75, False), (x_road + 2.75, True)):
            for start in np.arange(y_min, y_max - stride + 1e-9, stride):
                ys = start + offsets
                if not heading_positive:
                    ys = ys[::-1]
                points = tuple((float(lane_x), float(y)) for y in ys)
                polylines.append(Polyline(points=points, lane_type=1))

    return VectorMap(polylines=tuple(polylines))


def _background_start(
    config: ScenarioConfig,
    rng: np.random.Generator,
    taken: list[tuple[float, float]],
) -> tuple[tuple[float, float], float]:
    x_min, x_max, y_min, y_max = config.world_extent
    lanes = [
        y
        for y in THROUGH_LANES
        if y_min <= y <= y_max and not STRESSOR_CORRIDOR[0] < y < STRESSOR_CORRIDOR[1]
    ]
    for _ in range(200):
        if rng.random() < 0.2:
            road = float(rng.choice(CROSSING_ROADS))
            positive = bool(rng.random() < 0.5)
            x = road + (2.75 if positive else -2.75)
            y = float(rng.uniform(y_min + 10.0, y_max - 10.0))
            yaw = math.pi / 2 if positive else -math.pi / 2
        else:
            y = float(rng.choice(lanes))
            x = float(rng.uniform(x_min + 10.0, x_max - 10.0))
            yaw = 0.0 if y >= 0.0 else math.pi
        if all(math.hypot(x - tx, y - ty) >= MIN_SPAWN_GAP_M for tx, ty in taken):
            return (x, y), yaw
    raise ScenarioError("could not place background object without overlap")


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """
    Build a scenario deterministically from `config` and `seed`.

    Raises:
        ScenarioError: If the config has no frames or no ego vehicle.
    """
    if config.num_frames < 1:
        raise ScenarioError("num_frames must be at least 1")
    if config.num_vehicles < 1:
        raise ScenarioError("a scenario needs at least one connected vehicle (ego)")

    rng = np.random.default_rng(seed)
    dt = config.frame_interval_s
    n = config.num_frames
    times = np.arange(n) * dt

    agents: list[Agent] = []
    objects: list[ObjectTrack] = []
    taken: list[tuple[float, float]] = []
    occluded: list[int] = []

    def add_vehicle_agent(
        start: tuple[float, float], yaw: float, speed: float
    ) -> None:
        xs, ys, yaws = _constant_velocity(start, yaw, speed, times)
        object_id = len(objects)
        motion = MotionModel.CONSTANT_VELOCITY
        objects.append(_track(object_id, xs, ys, yaws, CAR_SIZE, motion, 0.6))
        poses: tuple[Pose, ...] = tuple(
            (float(x), float(y), float(a)) for x, y, a in zip(xs, ys, yaws, strict=True)
        )
        agents.append(
            Agent(
                agent_id=len(agents),
                kind=AgentKind.VEHICLE,
                poses=poses,
                sensor_height=VEHICLE_SENSOR_HEIGHT_M,
                object_id=object_id,
            )
        )
        taken.append(start)

    # Ego
    add_vehicle_agent((0.0, 0.0), 0.0, config.ego_speed)

    if config.occlusion_stressor:
        for shape, is_hidden in ((OCCLUDER, False), (HIDDEN_CAR, True)):
            x, y, w, l, h = shape
            xs, ys, yaws = _constant_velocity((x, y), 0.0, config.ego_speed, times)
            object_id = len(objects)
            objects.append(
                _track(
                    object_id,
                    xs,
                    ys,
                    yaws,
                    (w, l, h),
                    MotionModel.CONSTANT_VELOCITY,
                    0.5,
                )
            )
            taken.append((x, y))
            if is_hidden:
                occluded.append(object_id)

    for k in range(1, config.num_vehicles):
        if k - 1 < len(HELPER_SLOTS):
            start = HELPER_SLOTS[k - 1]
        else:
            start, _ = _background_start(config, rng, taken)
        yaw = 0.0 if start[1] >= 0.0 else math.pi
        speed = config.ego_speed if start[1] >= 0.0 else min(config.max_speed, 6.0)
        add_vehicle_agent(start, yaw, speed)

    for k in range(config.num_infrastructure):
        if k < len(INFRASTRUCTURE_SLOTS):
            x, y = INFRASTRUCTURE_SLOTS[k]
        else:
            x_min, x_max, y_min, y_max = config.world_extent
            x = float(rng.uniform(x_min / 2, x_max / 2))
            y = float(rng.choice([-1.0, 1.0]) * rng.uniform(30.0, 35.0))
        agents.append(
            Agent(
                agent_id=len(agents),
                kind=AgentKind.INFRASTRUCTURE,
                poses=((float(x), float(y), 0.0),) * n,
                sensor_height=INFRASTRUCTURE_SENSOR_HEIGHT_M,
            )
        )

    dynamic_models = (
        MotionModel.CONSTANT_VELOCITY,
        MotionModel.CONSTANT_TURN_RATE,
        MotionModel.STOP_AND_GO,
    )
    for _ in range(config.num_background_objects):
        start, yaw = _background_start(config, rng, taken)
        taken.append(start)
        if rng.random() < config.static_fraction:
            model = MotionModel.STATIC
            speed = 0.0
        else:
            model = dynamic_models[int(rng.integers(len(dynamic_models)))]
            speed = float(rng.uniform(2.0, config.max_speed))
        size = (
            float(rng.uniform(1.8, 2.1)),
            float(rng.uniform(4.2, 4.9)),
            float(rng.uniform(1.4, 1.7)),
        )
        xs, ys, yaws = _integrate(model, start, yaw, speed, dt, n, rng)
        intensity = float(rng.uniform(0.2, 0.9))
        objects.append(_track(len(objects), xs, ys, yaws, size, model, intensity))

    scenario = Scenario(
        seed=seed,
        config=config,
        agents=tuple(agents),
        objects=tuple(objects),
        vector_map=build_vector_map(config),
        occluded_object_ids=tuple(occluded),
    )
    logger.debug(
        f"Generated scenario seed={seed}: {len(agents)} agents, "
        f"{len(objects)} objects, {len(scenario.vector_map)} polylines"
    )
    return scenario
