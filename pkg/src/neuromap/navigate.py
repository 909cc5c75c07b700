"""Waypoint navigation for a simulated differential-drive UGV.

The controller follows the estimate / rotate / move loop verbatim: estimate
the pose, and while the estimated distance to the waypoint exceeds T_d,
either rotate until the heading error accumulated from odometry is within
T_a, or drive a leg of at most ``max_step`` metres, re-estimating after
every subloop. Observations are always synthesised at the TRUE pose; the
controller only ever sees the estimator's output and its noisy odometry.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimator import EstimatorUnavailableError, PoseEstimate
from .pose import Pose2D, ang_diff, heading
from .world import EnvironmentSpec, raycast

EVENT_ESTIMATE = "estimate"
EVENT_ROTATE = "rotate"
EVENT_MOVE = "move"
EVENT_REACHED = "waypoint-reached"
EVENT_COLLISION = "collision"
EVENT_ABORT = "abort"

ABORT_COLLISION = "collision"
ABORT_ESTIMATOR = "estimator-failure"
ABORT_BUDGET = "tick-budget"


@dataclass(frozen=True)
class NavConfig:
    T_d: float = 0.5
    T_a: float = 5.0
    max_step: float = 1.0
    linear_speed: float = 0.5
    angular_speed: float = 30.0
    dt: float = 0.1
    max_ticks: int = 100_000
    footprint_radius: float = 0.5
    # leg exit tolerance |M - L| <= leg_tolerance; None reuses T_d, the
    # literal reading of the control loop (a 1 m leg then stops after
    # roughly half a metre of odometry)
    leg_tolerance: float | None = None

    def __post_init__(self):
        for name in ("T_d", "T_a", "max_step", "linear_speed", "angular_speed", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_ticks <= 0 or self.footprint_radius < 0:
            raise ValueError("max_ticks must be positive, footprint_radius >= 0")
        if self.T_d >= self.max_step:
            raise ValueError("T_d must be smaller than max_step")
        if self.leg_tolerance is not None and self.leg_tolerance <= 0:
            raise ValueError("leg_tolerance must be positive")

    @property
    def leg_tol(self) -> float:
        return self.T_d if self.leg_tolerance is None else self.leg_tolerance


@dataclass(frozen=True)
class OdometryConfig:
    sigma_lin_frac: float = 0.01
    sigma_ang_per_step: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.sigma_lin_frac < 0 or self.sigma_ang_per_step < 0:
            raise ValueError("odometry sigmas must be non-negative")


@dataclass(frozen=True)
class TraceTick:
    tick: int
    time: float
    true_pose: Pose2D
    estimate: PoseEstimate
    waypoint_idx: int
    event: str


@dataclass(frozen=True)
class RouteTrace:
    ticks: tuple

    def __post_init__(self):
        last_tick, last_wp = -1, -1
        for t in self.ticks:
            if t.tick <= last_tick:
                raise ValueError("tick indices must be strictly increasing")
            if t.waypoint_idx < last_wp:
                raise ValueError("waypoint index must be non-decreasing")
            last_tick, last_wp = t.tick, t.waypoint_idx

    def __len__(self):
        return len(self.ticks)


@dataclass(frozen=True)
class WaypointResult:
    reached: bool
    closest_true_dist: float
    closest_est_dist: float


@dataclass(frozen=True)
class NavReport:
    waypoints: tuple
    mean_closest_true: float
    mean_closest_est: float
    tick_count: int
    success: bool
    abort_reason: str = ""


def simulate_rotation_tick(true_pose: Pose2D, direction: float, cfg: NavConfig,
                           odo: OdometryConfig, rng) -> tuple[Pose2D, float]:
    """One rotation-in-place tick; returns (new true pose, odometry delta deg)."""
    step = math.copysign(cfg.angular_speed * cfg.dt, direction)
    new_pose = Pose2D(true_pose.x, true_pose.y, true_pose.theta + step)
    reading = step + rng.normal(0.0, odo.sigma_ang_per_step)
    return new_pose, reading


def simulate_move_tick(true_pose: Pose2D, env: EnvironmentSpec, cfg: NavConfig,
                       odo: OdometryConfig, rng) -> tuple[Pose2D, float, bool]:
    """One straight-drive tick along the true heading.

    Returns (new true pose, odometry delta m, collided). On collision the
    pose does not advance.
    """
    step = cfg.linear_speed * cfg.dt
    rad = math.radians(true_pose.theta)
    nx = true_pose.x + step * math.cos(rad)
    ny = true_pose.y + step * math.sin(rad)
    reading = step + rng.normal(0.0, odo.sigma_lin_frac * step)
    if not env.grid.footprint_free(nx, ny, cfg.footprint_radius):
        return true_pose, reading, True
    return Pose2D(nx, ny, true_pose.theta), reading, False


class _Abort(Exception):
    def __init__(self, reason):
        self.reason = reason


class _Episode:
    """Mutable state of one navigation run; builds the trace row by row."""

    def __init__(self, start_pose, estimator, env, cfg, odo):
        self.true_pose = start_pose
        self.estimator = estimator
        self.env = env
        self.cfg = cfg
        self.odo = odo
        self.rng = np.random.default_rng(odo.seed)
        self.rows = []
        self.time = 0.0
        self.wp_idx = 0
        self.last_estimate = None

    def _append(self, event):
        if len(self.rows) >= self.cfg.max_ticks:
            raise _Abort(ABORT_BUDGET)
        self.rows.append(
            TraceTick(
                len(self.rows), self.time, self.true_pose, self.last_estimate,
                self.wp_idx, event,
            )
        )

    def estimate(self) -> Pose2D:
        obs = raycast(self.env.grid, self.true_pose, self.env.sensor)
        inject = getattr(self.estimator, "set_true_pose", None)
        if inject is not None:
            inject(self.true_pose)
        try:
            result = self.estimator.estimate(obs)
        except EstimatorUnavailableError:
            raise _Abort(ABORT_ESTIMATOR) from None
        if not isinstance(result, PoseEstimate):
            result = PoseEstimate(result)
        self.last_estimate = result
        self._append(EVENT_ESTIMATE)
        return self.last_estimate.pose

    def rotate_by(self, relative_deg: float) -> None:
        accumulated = 0.0
        while abs(ang_diff(relative_deg, accumulated)) > self.cfg.T_a:
            direction = ang_diff(relative_deg, accumulated)
            self.true_pose, delta = simulate_rotation_tick(
                self.true_pose, direction, self.cfg, self.odo, self.rng
            )
            accumulated += delta
            self.time += self.cfg.dt
            self._append(EVENT_ROTATE)

    def drive_leg(self, leg_m: float) -> None:
        travelled = 0.0
        while abs(leg_m - travelled) > self.cfg.leg_tol:
            self.true_pose, delta, collided = simulate_move_tick(
                self.true_pose, self.env, self.cfg, self.odo, self.rng
            )
            travelled += delta
            self.time += self.cfg.dt
            if collided:
                self._append(EVENT_COLLISION)
                raise _Abort(ABORT_COLLISION)
            self._append(EVENT_MOVE)


def navigate_waypoints(waypoints, estimator, env: EnvironmentSpec, start_pose: Pose2D,
                       cfg: NavConfig = NavConfig(), odo: OdometryConfig = OdometryConfig()):
    """Drive through waypoints in order; returns (RouteTrace, NavReport).

    Aborts (success False, abort_reason set) on collision, estimator
    failure, or tick-budget exhaustion; the trace is retained up to and
    including the abort row.
    """
    waypoints = [(float(x), float(y)) for x, y in waypoints]
    if not waypoints:
        raise ValueError("need at least one waypoint")
    if not env.grid.footprint_free(start_pose.x, start_pose.y, cfg.footprint_radius):
        raise ValueError("start pose is not footprint-free")
    sensor = getattr(estimator, "sensor", None)
    if sensor is not None and sensor != env.sensor:
        raise ValueError("estimator sensor does not match environment sensor")

    ep = _Episode(start_pose, estimator, env, cfg, odo)
    abort_reason = ""
    try:
        for idx, (wx, wy) in enumerate(waypoints):
            ep.wp_idx = idx
            pose = ep.estimate()
            dist = math.hypot(wx - pose.x, wy - pose.y)
            while dist > cfg.T_d:
                target_heading = heading(pose, Pose2D(wx, wy, 0.0))
                if abs(ang_diff(target_heading, pose.theta)) > cfg.T_a:
                    ep.rotate_by(ang_diff(target_heading, pose.theta))
                else:
                    ep.drive_leg(min(dist, cfg.max_step))
                pose = ep.estimate()
                dist = math.hypot(wx - pose.x, wy - pose.y)
            ep._append(EVENT_REACHED)
    except _Abort as a:
        abort_reason = a.reason
        try:
            ep._append(EVENT_ABORT)
        except _Abort:  # budget died exactly at the abort row
            ep.rows.append(
                TraceTick(len(ep.rows), ep.time, ep.true_pose, ep.last_estimate,
                          ep.wp_idx, EVENT_ABORT)
            )

    trace = RouteTrace(tuple(ep.rows))
    report = closest_distance_metrics(trace, waypoints, abort_reason=abort_reason)
    return trace, report


def closest_distance_metrics(trace: RouteTrace, waypoints, abort_reason: str = "") -> NavReport:
    """Per-waypoint closest approach of the true and estimated pose."""
    if not len(trace):
        raise ValueError("empty trace")
    waypoints = [(float(x), float(y)) for x, y in waypoints]
    results = []
    for i, (wx, wy) in enumerate(waypoints):
        rows = [t for t in trace.ticks if t.waypoint_idx == i]
        reached = any(t.event == EVENT_REACHED for t in rows)
        if rows:
            closest_true = min(math.hypot(t.true_pose.x - wx, t.true_pose.y - wy) for t in rows)
            closest_est = min(
                (math.hypot(t.estimate.pose.x - wx, t.estimate.pose.y - wy)
                 for t in rows if t.estimate is not None),
                default=math.inf,
            )
        else:
            closest_true = closest_est = math.inf
        results.append(WaypointResult(reached, closest_true, closest_est))
    return NavReport(
        waypoints=tuple(results),
        mean_closest_true=float(np.mean([r.closest_true_dist for r in results])),
        mean_closest_est=float(np.mean([r.closest_est_dist for r in results])),
        tick_count=len(trace),
        success=all(r.reached for r in results),
        abort_reason=abort_reason,
    )


# --- file formats ----------------------------------------------------------------

TRACE_HEADER = "tick,time,true_x,true_y,true_theta,est_x,est_y,est_theta,waypoint_idx,event"


def save_trace(trace: RouteTrace, path, comments=()) -> None:
    lines = [f"# {c}" for c in comments]
    lines.append(TRACE_HEADER)
    for t in trace.ticks:
        if t.estimate is None:  # abort before the first estimate succeeded
            est = ",,"
        else:
            e = t.estimate.pose
            est = f"{e.x!r},{e.y!r},{e.theta!r}"
        lines.append(
            f"{t.tick},{t.time!r},{t.true_pose.x!r},{t.true_pose.y!r},"
            f"{t.true_pose.theta!r},{est},{t.waypoint_idx},{t.event}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_trace(path) -> RouteTrace:
    lines = [
        ln for ln in Path(path).read_text(encoding="ascii").splitlines()
        if ln and not ln.startswith("#")
    ]
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path}: not a trace file")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 10:
            raise ValueError(f"{path}: malformed trace row {ln!r}")
        est = None
        if parts[5]:
            est = PoseEstimate(Pose2D(float(parts[5]), float(parts[6]), float(parts[7])))
        rows.append(
            TraceTick(
                int(parts[0]), float(parts[1]),
                Pose2D(float(parts[2]), float(parts[3]), float(parts[4])),
                est, int(parts[8]), parts[9],
            )
        )
    return RouteTrace(tuple(rows))


def save_waypoints(waypoints, path, comments=()) -> None:
    lines = [f"# {c}" for c in comments]
    for x, y in waypoints:
        lines.append(f"{float(x)!r},{float(y)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_waypoints(path) -> list:
    out = []
    for i, ln in enumerate(Path(path).read_text(encoding="ascii").splitlines()):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {i + 1}: expected 'x,y', got {ln!r}")
        out.append((float(parts[0]), float(parts[1])))
    if not out:
        raise ValueError(f"{path}: no waypoints")
    return out
