"""Pose estimators: noisy oracle, k-NN over a capture database, trained
regressor inference, and an adapter for external estimator processes.

All estimators expose ``estimate(observation) -> PoseEstimate`` and a
``sensor`` attribute (None when unconstrained). The oracle additionally
needs the simulator to inject ground truth via ``set_true_pose`` before
each estimate; callers that hold the true pose (evaluation, navigation)
do this injection for any estimator that has the method.
"""

import math
import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .capture import Dataset
from .pose import NormalizedPose, Pose2D, circular_mean, denormalize, normalize
from .world import EnvironmentSpec, Observation, SensorConfig

WEIGHT_UNIFORM = "uniform"
WEIGHT_INVERSE = "inverse-distance"

# distance regulariser so an exact match gets a finite, dominant weight
INVERSE_WEIGHT_EPS = 1e-9

DEFAULT_TIMEOUT_S = 5.0


class EstimatorUnavailableError(RuntimeError):
    """The external estimator process died, timed out, or broke protocol."""


@dataclass(frozen=True)
class PoseEstimate:
    """An estimated pose; clamped marks outputs pulled back into [-1, 1]."""

    pose: Pose2D
    clamped: bool = False


@dataclass(frozen=True)
class OracleConfig:
    sigma_pos: float = 0.0
    sigma_theta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_theta < 0:
            raise ValueError("sigmas must be non-negative")


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    weighting: str = WEIGHT_INVERSE

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.weighting not in (WEIGHT_UNIFORM, WEIGHT_INVERSE):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def _check_length(ranges, sensor: SensorConfig | None):
    if sensor is not None and len(ranges) != sensor.ray_count:
        raise ValueError(
            f"observation has {len(ranges)} rays, estimator expects {sensor.ray_count}"
        )


def oracle_estimate(true_pose: Pose2D, cfg: OracleConfig, rng, bounds=None) -> PoseEstimate:
    """True pose plus zero-mean Gaussian noise; clamped into bounds if given.

    Always draws exactly three normals so the stream position depends only
    on the call count, not on the sigma values.
    """
    dx = rng.normal(0.0, cfg.sigma_pos)
    dy = rng.normal(0.0, cfg.sigma_pos)
    dt = rng.normal(0.0, cfg.sigma_theta)
    x, y = true_pose.x + dx, true_pose.y + dy
    clamped = False
    if bounds is not None:
        cx = min(max(x, bounds.x_min), bounds.x_max)
        cy = min(max(y, bounds.y_min), bounds.y_max)
        clamped = (cx != x) or (cy != y)
        x, y = cx, cy
    return PoseEstimate(Pose2D(x, y, true_pose.theta + dt), clamped)


class OracleEstimator:
    """Test double: returns the injected true pose perturbed by Gaussian noise.

    Stateful (consumes its RNG stream); confine to a single caller.
    """

    def __init__(self, cfg: OracleConfig, env: EnvironmentSpec | None = None):
        self.cfg = cfg
        self.env = env
        self.sensor = env.sensor if env is not None else None
        self._rng = np.random.default_rng(cfg.seed)
        self._true_pose: Pose2D | None = None

    def set_true_pose(self, pose: Pose2D) -> None:
        self._true_pose = pose

    def estimate(self, observation: Observation) -> PoseEstimate:
        _check_length(observation.ranges, self.sensor)
        if self._true_pose is None:
            raise RuntimeError("oracle estimator needs set_true_pose before estimate")
        bounds = self.env.bounds if self.env is not None else None
        return oracle_estimate(self._true_pose, self.cfg, self._rng, bounds)


def knn_estimate(db: Dataset, obs: Observation, cfg: KnnConfig) -> PoseEstimate:
    """Nearest neighbours by Euclidean distance over range vectors.

    Position is the weighted mean of neighbour positions, orientation the
    circular mean with the same weights; distance ties break toward the
    lower sample id. k=1 returns the neighbour's pose verbatim.
    """
    if len(db) == 0:
        raise ValueError("empty database")
    if cfg.k > len(db):
        raise ValueError(f"k={cfg.k} exceeds database size {len(db)}")
    R = db.ranges_matrix()
    q = np.asarray(obs.ranges, dtype=np.float64)
    if q.shape != (R.shape[1],):
        raise ValueError(f"query has {q.size} rays, database has {R.shape[1]}")
    d = np.sqrt(((R - q) ** 2).sum(axis=1))
    ids = np.array([s.id for s in db.samples])
    order = np.lexsort((ids, d))  # distance first, then id
    sel = order[: cfg.k]
    if cfg.k == 1:
        return PoseEstimate(db.samples[sel[0]].pose)
    if cfg.weighting == WEIGHT_INVERSE:
        w = 1.0 / (d[sel] + INVERSE_WEIGHT_EPS)
    else:
        w = np.ones(cfg.k)
    poses = db.poses_matrix()[sel]
    wsum = w.sum()
    x = float((w * poses[:, 0]).sum() / wsum)
    y = float((w * poses[:, 1]).sum() / wsum)
    theta = circular_mean(poses[:, 2], weights=w)
    return PoseEstimate(Pose2D(x, y, theta))


class KnnEstimator:
    """Immutable k-NN estimator over a capture database."""

    def __init__(self, db: Dataset, cfg: KnnConfig = KnnConfig()):
        if len(db) == 0:
            raise ValueError("empty database")
        if cfg.k > len(db):
            raise ValueError(f"k={cfg.k} exceeds database size {len(db)}")
        self.db = db
        self.cfg = cfg
        self.sensor = db.sensor

    def estimate(self, observation: Observation) -> PoseEstimate:
        _check_length(observation.ranges, self.sensor)
        return knn_estimate(self.db, observation, self.cfg)


class RegressorEstimator:
    """Inference wrapper denormalising a trained regressor's outputs."""

    def __init__(self, model, env: EnvironmentSpec):
        # local import: training depends on capture, not the reverse
        from .training import forward  # noqa: PLC0415

        if model.env_name and model.env_name != env.name:
            raise ValueError(
                f"model was trained on {model.env_name!r}, environment is {env.name!r}"
            )
        if model.sensor is not None and model.sensor != env.sensor:
            raise ValueError("model sensor does not match environment sensor")
        self.model = model
        self.env = env
        self.sensor = model.sensor if model.sensor is not None else env.sensor
        self._forward = forward

    def estimate(self, observation: Observation) -> PoseEstimate:
        _check_length(observation.ranges, self.sensor)
        npose = self._forward(self.model, observation)
        # tanh outputs are strictly inside (-1, 1): never clamped
        return PoseEstimate(denormalize(npose, self.env.bounds))


class ExternalEstimator:
    """Line-protocol adapter around an external estimator process.

    Request: ``EST <id> r0 r1 ...``; response: ``POSE <id> nx ny ntheta``
    (normalised values, denormalised here against the environment bounds,
    clamping out-of-range values). Requests and responses strictly
    alternate; ``QUIT`` ends the session. Any protocol breach, process
    exit, or timeout raises EstimatorUnavailableError and poisons the
    channel.
    """

    def __init__(self, argv, env: EnvironmentSpec, timeout: float = DEFAULT_TIMEOUT_S):
        self.env = env
        self.sensor = env.sensor
        self.timeout = timeout
        self._next_id = 0
        self._buf = b""
        self._broken = False
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as e:
            raise EstimatorUnavailableError(f"cannot start {argv!r}: {e}") from e

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _fail(self, msg):
        self._broken = True
        raise EstimatorUnavailableError(msg)

    def _read_line(self) -> str:
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._fail(f"no response within {self.timeout} s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                self._fail(f"no response within {self.timeout} s")
            chunk = os.read(fd, 4096)
            if not chunk:
                self._fail("estimator process closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("ascii", errors="replace")

    def estimate(self, observation: Observation) -> PoseEstimate:
        if self._broken:
            raise EstimatorUnavailableError("estimator channel is poisoned")
        _check_length(observation.ranges, self.sensor)
        if self._proc.poll() is not None:
            self._fail(f"estimator process exited with {self._proc.returncode}")
        req_id = self._next_id
        self._next_id += 1
        payload = " ".join(repr(float(r)) for r in observation.ranges)
        try:
            self._proc.stdin.write(f"EST {req_id} {payload}\n".encode("ascii"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self._fail("estimator process closed its input")
        line = self._read_line()
        parts = line.split()
        if len(parts) != 5 or parts[0] != "POSE":
            self._fail(f"malformed response {line!r}")
        try:
            resp_id = int(parts[1])
            raw = [float(v) for v in parts[2:5]]
        except ValueError:
            self._fail(f"malformed response {line!r}")
        if resp_id != req_id:
            self._fail(f"response id {resp_id} does not match request {req_id}")
        if not all(math.isfinite(v) for v in raw):
            self._fail(f"non-finite response {line!r}")
        npose, clamped = NormalizedPose.from_raw(*raw)
        return PoseEstimate(denormalize(npose, self.env.bounds), clamped)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(b"QUIT\n")
                self._proc.stdin.flush()
                self._proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdout is not None:
            self._proc.stdout.close()


def normalized_response(pose: Pose2D, env: EnvironmentSpec) -> str:
    """The `nx ny ntheta` payload an external process should emit for pose."""
    n = normalize(pose, env.bounds)
    return f"{n.nx!r} {n.ny!r} {n.ntheta!r}"
