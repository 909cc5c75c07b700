"""Pose regression: a compact MLP, L1 loss, Adam, and the learning-rate
state machine (staircase exponential decay, plateau reset, convergence).

The model maps a normalised range vector to a pose on the unit cube through
relu hidden layers and a tanh output head. Training runs shuffled
minibatches of 32 with Adam (coupled L2 weight decay), evaluates a held-out
validation split every ``eval_interval`` iterations, and drives the
schedule: learning rate 1e-4 decayed by 0.9998 per iteration in staircase
steps at 1000-iteration boundaries; a 10000-iteration plateau of the
validation metric resets the rate to its initial value; a second plateau
after the reset ends training as converged.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capture import Dataset, derived_rng
from .pose import NormalizedPose, ang_diff, denormalize, normalize
from .world import EnvironmentSpec, Observation, SensorConfig

STREAM_INIT = 10
STREAM_VAL_SPLIT = 11
STREAM_BATCHES = 12

MODEL_MAGIC = "#neuromap-model v1"

IMPROVEMENT_EPS = 1e-12

PHASE_DECAYING = "decaying"
PHASE_POST_RESET = "post-reset"
PHASE_CONVERGED = "converged"

ACTION_CONTINUE = "continue"
ACTION_RESET = "reset"
ACTION_CONVERGED = "converged"

YAW_TANH = "tanh"  # single normalised-yaw output, 3 outputs total
YAW_SINCOS = "sincos"  # (sin, cos) yaw head, 4 outputs, dodges the +-180 seam


class ModelFormatError(ValueError):
    """A model file violates the documented format."""


class ScheduleContractError(ValueError):
    """lr_tick was driven outside its contract (non-monotone iterations)."""


class TrainingDivergedError(RuntimeError):
    """The loss stopped being finite; training aborted."""


class RegressorModel:
    """A fully connected relu network with a tanh output head.

    ``weights[i]`` has shape (fan_out, fan_in); hidden activations are relu,
    the last layer is tanh. With the default yaw head the output dimension
    is exactly 3: (nx, ny, ntheta). The optional sin/cos head uses 4.
    """

    def __init__(self, layer_dims, weights, biases, yaw_mode=YAW_TANH, env_name="", sensor=None):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d < 1 for d in layer_dims):
            raise ValueError(f"layer dims must be positive, got {layer_dims}")
        if yaw_mode not in (YAW_TANH, YAW_SINCOS):
            raise ValueError(f"unknown yaw_mode {yaw_mode!r}")
        out_dim = 3 if yaw_mode == YAW_TANH else 4
        if layer_dims[-1] != out_dim:
            raise ValueError(f"yaw_mode {yaw_mode} needs {out_dim} outputs, got {layer_dims[-1]}")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise ValueError("one weight matrix and bias vector per layer required")
        self.layer_dims = layer_dims
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (layer_dims[i + 1], layer_dims[i])
            if w.shape != want:
                raise ValueError(f"W{i} shape {w.shape}, expected {want}")
            if b.shape != (layer_dims[i + 1],):
                raise ValueError(f"b{i} shape {b.shape}, expected ({layer_dims[i + 1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        self.yaw_mode = yaw_mode
        self.env_name = env_name
        self.sensor = sensor

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @classmethod
    def zeros(cls, layer_dims, yaw_mode=YAW_TANH, env_name="", sensor=None):
        ws = [np.zeros((layer_dims[i + 1], layer_dims[i])) for i in range(len(layer_dims) - 1)]
        bs = [np.zeros(layer_dims[i + 1]) for i in range(len(layer_dims) - 1)]
        return cls(layer_dims, ws, bs, yaw_mode, env_name, sensor)

    @classmethod
    def random(cls, layer_dims, rng, yaw_mode=YAW_TANH, env_name="", sensor=None):
        """He-uniform init for the relu hidden layers, Glorot for the tanh head."""
        ws, bs = [], []
        last = len(layer_dims) - 2
        for i in range(len(layer_dims) - 1):
            fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
            if i == last:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
            else:
                limit = math.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(layer_dims, ws, bs, yaw_mode, env_name, sensor)

    def parameters(self):
        """Flat parameter list, W0, b0, W1, b1, ...; shared references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "RegressorModel":
        return RegressorModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.yaw_mode,
            self.env_name,
            self.sensor,
        )


def forward_batch(model: RegressorModel, X: np.ndarray) -> np.ndarray:
    """(n, input_dim) -> (n, out_dim) activations after the tanh head."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"batch shape {X.shape} does not match input dim {model.input_dim}")
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = np.tanh(z) if i == last else np.maximum(z, 0.0)
    return a


def _head_to_normalized(model: RegressorModel, row: np.ndarray) -> NormalizedPose:
    if model.yaw_mode == YAW_TANH:
        return NormalizedPose(float(row[0]), float(row[1]), float(row[2]))
    theta = math.degrees(math.atan2(float(row[2]), float(row[3])))
    return NormalizedPose(float(row[0]), float(row[1]), theta / 180.0)


def forward(model: RegressorModel, obs: Observation) -> NormalizedPose:
    """Run one observation through the network."""
    out = forward_batch(model, obs.ranges[None, :])[0]
    return _head_to_normalized(model, out)


def l1_loss(pred: NormalizedPose, truth: NormalizedPose) -> float:
    """Mean absolute difference over the three normalised components.

    The yaw component compares raw normalised values (no wrap): the
    regression head treats ntheta as a plain coordinate.
    """
    return (
        abs(pred.nx - truth.nx) + abs(pred.ny - truth.ny) + abs(pred.ntheta - truth.ntheta)
    ) / 3.0


def batch_loss(pred: np.ndarray, target: np.ndarray, kind: str = "l1") -> float:
    """Mean over samples of the per-sample mean component loss."""
    d = pred - target
    if kind == "l1":
        return float(np.mean(np.abs(d)))
    if kind == "l2":
        return float(np.mean(d * d))
    raise ValueError(f"unknown loss {kind!r}")


def backward(model: RegressorModel, X: np.ndarray, target: np.ndarray, kind: str = "l1"):
    """Gradients of the batch-mean loss for every parameter.

    Returns (loss, grads) with grads ordered like model.parameters().
    Subgradient conventions: d|x|/dx = 0 at x = 0, relu' = 0 at 0.
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    last = len(model.weights) - 1
    pre_acts = []
    acts = [X]
    a = X
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        pre_acts.append(z)
        a = np.tanh(z) if i == last else np.maximum(z, 0.0)
        acts.append(a)
    out = acts[-1]
    loss = batch_loss(out, target, kind)
    n_terms = out.shape[0] * out.shape[1]
    if kind == "l1":
        g = np.sign(out - target) / n_terms
    else:
        g = 2.0 * (out - target) / n_terms
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(last, -1, -1):
        if i == last:
            dz = g * (1.0 - acts[i + 1] ** 2)  # tanh'
        else:
            dz = g * (pre_acts[i] > 0.0)  # relu', 0 at the kink
        grads_w[i] = dz.T @ acts[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            g = dz @ model.weights[i]
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One in-place Adam update with coupled L2 weight decay.

    The decay term is added to the gradient before the moment updates
    (g <- g + wd * param), the classical formulation.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have matching arity")
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay != 0.0:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


DECAY_PER_ITERATION = "per_iteration"  # each stair multiplies by rate^interval
DECAY_PER_INTERVAL = "per_interval"  # each stair multiplies by rate once


@dataclass
class LrSchedule:
    """Staircase exponential decay with plateau reset and convergence.

    The rate holds within each ``decay_interval`` stair and drops at the
    boundary; a plateau of ``patience`` iterations without the validation
    metric improving (strictly, beyond 1e-12) resets the rate to ``lr0``
    and restarts the decay clock; a second plateau after the reset declares
    convergence. Any improvement after a reset resumes normal decaying, so
    reset cycles are unlimited.
    """

    lr0: float = 1e-4
    decay_rate: float = 0.9998
    decay_interval: int = 1000
    eval_interval: int = 1000
    patience: int = 10000
    decay_mode: str = DECAY_PER_ITERATION
    phase: str = PHASE_DECAYING
    best_metric: float = math.inf
    iters_since_improvement: int = 0
    current_lr: float = field(init=False)
    last_reset_iteration: int = 0
    _last_tick: int = field(default=-1, repr=False)

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or not (0.0 < self.decay_rate <= 1.0):
            raise ValueError("lr0 must be positive and decay_rate in (0, 1]")
        if self.decay_interval < 1 or self.eval_interval < 1 or self.patience < 1:
            raise ValueError("intervals and patience must be >= 1")
        if self.decay_mode not in (DECAY_PER_ITERATION, DECAY_PER_INTERVAL):
            raise ValueError(f"unknown decay_mode {self.decay_mode!r}")
        self.current_lr = self.lr0

    def tick(self, iteration: int, eval_metric: float | None = None):
        """Advance to ``iteration``; returns (lr, action).

        ``eval_metric`` (validation mean position error, lower is better)
        must be supplied exactly on evaluation boundaries.
        """
        if iteration <= self._last_tick:
            raise ScheduleContractError(
                f"iterations must strictly increase, got {iteration} after {self._last_tick}"
            )
        self._last_tick = iteration
        action = ACTION_CONTINUE
        if eval_metric is not None:
            if not math.isfinite(eval_metric):
                raise ValueError(f"eval metric must be finite, got {eval_metric!r}")
            if eval_metric < self.best_metric - IMPROVEMENT_EPS:
                self.best_metric = eval_metric
                self.iters_since_improvement = 0
                if self.phase == PHASE_POST_RESET:
                    self.phase = PHASE_DECAYING
            else:
                self.iters_since_improvement += self.eval_interval
                if self.iters_since_improvement >= self.patience:
                    if self.phase == PHASE_DECAYING:
                        action = ACTION_RESET
                        self.phase = PHASE_POST_RESET
                        self.last_reset_iteration = iteration
                        self.iters_since_improvement = 0
                    else:
                        action = ACTION_CONVERGED
                        self.phase = PHASE_CONVERGED
        stairs = (iteration - self.last_reset_iteration) // self.decay_interval
        exponent = stairs * self.decay_interval if self.decay_mode == DECAY_PER_ITERATION else stairs
        self.current_lr = self.lr0 * self.decay_rate**exponent
        return self.current_lr, action


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol parameters; defaults follow the reference recipe."""

    batch_size: int = 32
    weight_decay: float = 1e-6
    seed: int = 0
    eval_interval: int = 1000
    max_iterations: int = 200_000
    lr0: float = 1e-4
    decay_rate: float = 0.9998
    decay_interval: int = 1000
    patience: int = 10000
    decay_mode: str = DECAY_PER_ITERATION
    hidden_dims: tuple = (64, 64)
    val_fraction: float = 0.1
    yaw_mode: str = YAW_TANH
    loss: str = "l1"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.yaw_mode not in (YAW_TANH, YAW_SINCOS):
            raise ValueError(f"unknown yaw_mode {self.yaw_mode!r}")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    lr: float
    val_pos_err: float
    val_theta_err: float
    event: str = ""


def _targets(dataset: Dataset, env: EnvironmentSpec, yaw_mode: str) -> np.ndarray:
    poses = dataset.poses_matrix()
    b = env.bounds
    nx = 2.0 * (poses[:, 0] - b.x_min) / b.width - 1.0
    ny = 2.0 * (poses[:, 1] - b.y_min) / b.height - 1.0
    if yaw_mode == YAW_TANH:
        return np.column_stack([nx, ny, poses[:, 2] / 180.0])
    rad = np.radians(poses[:, 2])
    return np.column_stack([nx, ny, np.sin(rad), np.cos(rad)])


def _val_errors(model: RegressorModel, X: np.ndarray, poses: np.ndarray, env: EnvironmentSpec):
    """Mean denormalised position / yaw error of the model on (X, poses)."""
    out = forward_batch(model, X)
    b = env.bounds
    ex = b.x_min + (out[:, 0] + 1.0) * 0.5 * b.width
    ey = b.y_min + (out[:, 1] + 1.0) * 0.5 * b.height
    if model.yaw_mode == YAW_TANH:
        et = out[:, 2] * 180.0
    else:
        et = np.degrees(np.arctan2(out[:, 2], out[:, 3]))
    pos = np.hypot(ex - poses[:, 0], ey - poses[:, 1])
    dt = np.abs((et - poses[:, 2] + 180.0) % 360.0 - 180.0)
    return float(np.mean(pos)), float(np.mean(dt))


def train(dataset: Dataset, env: EnvironmentSpec, cfg: TrainConfig, on_eval=None):
    """Train a regressor on the dataset; returns (best model, history).

    A seeded ``val_fraction`` split is held out to drive the schedule; the
    returned model is the snapshot with the best validation position error.
    ``on_eval(row, model)`` is called after each evaluation when given.
    """
    n = len(dataset)
    if n < cfg.batch_size:
        raise ValueError(f"dataset has {n} samples, need at least batch_size={cfg.batch_size}")
    n_val = max(1, int(round(n * cfg.val_fraction)))
    if n - n_val < cfg.batch_size:
        raise ValueError("dataset too small for the validation split")

    X = dataset.ranges_matrix()
    T = _targets(dataset, env, cfg.yaw_mode)
    poses = dataset.poses_matrix()

    perm = derived_rng(cfg.seed, STREAM_VAL_SPLIT).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    Xt, Tt = X[train_idx], T[train_idx]
    Xv, Pv = X[val_idx], poses[val_idx]

    layer_dims = (dataset.sensor.ray_count, *cfg.hidden_dims, 3 if cfg.yaw_mode == YAW_TANH else 4)
    model = RegressorModel.random(
        layer_dims,
        derived_rng(cfg.seed, STREAM_INIT),
        yaw_mode=cfg.yaw_mode,
        env_name=env.name,
        sensor=dataset.sensor,
    )
    params = model.parameters()
    adam = AdamState.for_params(params)
    sched = LrSchedule(
        lr0=cfg.lr0,
        decay_rate=cfg.decay_rate,
        decay_interval=cfg.decay_interval,
        eval_interval=cfg.eval_interval,
        patience=cfg.patience,
        decay_mode=cfg.decay_mode,
    )
    batch_rng = derived_rng(cfg.seed, STREAM_BATCHES)

    history: list[HistoryRow] = []
    best_model = model.copy()
    best_metric = math.inf
    n_train = Xt.shape[0]
    order = batch_rng.permutation(n_train)
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        if cursor + cfg.batch_size > n_train:
            order = batch_rng.permutation(n_train)
            cursor = 0
        sel = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        return Xt[sel], Tt[sel]

    stop = False
    for i in range(cfg.max_iterations):
        metric = None
        if i > 0 and i % cfg.eval_interval == 0:
            vp, vt = _val_errors(model, Xv, Pv, env)
            metric = vp
        lr, action = sched.tick(i, metric)
        if metric is not None:
            row = HistoryRow(i, lr, vp, vt, action if action != ACTION_CONTINUE else "")
            history.append(row)
            if vp < best_metric - IMPROVEMENT_EPS:
                best_metric = vp
                best_model = model.copy()
            if on_eval is not None:
                on_eval(row, model)
            if action == ACTION_CONVERGED:
                stop = True
                break
        bx, bt = next_batch()
        loss, grads = backward(model, bx, bt, cfg.loss)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at iteration {i}: {loss!r}")
        adam_step(params, grads, adam, lr, cfg.weight_decay)

    if not stop:
        # ran out of iterations mid-window: record a final validation point
        vp, vt = _val_errors(model, Xv, Pv, env)
        row = HistoryRow(cfg.max_iterations, sched.current_lr, vp, vt, "final")
        history.append(row)
        if vp < best_metric - IMPROVEMENT_EPS:
            best_metric = vp
            best_model = model.copy()
        if on_eval is not None:
            on_eval(row, best_model)

    return best_model, history


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Pose error statistics over a test set.

    ``per_sample_errors`` is an (n, 2) array of (position error in metres,
    absolute wrap-aware yaw error in degrees), in test-set order.
    """

    mean_pos_err: float
    mean_theta_err: float
    median_pos_err: float
    median_theta_err: float
    per_sample_errors: np.ndarray

    def __post_init__(self) -> None:
        errs = np.asarray(self.per_sample_errors, dtype=np.float64)
        object.__setattr__(self, "per_sample_errors", errs)
        if errs.ndim != 2 or errs.shape[1] != 2:
            raise ValueError(f"per_sample_errors must be (n, 2), got {errs.shape}")
        if np.any(errs < 0.0) or np.any(errs[:, 1] > 180.0):
            raise ValueError("errors must be >= 0 and yaw errors <= 180")


def evaluate(estimator, testset: Dataset, env: EnvironmentSpec) -> Metrics:
    """Per-sample position and yaw error of an estimator over a test set.

    Estimators exposing ``set_true_pose`` (the error-injection oracle) get
    the ground truth before each query.
    """
    if len(testset) == 0:
        raise ValueError("test set is empty")
    if testset.sensor != env.sensor:
        raise ValueError(f"test set sensor {testset.sensor} does not match {env.sensor}")
    est_sensor = getattr(estimator, "sensor", None)
    if est_sensor is not None and est_sensor != env.sensor:
        raise ValueError(f"estimator sensor {est_sensor} does not match {env.sensor}")
    inject = getattr(estimator, "set_true_pose", None)
    errs = np.empty((len(testset), 2))
    for i, s in enumerate(testset):
        if inject is not None:
            inject(s.pose)
        est = estimator.estimate(s.observation)
        pose = getattr(est, "pose", est)  # accept PoseEstimate or bare Pose2D
        errs[i, 0] = math.hypot(pose.x - s.pose.x, pose.y - s.pose.y)
        errs[i, 1] = abs(ang_diff(pose.theta, s.pose.theta))
    return Metrics(
        mean_pos_err=float(np.mean(errs[:, 0])),
        mean_theta_err=float(np.mean(errs[:, 1])),
        median_pos_err=float(np.median(errs[:, 0])),
        median_theta_err=float(np.median(errs[:, 1])),
        per_sample_errors=errs,
    )


# --- file formats ----------------------------------------------------------------


def _fmt12(v: float) -> str:
    return "%.12g" % v


def save_model(model: RegressorModel, path, extra_header: dict | None = None) -> None:
    """Write the model file: magic, JSON header, one line per tensor at
    12 significant digits (enough that save -> load -> save is stable).
    """
    sensor = model.sensor
    header = {
        "layer_dims": list(model.layer_dims),
        "activation": "relu",
        "env_name": model.env_name,
        "sensor": None
        if sensor is None
        else {"fov": sensor.fov, "ray_count": sensor.ray_count, "max_range": sensor.max_range},
        "yaw_mode": model.yaw_mode,
    }
    if extra_header:
        for k, v in extra_header.items():
            if k in header:
                raise ValueError(f"extra header key {k!r} collides with a core field")
            header[k] = v
    lines = [MODEL_MAGIC, json.dumps(header, sort_keys=True)]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"W{i} " + " ".join(_fmt12(v) for v in w.ravel()))
        lines.append(f"b{i} " + " ".join(_fmt12(v) for v in b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path) -> RegressorModel:
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a '{MODEL_MAGIC}' file")
    if len(lines) < 2:
        raise ModelFormatError(f"{path}: missing JSON header")
    try:
        header = json.loads(lines[1])
        layer_dims = tuple(int(d) for d in header["layer_dims"])
        yaw_mode = header["yaw_mode"]
        env_name = header["env_name"]
        sensor_h = header["sensor"]
        activation = header["activation"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad header: {exc}") from exc
    if activation != "relu":
        raise ModelFormatError(f"{path}: unsupported activation {activation!r}")
    sensor = None
    if sensor_h is not None:
        sensor = SensorConfig(
            fov=float(sensor_h["fov"]),
            ray_count=int(sensor_h["ray_count"]),
            max_range=float(sensor_h["max_range"]),
        )
    n_layers = len(layer_dims) - 1
    tensors = {}
    for line_no, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if not parts:
            raise ModelFormatError(f"{path}: line {line_no}: empty tensor line")
        name = parts[0]
        try:
            values = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ModelFormatError(f"{path}: line {line_no}: bad value: {exc}") from exc
        if name in tensors:
            raise ModelFormatError(f"{path}: line {line_no}: duplicate tensor {name}")
        tensors[name] = values
    weights, biases = [], []
    for i in range(n_layers):
        fan_out, fan_in = layer_dims[i + 1], layer_dims[i]
        for key, want in ((f"W{i}", fan_out * fan_in), (f"b{i}", fan_out)):
            if key not in tensors:
                raise ModelFormatError(f"{path}: missing tensor {key}")
            if tensors[key].size != want:
                raise ModelFormatError(
                    f"{path}: tensor {key} has {tensors[key].size} values, expected {want}"
                )
        weights.append(tensors[f"W{i}"].reshape(fan_out, fan_in))
        biases.append(tensors[f"b{i}"])
    if len(tensors) != 2 * n_layers:
        extras = sorted(set(tensors) - {f"{p}{i}" for i in range(n_layers) for p in "Wb"})
        raise ModelFormatError(f"{path}: unexpected tensors {extras}")
    return RegressorModel(layer_dims, weights, biases, yaw_mode, env_name, sensor)


def save_history(history, path, comments=()) -> None:
    """History CSV; optional leading '#' comment lines carry provenance."""
    lines = [f"# {c}" for c in comments]
    lines.append("iteration,lr,val_pos_err,val_theta_err,event")
    for row in history:
        # repr floats: shortest digits that reparse to the same value
        lines.append(
            f"{row.iteration},{row.lr!r},{row.val_pos_err!r},{row.val_theta_err!r},{row.event}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_history(path) -> list[HistoryRow]:
    lines = [
        ln for ln in Path(path).read_text(encoding="ascii").splitlines() if not ln.startswith("#")
    ]
    if not lines or lines[0] != "iteration,lr,val_pos_err,val_theta_err,event":
        raise ValueError(f"{path}: not a history file")
    out = []
    for ln in lines[1:]:
        it, lr, vp, vt, event = ln.split(",")
        out.append(HistoryRow(int(it), float(lr), float(vp), float(vt), event))
    return out
