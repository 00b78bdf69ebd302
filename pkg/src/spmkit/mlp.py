"""Single-hidden-layer perceptron learning the plant's inverse kinematics.

Input is the canonical-signed relative quaternion ``q01`` (w, x, y, z),
feature-normalised; output is the servo pair ``(theta1, theta2)`` in radians.
Training minimises mean-squared error with Adam on shuffled minibatches.
Everything is plain numpy so the weights are bit-reproducible under a seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import mechanism as mk
from .plant import Dataset, analytic_ik_batch, wrapped_abs_error
from .rotation import UnitQuaternion, canonicalize_array

FORMAT_NAME = "spmkit-ik-model"
FORMAT_VERSION = 1


class Diverged(Exception):
    """Training loss went non-finite."""


class FormatError(Exception):
    """Model file is malformed or truncated."""


class VersionError(Exception):
    """Model file was written by an unsupported format version."""


@dataclass(frozen=True)
class MlpHyperparams:
    hidden_units: int = 2700
    activation: str = "tanh"
    tolerance: float = 1e-3  # relative improvement of the best epoch loss
    n_iter_no_change: int = 10
    max_iterations: int = 1000  # epochs
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    rng_seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class TrainingInfo:
    final_loss: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    loss_curve: list[float] = field(default_factory=list)


@dataclass
class IkModel:
    mean: np.ndarray  # (4,)
    scale: np.ndarray  # (4,)
    W1: np.ndarray  # (4, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, 2)
    b2: np.ndarray  # (2,)
    hyperparams: MlpHyperparams = field(default_factory=MlpHyperparams)
    info: TrainingInfo = field(default_factory=TrainingInfo)

    def __post_init__(self):
        if np.any(self.scale <= 0):
            raise ValueError("normalisation scales must be > 0")

    @property
    def hidden_units(self) -> int:
        return self.W1.shape[1]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2))

    def predict_batch(self, q01) -> np.ndarray:
        x = (canonicalize_array(np.atleast_2d(np.asarray(q01, dtype=float))) - self.mean) / self.scale
        return np.tanh(x @ self.W1 + self.b1) @ self.W2 + self.b2

    def predict(self, q01) -> tuple[float, float]:
        q = q01.as_array() if isinstance(q01, UnitQuaternion) else np.asarray(q01, dtype=float)
        if q[0] < 0 or (q[0] == 0 and _first_nonzero_negative(q)):
            q = -q
        h = np.tanh(((q - self.mean) / self.scale) @ self.W1 + self.b1)
        y = h @ self.W2 + self.b2
        return float(y[0]), float(y[1])


def _first_nonzero_negative(q) -> bool:
    for v in q:
        if v != 0:
            return v < 0
    return False


class AnalyticIk:
    """Closed-form IK wrapped in the model interface, for comparisons."""

    def predict_batch(self, q01) -> np.ndarray:
        return analytic_ik_batch(canonicalize_array(np.atleast_2d(np.asarray(q01, dtype=float))))

    def predict(self, q01) -> tuple[float, float]:
        q = q01 if isinstance(q01, UnitQuaternion) else UnitQuaternion.from_array(q01)
        return mk.inverse_kinematics(q.rotate(np.array([0.0, 0.0, 1.0])))


def predict(model, q01) -> tuple[float, float]:
    return model.predict(q01)


# --------------------------------------------------------------------------
# training


def init_params(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    b1 = math.sqrt(6.0 / (n_in + n_hidden))
    b2 = math.sqrt(6.0 / (n_hidden + n_out))
    return [
        rng.uniform(-b1, b1, (n_in, n_hidden)),
        np.zeros(n_hidden),
        rng.uniform(-b2, b2, (n_hidden, n_out)),
        np.zeros(n_out),
    ]


def loss_and_grads(params, X, Y):
    """Mean-squared error over all outputs and its gradients."""
    W1, b1, W2, b2 = params
    h = np.tanh(X @ W1 + b1)
    err = h @ W2 + b2 - Y
    loss = float(np.mean(err * err))
    d_out = (2.0 / err.size) * err
    d_hid = (d_out @ W2.T) * (1.0 - h * h)
    return loss, [X.T @ d_hid, d_hid.sum(0), h.T @ d_out, d_out.sum(0)]


class _Workspace:
    """Preallocated hidden-layer buffers; same arithmetic as ``loss_and_grads``."""

    def __init__(self, batch: int, hidden: int):
        self.h = np.empty((batch, hidden))
        self.dh = np.empty((batch, hidden))

    def loss_and_grads(self, params, X, Y):
        W1, b1, W2, b2 = params
        m = len(X)
        h = self.h[:m]
        dh = self.dh[:m]
        np.matmul(X, W1, out=h)
        h += b1
        np.tanh(h, out=h)
        err = h @ W2 + b2 - Y
        loss = float(np.mean(err * err))
        d_out = (2.0 / err.size) * err
        gW2 = h.T @ d_out
        np.matmul(d_out, W2.T, out=dh)
        np.multiply(h, h, out=h)
        np.subtract(1.0, h, out=h)
        dh *= h
        return loss, [X.T @ dh, dh.sum(0), gW2, d_out.sum(0)]


@dataclass
class Adam:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list | None = None
    v: list | None = None

    def step(self, params, grads) -> None:
        """In-place Adam update with bias correction."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.step_size * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def _normaliser(X: np.ndarray):
    mean = X.mean(0)
    scale = X.std(0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def train(dataset: Dataset, hp: MlpHyperparams = MlpHyperparams(), verbose: bool = False) -> IkModel:
    """Fit the network on the training split of ``dataset``."""
    tr = dataset.split("train")
    if len(tr) == 0:
        raise ValueError("training split is empty")
    X_raw = canonicalize_array(tr.q01)
    mean, scale = _normaliser(X_raw)
    X = (X_raw - mean) / scale
    # standardised targets; the scaling is folded back into W2, b2 at the end
    y_mean, y_scale = _normaliser(np.asarray(tr.theta, dtype=float))
    Y = (tr.theta - y_mean) / y_scale
    rng = np.random.default_rng(hp.rng_seed)
    params = init_params(X.shape[1], hp.hidden_units, Y.shape[1], rng)
    opt = Adam(hp.step_size, hp.beta1, hp.beta2, hp.epsilon)
    n = len(X)
    bs = min(hp.batch_size, n)
    best = math.inf
    best_params = [p.copy() for p in params]
    stall = 0
    curve = []
    work = _Workspace(bs, hp.hidden_units)
    start = time.perf_counter()
    epoch = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, hp.max_iterations + 1):
            order = rng.permutation(n)
            total = 0.0
            for lo in range(0, n, bs):
                idx = order[lo : lo + bs]
                loss, grads = work.loss_and_grads(params, X[idx], Y[idx])
                if not math.isfinite(loss):
                    raise Diverged(f"loss became {loss} at epoch {epoch}; reduce step_size")
                opt.step(params, grads)
                total += loss * len(idx)
            epoch_loss = total / n
            curve.append(epoch_loss)
            if verbose:
                print(f"epoch {epoch:4d}  loss {epoch_loss:.3e}")
            if epoch_loss < best * (1.0 - hp.tolerance):
                stall = 0
            else:
                stall += 1
            if epoch_loss < best:
                best = epoch_loss
                best_params = [p.copy() for p in params]
            if stall >= hp.n_iter_no_change:
                break
    # keep the lowest-loss epoch; constant-step Adam jitters between epochs
    W1, b1, W2, b2 = best_params
    info = TrainingInfo(best, epoch, time.perf_counter() - start, curve)
    return IkModel(mean, scale, W1, b1, W2 * y_scale, b2 * y_scale + y_mean, hyperparams=hp, info=info)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    mae_theta1: float  # deg
    mae_theta2: float  # deg
    residuals: np.ndarray  # (n, 2) rad, wrapped prediction - truth
    t: np.ndarray
    truth: np.ndarray
    prediction: np.ndarray
    dataset_id: str = ""

    @property
    def mae(self) -> tuple[float, float]:
        return self.mae_theta1, self.mae_theta2


def evaluate(model, dataset: Dataset, split: str | None = "test", dataset_id: str = "") -> EvalReport:
    """Per-joint MAE in degrees; ``model`` needs only ``predict_batch``."""
    part = dataset.split(split) if split else dataset
    if len(part) == 0:
        raise ValueError(f"{split} split is empty")
    pred = model.predict_batch(part.q01)
    err = wrapped_abs_error(pred, part.theta)
    res = np.where(pred - part.theta >= 0, err, -err)
    mae = np.degrees(err.mean(0))
    return EvalReport(float(mae[0]), float(mae[1]), res, part.t, part.theta, pred, dataset_id)


# --------------------------------------------------------------------------
# persistence


def save_model(model: IkModel, path) -> Path:
    """Versioned JSON; floats are written with ``repr`` so they round-trip exactly."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "hyperparams": asdict(model.hyperparams),
        "training": {
            "final_loss": model.info.final_loss,
            "iterations": model.info.iterations,
            "wall_time": model.info.wall_time,
        },
        "normalisation": {"mean": model.mean.tolist(), "scale": model.scale.tolist()},
        "shapes": {"W1": list(model.W1.shape), "W2": list(model.W2.shape)},
        "W1": model.W1.ravel().tolist(),
        "b1": model.b1.tolist(),
        "W2": model.W2.ravel().tolist(),
        "b2": model.b2.tolist(),
    }
    path = Path(path)
    path.write_text(json.dumps(doc))
    return path


def load_model(path) -> IkModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a readable model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: missing {FORMAT_NAME!r} header")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: file format version {version}, this build reads version {FORMAT_VERSION}")
    try:
        known = {f.name for f in fields(MlpHyperparams)}
        hp = MlpHyperparams(**{k: v for k, v in doc["hyperparams"].items() if k in known})
        n_in, h = doc["shapes"]["W1"]
        h2, n_out = doc["shapes"]["W2"]
        W1 = np.array(doc["W1"], dtype=float).reshape(n_in, h)
        W2 = np.array(doc["W2"], dtype=float).reshape(h2, n_out)
        b1 = np.array(doc["b1"], dtype=float)
        b2 = np.array(doc["b2"], dtype=float)
        if b1.shape != (h,) or b2.shape != (n_out,) or h2 != h:
            raise ValueError("bias or weight shapes disagree")
        tr = doc.get("training", {})
        info = TrainingInfo(tr.get("final_loss", math.nan), tr.get("iterations", 0), tr.get("wall_time", 0.0))
        model = IkModel(
            np.array(doc["normalisation"]["mean"], dtype=float),
            np.array(doc["normalisation"]["scale"], dtype=float),
            W1,
            b1,
            W2,
            b2,
            hp,
            info,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from exc
    if not model.is_finite():
        raise FormatError(f"{path}: non-finite weights")
    return model
