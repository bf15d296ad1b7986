"""
Dimensionless feedforward network predicting form-error compensation.

A plain NumPy multilayer perceptron (ReLU hidden layers, linear output) trained
with mini-batch Adam on mean squared error. Inputs and output are z-scored
with training-set statistics. One network is trained per mold surface.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ModelLoadError, ValidationError
from .forming import GlassTarget
from .geometry import Profile, local_geometry, nondimensionalize
from .materials import ThermalSchedule

log = logging.getLogger(__name__)

LAYER_SIZES = (6, 12, 12, 12, 12, 10, 10, 8, 8, 1)
FEATURE_NAMES = ("X", "T_bar", "K_bar", "angle_rad", "anneal_rate_c_per_s", "t_mold_c")
SURFACES = ("upper", "lower")
SCHEMA_VERSION = 1
EXTRAPOLATION_STD = 6.0


class ExtrapolationWarning(UserWarning):
    """A prediction input lies far outside the training distribution."""


@dataclass(frozen=True)
class FeatureRow:
    case_id: str
    x_mm: float
    X: float
    T_bar: float
    K_bar: float
    angle_rad: float
    anneal_rate_c_per_s: float
    t_mold_c: float
    fec_u_bar: float = 0.0
    fec_l_bar: float = 0.0

    def features(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in FEATURE_NAMES)

    def target(self, surface: str) -> float:
        return self.fec_u_bar if surface == "upper" else self.fec_l_bar


def feature_matrix(target: GlassTarget, schedule: ThermalSchedule, X) -> np.ndarray:
    """Six-column feature matrix at dimensionless radii ``X`` of a target.

    Radii are built as X * r_max so that geometrically similar targets yield the
    same features up to rounding.
    """
    X = np.asarray(X, dtype=float)
    R = target.r_max_mm
    x = X * R
    geo = local_geometry(target.surface, x)
    _, T, K, _ = nondimensionalize(x, target.thickness_mm, geo.gaussian_curvature_per_mm2, None, R)
    return np.column_stack(
        (
            X,
            np.broadcast_to(T, X.shape),
            K,
            geo.inclination_rad,
            np.full(X.shape, schedule.annealing_rate_c_per_s),
            np.full(X.shape, schedule.molding_temperature_c),
        )
    )


def rows_to_arrays(rows: Sequence[FeatureRow], surface: str) -> tuple[np.ndarray, np.ndarray]:
    if surface not in SURFACES:
        raise ValidationError(f"surface must be one of {SURFACES}, got {surface!r}")
    if len(rows) == 0:
        raise ValidationError("no rows")
    F = np.array([r.features() for r in rows], dtype=float)
    y = np.array([r.target(surface) for r in rows], dtype=float)
    return F, y


@dataclass(eq=False)
class Network:
    layers: tuple[int, ...]
    weights: list[np.ndarray]  # layer l has shape (layers[l+1], layers[l])
    biases: list[np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: float
    output_std: float
    surface: str
    seed: int

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(
            self.layers,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_mean.copy(),
            self.input_std.copy(),
            self.output_mean,
            self.output_std,
            self.surface,
            self.seed,
        )

    def normalize(self, F: np.ndarray) -> np.ndarray:
        return (F - self.input_mean) / self.input_std

    def predict(self, F) -> np.ndarray:
        """Denormalized FEC_bar for raw feature rows."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        return forward(self, self.normalize(F)) * self.output_std + self.output_mean


def init_network(seed: int, surface: str = "upper", layers: Sequence[int] = LAYER_SIZES) -> Network:
    """He-initialized network with zero biases and identity normalization."""
    if surface not in SURFACES:
        raise ValidationError(f"surface must be one of {SURFACES}, got {surface!r}")
    layers = tuple(int(n) for n in layers)
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)) for n_in, n_out in zip(layers, layers[1:])]
    biases = [np.zeros(n_out) for n_out in layers[1:]]
    n_in = layers[0]
    return Network(layers, weights, biases, np.zeros(n_in), np.ones(n_in), 0.0, 1.0, surface, int(seed))


def _forward_cache(net: Network, Z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    acts = [Z]
    pre = []
    a = Z
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return a[:, 0], acts, pre


def forward(net: Network, Z) -> np.ndarray:
    """Normalized-scale output for already normalized inputs, shape (n,)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if not np.all(np.isfinite(Z)):
        raise DomainError("network input contains non-finite values")
    return _forward_cache(net, Z)[0]


def backprop(net: Network, Z: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """MSE loss and its gradients with respect to every weight and bias."""
    out, acts, pre = _forward_cache(net, Z)
    n = len(y)
    resid = out - y
    loss = float(np.mean(resid * resid))
    delta = (2.0 / n) * resid[:, None]
    gw: list[np.ndarray] = [None] * len(net.weights)
    gb: list[np.ndarray] = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i]) * (pre[i - 1] > 0)
    return loss, gw, gb


def gradient_check(
    net: Network,
    row: tuple[Sequence[float], float],
    epsilon: float = 1e-5,
    grad_fn: Callable | None = None,
) -> float:
    """Largest relative discrepancy between analytic and central-difference gradients.

    ``row`` is (normalized features, normalized target). The relative error of
    each parameter is |g - g_fd| / max(|g|, |g_fd|, 1e-4); gradients smaller
    than the floor are effectively compared in absolute terms.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValidationError("epsilon must lie in [1e-7, 1e-4]")
    Z = np.atleast_2d(np.asarray(row[0], dtype=float))
    y = np.atleast_1d(np.asarray(row[1], dtype=float))
    _, gw, gb = (grad_fn or backprop)(net, Z, y)
    probe = net.copy()

    def loss() -> float:
        r = forward(probe, Z) - y
        return float(np.mean(r * r))

    worst = 0.0
    for params, grads in ((probe.weights, gw), (probe.biases, gb)):
        for p, g in zip(params, grads):
            flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + epsilon
                up = loss()
                flat[j] = keep - epsilon
                down = loss()
                flat[j] = keep
                fd = (up - down) / (2.0 * epsilon)
                err = abs(gflat[j] - fd) / max(abs(gflat[j]), abs(fd), 1e-4)
                worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 20000
    batch_size: int = 32
    early_stop_patience: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValidationError("Adam betas must lie in (0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValidationError("epochs, batch size and patience must be positive")


@dataclass
class TrainReport:
    train_mse: float
    test_mse: float
    train_r2: float
    test_r2: float
    train_mse_raw: float
    test_mse_raw: float
    epochs: int
    best_epoch: int
    train_curve: list[float] = field(repr=False)
    test_curve: list[float] = field(repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _stats(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    # a spread at round-off level would amplify rounding noise in the inputs
    flat = std <= 1e-12 * np.maximum(np.abs(mean), 1e-300)
    bad = [FEATURE_NAMES[i] if F.shape[1] == len(FEATURE_NAMES) else str(i) for i in np.flatnonzero(flat)]
    if bad:
        raise ValidationError(f"feature(s) with zero spread in the training rows: {', '.join(bad)}")
    return mean, std


def train(
    net: Network,
    train_rows: Sequence[FeatureRow],
    test_rows: Sequence[FeatureRow] | None,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[Network, TrainReport]:
    """Fit ``net`` (a copy is trained) and return it with its report.

    Early stopping tracks the test loss (training loss when no test rows are
    given) and restores the best parameters seen.
    """
    Ftr, ytr = rows_to_arrays(train_rows, net.surface)
    has_test = bool(test_rows)
    Fte, yte = rows_to_arrays(test_rows, net.surface) if has_test else (Ftr, ytr)
    net = net.copy()
    net.input_mean, net.input_std = _stats(Ftr)
    net.output_mean = float(ytr.mean())
    std = float(ytr.std())
    net.output_std = std if std > 0 else 1.0
    if std == 0:
        # constant targets: the output mean alone is exact and every gradient stays zero
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = 0.0
    Ztr, Zte = net.normalize(Ftr), net.normalize(Fte)
    ttr = (ytr - net.output_mean) / net.output_std
    tte = (yte - net.output_mean) / net.output_std

    rng = np.random.default_rng(cfg.seed)
    params = net.weights + net.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_epsilon
    n = len(ttr)
    step = 0
    best = (np.inf, 0, net.copy())
    train_curve: list[float] = []
    test_curve: list[float] = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            _, gw, gb = backprop(net, Ztr[idx], ttr[idx])
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, mi, vi in zip(params, gw + gb, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        tr = float(np.mean((forward(net, Ztr) - ttr) ** 2))
        te = float(np.mean((forward(net, Zte) - tte) ** 2)) if has_test else tr
        train_curve.append(tr)
        test_curve.append(te)
        if te < best[0]:
            best = (te, epoch, net.copy())
        elif epoch - best[1] >= cfg.early_stop_patience:
            break
    net = best[2]
    tr_eval = evaluate(net, train_rows)
    te_eval = evaluate(net, test_rows) if has_test else tr_eval
    report = TrainReport(
        train_mse=tr_eval.mse,
        test_mse=te_eval.mse,
        train_r2=tr_eval.r2,
        test_r2=te_eval.r2,
        train_mse_raw=tr_eval.mse_raw,
        test_mse_raw=te_eval.mse_raw,
        epochs=epoch,
        best_epoch=best[1],
        train_curve=train_curve,
        test_curve=test_curve,
    )
    log.info("trained %s net: %d epochs, test R2 %.4f", net.surface, epoch, report.test_r2)
    return net, report


@dataclass(frozen=True, eq=False)
class Evaluation:
    mse: float  # normalized output scale
    mse_raw: float  # FEC_bar scale
    r2: float
    r2_defined: bool
    abs_errors: np.ndarray  # per row, FEC_bar scale


def evaluate(net: Network, rows: Sequence[FeatureRow]) -> Evaluation:
    F, y = rows_to_arrays(rows, net.surface)
    pred = net.predict(F)
    err = pred - y
    mse_raw = float(np.mean(err * err))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    defined = ss_tot > 0
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot if defined else float("nan")
    return Evaluation(mse_raw / net.output_std**2, mse_raw, r2, defined, np.abs(err))


def predict_fec(
    upper_net: Network,
    lower_net: Network,
    target: GlassTarget,
    schedule: ThermalSchedule,
    n: int = 201,
) -> tuple[Profile, Profile]:
    """Dimensional compensation profiles (mm) for both molds on the target grid."""
    if upper_net.surface != "upper" or lower_net.surface != "lower":
        raise ValidationError("expected an upper-tagged and a lower-tagged network")
    X = np.linspace(0.0, 1.0, n)
    F = feature_matrix(target, schedule, X)
    R = target.r_max_mm
    out = []
    for net in (upper_net, lower_net):
        z = np.abs(net.normalize(F))
        far = np.any(z > EXTRAPOLATION_STD, axis=0)
        if np.any(far):
            names = [FEATURE_NAMES[i] for i in np.flatnonzero(far)]
            warnings.warn(
                f"{net.surface} network extrapolates beyond {EXTRAPOLATION_STD:g} std in {', '.join(names)}",
                ExtrapolationWarning,
                stacklevel=2,
            )
        out.append(Profile(X * R, net.predict(F) * R))
    return out[0], out[1]


def save_model(net: Network, path: str | Path) -> None:
    doc = {
        "layers": list(net.layers),
        "activation": "relu",
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "input_mean": net.input_mean.tolist(),
        "input_std": net.input_std.tolist(),
        "output_mean": net.output_mean,
        "output_std": net.output_std,
        "surface": net.surface,
        "seed": net.seed,
        "schema_version": SCHEMA_VERSION,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path, expected_surface: str | None = None) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot read model {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelLoadError(f"{path}: unsupported schema (expected version {SCHEMA_VERSION})")
    try:
        layers = tuple(int(n) for n in doc["layers"])
        if layers != LAYER_SIZES:
            raise ModelLoadError(f"{path}: layer sizes {list(layers)} differ from {list(LAYER_SIZES)}")
        if doc.get("activation") != "relu":
            raise ModelLoadError(f"{path}: unsupported activation {doc.get('activation')!r}")
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        for w, b, n_in, n_out in zip(weights, biases, layers, layers[1:]):
            if w.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ModelLoadError(f"{path}: parameter shapes do not match the layer sizes")
        if len(weights) != len(layers) - 1 or len(biases) != len(layers) - 1:
            raise ModelLoadError(f"{path}: wrong number of layers")
        net = Network(
            layers,
            weights,
            biases,
            np.array(doc["input_mean"], dtype=float),
            np.array(doc["input_std"], dtype=float),
            float(doc["output_mean"]),
            float(doc["output_std"]),
            str(doc["surface"]),
            int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelLoadError):
            raise
        raise ModelLoadError(f"{path}: malformed model ({exc})") from None
    if net.input_mean.shape != (layers[0],) or net.input_std.shape != (layers[0],) or np.any(net.input_std <= 0):
        raise ModelLoadError(f"{path}: bad input normalization")
    if not net.output_std > 0:
        raise ModelLoadError(f"{path}: bad output normalization")
    if net.surface not in SURFACES:
        raise ModelLoadError(f"{path}: unknown surface tag {net.surface!r}")
    if expected_surface is not None and net.surface != expected_surface:
        raise ModelLoadError(f"{path}: model is tagged {net.surface!r}, expected {expected_surface!r}")
    return net
