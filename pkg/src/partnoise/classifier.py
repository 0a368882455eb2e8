"""Small MLP classifier trained on noise-corrected risks.

Plain numpy: forward pass, hand-derived backpropagation, SGD with
momentum and Adam, all written out so every gradient path (including
the one through the additive transition slack) is explicit and
finite-difference checkable.

Risk kinds:
    ce       cross-entropy of the clean-posterior model g on noisy labels
    ptd_f    forward correction: cross-entropy of T(x)^T g(x)
    ptd_r    importance reweighting with weights g_y(x) / (T(x)^T g(x))_y
    ptd_f_v  ptd_f with T(x) + slack in place of T(x)
    ptd_r_v  ptd_r with T(x) + slack in place of T(x)

For the *_v kinds the gradient flows through the raw sum T(x) + slack;
the validity projection (clip and renormalize, transition.revise) is
applied where matrices are used to predict, never inside the loss, so
the raw slack accumulates unprojected across optimizer steps.
"""
from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, ConvergenceError, DataError
from .transition import revise_batch

__all__ = [
    "RISK_KINDS",
    "REVISION_KINDS",
    "ClassifierParams",
    "TrainConfig",
    "RiskResult",
    "TrainLog",
    "TrainResult",
    "init_params",
    "predict_posterior",
    "hidden_representations",
    "noisy_posterior",
    "risk",
    "train",
    "evaluate",
    "save_model",
    "load_model",
]

RISK_KINDS = ("ce", "ptd_f", "ptd_r", "ptd_f_v", "ptd_r_v")
REVISION_KINDS = ("ptd_f_v", "ptd_r_v")

_DEFAULT_SLACK_LR = 5e-7  # reference protocol value; tuned for much
                          # larger models, so always exposed as config


@dataclass
class ClassifierParams:
    """Weights and biases of an MLP with relu hidden units.

    weights[l] has shape (fan_in, fan_out); an empty hidden stack (one
    weight matrix) is softmax regression. The softmax output layer is
    implicit.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


@dataclass(frozen=True)
class TrainConfig:
    """Two-phase training settings.

    Phase 1 trains the network parameters with the configured
    optimizer. When slack_learning_rate is set and the risk kind is a
    revision kind, phase 2 continues from the best phase-1 snapshot
    with Adam jointly updating the parameters and the transition slack.
    """

    optimizer: str = "sgd_momentum"
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    slack_learning_rate: float | None = None
    slack_epochs: int | None = None
    hidden_layers: tuple[int, ...] = (64,)

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.slack_learning_rate is not None and not self.slack_learning_rate > 0:
            raise ConfigError("slack_learning_rate must be positive when set")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer sizes must be positive")


@dataclass
class RiskResult:
    """Loss value with gradients for every parameter and the slack."""

    loss: float
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    slack_grad: np.ndarray | None
    clamp_count: int


@dataclass
class TrainLog:
    """Per-epoch training trace plus the selected snapshot's position."""

    rows: list[dict] = field(default_factory=list)
    selected_epoch: int = -1
    selected_val_accuracy: float = 0.0

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["phase", "epoch", "train_loss", "val_accuracy", "clamp_count"]
            )
            writer.writeheader()
            writer.writerows(self.rows)


@dataclass
class TrainResult:
    params: ClassifierParams
    slack: np.ndarray | None
    log: TrainLog


def init_params(
    layer_sizes: list[int] | tuple[int, ...], seed: int = 0
) -> ClassifierParams:
    """Uniform Glorot initialization, zero biases."""
    if len(layer_sizes) < 2:
        raise ConfigError("layer_sizes needs at least input and output sizes")
    if any(s < 1 for s in layer_sizes):
        raise ConfigError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ClassifierParams(weights=weights, biases=biases)


def _forward(
    params: ClassifierParams, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Returns (activations per layer, pre-activations, softmax output)."""
    acts = [x]
    pres = []
    a = x
    # overflow to inf is tolerated here because the finiteness check
    # below turns it into a diagnosable divergence error
    with np.errstate(over="ignore"):
        for w, b in zip(params.weights[:-1], params.biases[:-1]):
            z = a @ w + b
            pres.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        z_out = a @ params.weights[-1] + params.biases[-1]
    if not np.all(np.isfinite(z_out)):
        raise ConvergenceError("non-finite activations in the forward pass")
    z_out = z_out - z_out.max(axis=1, keepdims=True)
    e = np.exp(z_out)
    g = e / e.sum(axis=1, keepdims=True)
    return acts, pres, g


def predict_posterior(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Softmax posterior for one feature vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.weights[0].shape[0]:
        raise DataError(f"features must have width {params.weights[0].shape[0]}")
    _, _, g = _forward(params, x)
    return g[0] if single else g


def hidden_representations(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Last hidden-layer activations for a batch; raw features when the
    network has no hidden layers."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DataError(f"features must be (n, {params.weights[0].shape[0]})")
    acts, _, _ = _forward(params, x)
    return acts[-1]


def noisy_posterior(
    params: ClassifierParams, transition: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Modeled noisy posterior T(x)^T g(x), renormalized."""
    g = predict_posterior(params, x)
    transition = np.asarray(transition, dtype=np.float64)
    if g.ndim == 1:
        s = transition.T @ g
        return s / s.sum()
    s = np.einsum("bkj,bk->bj", transition, g)
    return s / s.sum(axis=1, keepdims=True)


def _softmax_backward(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    return g * (dg - np.einsum("bc,bc->b", dg, g)[:, None])


def _backprop(
    params: ClassifierParams,
    acts: list[np.ndarray],
    pres: list[np.ndarray],
    dz: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weight_grads: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    bias_grads: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    for layer in reversed(range(len(params.weights))):
        weight_grads[layer] = acts[layer].T @ dz
        bias_grads[layer] = dz.sum(axis=0)
        if layer:
            da = dz @ params.weights[layer].T
            dz = da * (pres[layer - 1] > 0.0)
    return weight_grads, bias_grads


def risk(
    params: ClassifierParams,
    features: np.ndarray,
    noisy_labels: np.ndarray,
    kind: str,
    transitions: np.ndarray | None = None,
    slack: np.ndarray | None = None,
    posterior_floor: float = 1e-12,
    weight_cap: float = 100.0,
) -> RiskResult:
    """Evaluate one corrected risk on a batch, with all gradients.

    Arguments:
        features: (b, d) batch.
        noisy_labels: (b,) noisy labels.
        kind: one of RISK_KINDS.
        transitions: (b, c, c) per-instance matrices; required for every
            kind except ce.
        slack: (c, c) shared additive revision; required for the
            revision kinds, used as the raw sum T(x) + slack.
        posterior_floor: lower clamp applied inside logs and to the
            reweighting denominator.
        weight_cap: upper clamp on importance weights; clamped examples
            are counted and their weight treated as a constant.
    """
    if kind not in RISK_KINDS:
        raise ConfigError(f"unknown risk kind {kind!r}; expected one of {RISK_KINDS}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(noisy_labels)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise DataError("risk expects features (b, d) and labels (b,)")
    b = features.shape[0]
    if b == 0:
        raise DataError("risk needs a nonempty batch")
    acts, pres, g = _forward(params, features)
    c = g.shape[1]
    rows = np.arange(b)
    onehot = np.zeros((b, c))
    onehot[rows, labels] = 1.0

    slack_grad: np.ndarray | None = None
    clamp_count = 0

    if kind == "ce":
        p = g[rows, labels]
        floored = p < posterior_floor
        clamp_count += int(floored.sum())
        loss = float(-np.log(np.maximum(p, posterior_floor)).mean())
        dz = (g - onehot) / b
        dz[floored] = 0.0
    else:
        if transitions is None:
            raise ConfigError(f"risk kind {kind!r} requires per-instance transitions")
        m = np.asarray(transitions, dtype=np.float64)
        if m.shape != (b, c, c):
            raise ConfigError(f"transitions must have shape ({b}, {c}, {c})")
        if kind in REVISION_KINDS:
            if slack is None:
                raise ConfigError(f"risk kind {kind!r} requires a slack matrix")
            slack = np.asarray(slack, dtype=np.float64)
            if slack.shape != (c, c):
                raise ConfigError(f"slack must have shape ({c}, {c})")
            m = m + slack  # raw sum; validity is restored only at use sites
        s_full = np.einsum("bkj,bk->bj", m, g)
        s_raw = s_full[rows, labels]
        s_floored = s_raw < posterior_floor
        s = np.maximum(s_raw, posterior_floor)
        m_rows = m[rows, :, labels]  # (b, c): column of M for each noisy label

        if kind in ("ptd_f", "ptd_f_v"):
            clamp_count += int(s_floored.sum())
            loss = float(-np.log(s).mean())
            dg = np.where(s_floored[:, None], 0.0, -m_rows / (s[:, None] * b))
            dz = _softmax_backward(g, dg)
            if kind in REVISION_KINDS:
                coef = np.where(s_floored, 0.0, -1.0 / (s * b))
                slack_grad = (g * coef[:, None]).T @ onehot
        else:  # ptd_r, ptd_r_v
            u_raw = g[rows, labels]
            u_floored = u_raw < posterior_floor
            u = np.maximum(u_raw, posterior_floor)
            w_raw = u / s
            capped = w_raw > weight_cap
            w = np.minimum(w_raw, weight_cap)
            clamped = capped | s_floored | u_floored
            clamp_count += int(clamped.sum())
            ce_term = -np.log(u)
            loss = float((w * ce_term).mean())
            # free examples: d/dg of u*(-log u)/s, through u and s both;
            # clamped examples: weight held constant, plain weighted ce
            du = np.where(clamped, w * (-1.0 / u), (-np.log(u) - 1.0) / s) / b
            ds = np.where(clamped, 0.0, u * np.log(u) / (s * s)) / b
            dg = du[:, None] * onehot + ds[:, None] * m_rows
            dz = _softmax_backward(g, dg)
            if kind in REVISION_KINDS:
                slack_grad = (g * ds[:, None]).T @ onehot

    if not np.isfinite(loss):
        raise ConvergenceError(f"non-finite loss for risk kind {kind!r}")
    weight_grads, bias_grads = _backprop(params, acts, pres, dz)
    return RiskResult(
        loss=loss,
        weight_grads=weight_grads,
        bias_grads=bias_grads,
        slack_grad=slack_grad,
        clamp_count=clamp_count,
    )


class _SGDMomentum:
    def __init__(self, arrays: list[np.ndarray], lr: float, momentum: float, wd: float):
        self.lr = lr
        self.momentum = momentum
        self.wd = wd
        self.velocity = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray], decay_mask: list[bool]):
        for a, grad, vel, decay in zip(arrays, grads, self.velocity, decay_mask):
            g = grad + self.wd * a if decay else grad
            vel *= self.momentum
            vel += g
            a -= self.lr * vel


class _Adam:
    def __init__(self, arrays: list[np.ndarray], lr: float, wd: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.wd = wd
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray], decay_mask: list[bool]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for a, grad, m, v, decay in zip(arrays, grads, self.m, self.v, decay_mask):
            g = grad + self.wd * a if decay else grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _make_optimizer(name: str, arrays, lr, momentum, wd):
    if name == "sgd_momentum":
        return _SGDMomentum(arrays, lr, momentum, wd)
    return _Adam(arrays, lr, wd)


def _val_accuracy(
    params: ClassifierParams,
    val_set: Dataset,
    kind: str,
    val_transitions: np.ndarray | None,
    slack: np.ndarray | None,
) -> float:
    """Noisy-validation accuracy of the modeled noisy-label predictor."""
    g = predict_posterior(params, val_set.features)
    if kind == "ce" or val_transitions is None:
        scores = g
    else:
        m = val_transitions
        if kind in REVISION_KINDS and slack is not None:
            m = revise_batch(m, slack)
        scores = np.einsum("bkj,bk->bj", m, g)
    preds = np.argmax(scores, axis=1)
    return float(np.mean(preds == val_set.noisy_labels))


def train(
    train_set: Dataset,
    val_set: Dataset,
    kind: str,
    transitions: np.ndarray | None = None,
    val_transitions: np.ndarray | None = None,
    config: TrainConfig | None = None,
    init: ClassifierParams | None = None,
) -> TrainResult:
    """Train a classifier on one corrected risk.

    Phase 1 runs config.epochs over the training set with the
    configured optimizer, updating only the network. For revision
    kinds, phase 2 continues from the best phase-1 snapshot with Adam
    jointly updating the network and the slack matrix (initialized at
    zero) for slack_epochs at slack_learning_rate. Batches are
    sequential slices of one seeded shuffle per epoch, so a fixed seed
    reproduces the run. The returned snapshot is the epoch with the
    best noisy-validation accuracy.

    transitions / val_transitions are (n, c, c) stacks aligned with the
    train / validation instances; required for every kind except ce.

    init, when given, starts phase 1 from an existing network instead
    of fresh random parameters. The reweighted risks need this: their
    per-example weight g/(T^T g) turns into repulsion from the observed
    label wherever g at the label is below 1/e, so from a cold start
    every example is pushed away from its label and training collapses.
    Started from a network that already ranks clean labels highly, the
    same dynamics downweight likely-flipped examples instead.
    """
    config = config or TrainConfig()
    if kind not in RISK_KINDS:
        raise ConfigError(f"unknown risk kind {kind!r}; expected one of {RISK_KINDS}")
    if train_set.noisy_labels is None or val_set.noisy_labels is None:
        raise DataError("train and validation sets need noisy labels")
    if train_set.n < 1:
        raise DataError("empty training set")
    c = train_set.class_count
    needs_t = kind != "ce"
    if needs_t:
        if transitions is None or val_transitions is None:
            raise ConfigError(f"risk kind {kind!r} needs transitions for train and val")
        transitions = np.asarray(transitions, dtype=np.float64)
        val_transitions = np.asarray(val_transitions, dtype=np.float64)
        if transitions.shape != (train_set.n, c, c):
            raise ConfigError("transitions misaligned with the training set")
        if val_transitions.shape != (val_set.n, c, c):
            raise ConfigError("val_transitions misaligned with the validation set")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if init is None:
        params = init_params(
            [train_set.d, *config.hidden_layers, c],
            seed=int(seeds[0].generate_state(1)[0]),
        )
    else:
        sizes = init.layer_sizes
        if sizes[0] != train_set.d or sizes[-1] != c:
            raise ConfigError(
                f"init network maps {sizes[0]} -> {sizes[-1]}, "
                f"data needs {train_set.d} -> {c}"
            )
        params = init.copy()
    shuffle_rng = np.random.default_rng(seeds[1])

    base_kind = kind.removesuffix("_v")
    log = TrainLog()
    best = {
        "acc": -1.0,
        "params": params.copy(),
        "slack": None,
        "epoch": -1,
    }

    def run_phase(phase: int, epochs: int, active_kind: str, slack, optimizer):
        arrays = [*params.weights, *params.biases]
        decay = [True] * len(arrays)
        if slack is not None:
            arrays = [*arrays, slack]
            decay = [*decay, False]
        n = train_set.n
        for epoch in range(epochs):
            perm = shuffle_rng.permutation(n)
            total_loss = 0.0
            clamps = 0
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                batch_t = transitions[idx] if needs_t else None
                result = risk(
                    params,
                    train_set.features[idx],
                    train_set.noisy_labels[idx],
                    active_kind,
                    transitions=batch_t,
                    slack=slack if active_kind in REVISION_KINDS else None,
                )
                grads = [*result.weight_grads, *result.bias_grads]
                if slack is not None:
                    grads = [*grads, result.slack_grad]
                optimizer.step(arrays, grads, decay)
                total_loss += result.loss * len(idx)
                clamps += result.clamp_count
            val_acc = _val_accuracy(
                params, val_set, active_kind, val_transitions, slack
            )
            log.rows.append(
                {
                    "phase": phase,
                    "epoch": epoch,
                    "train_loss": total_loss / n,
                    "val_accuracy": val_acc,
                    "clamp_count": clamps,
                }
            )
            if val_acc > best["acc"]:
                best.update(
                    acc=val_acc,
                    params=params.copy(),
                    slack=None if slack is None else slack.copy(),
                    epoch=len(log.rows) - 1,
                )

    optimizer = _make_optimizer(
        config.optimizer,
        [*params.weights, *params.biases],
        config.learning_rate,
        config.momentum,
        config.weight_decay,
    )
    run_phase(1, config.epochs, base_kind, None, optimizer)

    slack = None
    if kind in REVISION_KINDS:
        # continue from the best warm-up snapshot; that snapshot is the
        # zero-slack model, so seed the tracker accordingly in case no
        # phase-2 epoch improves on it
        best_params = best["params"].copy()
        params.weights = best_params.weights
        params.biases = best_params.biases
        best["slack"] = np.zeros((c, c))
        slack = np.zeros((c, c))
        slack_lr = config.slack_learning_rate or _DEFAULT_SLACK_LR
        adam = _Adam(
            [*params.weights, *params.biases, slack], slack_lr, config.weight_decay
        )
        run_phase(2, config.slack_epochs or config.epochs, kind, slack, adam)

    log.selected_epoch = best["epoch"]
    log.selected_val_accuracy = best["acc"]
    return TrainResult(params=best["params"], slack=best["slack"], log=log)


def evaluate(params: ClassifierParams, dataset: Dataset) -> float:
    """Clean-label accuracy; argmax ties resolve to the lowest class."""
    if dataset.clean_labels is None:
        raise DataError("evaluate needs clean labels")
    g = predict_posterior(params, dataset.features)
    return float(np.mean(np.argmax(g, axis=1) == dataset.clean_labels))


def save_model(params: ClassifierParams, path: str | Path) -> None:
    """Write layer shapes and row-major coefficients as JSON."""
    payload = {
        "layer_sizes": params.layer_sizes,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> ClassifierParams:
    """Load a model written by save_model."""
    try:
        payload = json.loads(Path(path).read_text())
        sizes = payload["layer_sizes"]
        weights = [
            np.asarray(flat, dtype=np.float64).reshape(fan_in, fan_out)
            for flat, fan_in, fan_out in zip(
                payload["weights"], sizes[:-1], sizes[1:]
            )
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load model from {path}: {exc}") from exc
    return ClassifierParams(weights=weights, biases=biases)
