"""Projected-gradient training with Adam acceleration.

Every minibatch step updates the shared transforms (filter banks, fusion
transforms, classifier) and the batch's own rows of the explicit feature
matrices ``X`` and ``Z``. After each step ``X`` and ``Z`` are projected back
onto the non-negative orthant.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as sdcf
from .errors import ConfigError, DivergenceError
from .model import ArchConfig, FeatureVars, SdcfModel

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 100.0


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    mu: float = 1e-4
    lam: float = 1e-2
    # raise on rank loss instead of clamping singular values
    strict: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class AdamState:
    """First/second moments of one parameter block.

    ``t`` is a scalar step count for shared blocks, or one count per row for
    the per-sample feature blocks.
    """

    m: np.ndarray
    v: np.ndarray
    t: int | np.ndarray = 0

    @classmethod
    def zeros_like(cls, param, per_row=False):
        t = np.zeros(param.shape[0], dtype=np.int64) if per_row else 0
        return cls(np.zeros_like(param), np.zeros_like(param), t)


def adam_step(state: AdamState, param, grad, cfg: OptimConfig):
    """One Adam update with L2 weight decay added to the gradient.

    Returns the new parameter array and the (updated in place) state.
    """
    g = grad + cfg.weight_decay * param if cfg.weight_decay else grad
    state.t += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = state.m / (1 - cfg.beta1**state.t)
    v_hat = state.v / (1 - cfg.beta2**state.t)
    return param - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps), state


def adam_step_rows(state: AdamState, param, grad_rows, rows, cfg: OptimConfig):
    """Adam update restricted to ``param[rows]``, each row with its own step count.

    No weight decay: feature rows are held in place by the fidelity terms.
    """
    p = param[rows]
    g = grad_rows
    t = state.t[rows] + 1
    state.t[rows] = t
    m = cfg.beta1 * state.m[rows] + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v[rows] + (1 - cfg.beta2) * g * g
    state.m[rows] = m
    state.v[rows] = v
    m_hat = m / (1 - cfg.beta1 ** t)[:, None]
    v_hat = v / (1 - cfg.beta2 ** t)[:, None]
    param[rows] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return param, state


def project_nonneg(block):
    return np.maximum(block, 0.0)


@dataclass
class TrainReport:
    loss_curve: np.ndarray
    model: SdcfModel
    vars: FeatureVars | None
    initial_loss: float
    wall_time: float = field(default=0.0, compare=False)


def _check_dataset(dataset, arch):
    S, y = dataset
    S = np.asarray(S, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if S.ndim != 3 or S.shape[0] != arch.num_channels or S.shape[2] != arch.window:
        raise ValueError(
            f"dataset channels must be ({arch.num_channels}, K, {arch.window}), got {S.shape}"
        )
    if S.shape[1] == 0:
        raise ValueError("dataset is empty")
    if y.shape != (S.shape[1],):
        raise ValueError("one label per sample required")
    if y.min() < 0 or y.max() >= arch.num_classes:
        raise ValueError(f"labels must lie in [0, {arch.num_classes})")
    return S, y


def _check_loss(epoch, loss, initial):
    if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(abs(initial), 1.0):
        raise DivergenceError(epoch, loss, initial)


def _shared_blocks(m: SdcfModel):
    """(getter, setter) pairs over the shared parameter blocks, in a fixed order."""
    blocks = []
    for c, bank in enumerate(m.banks):
        for l in range(len(bank)):
            blocks.append(("bank", c, l))
    for c in range(len(m.fusion)):
        blocks.append(("fusion", c, None))
    blocks.append(("classifier", None, None))
    return blocks


def _get(m, key, grads=None):
    kind, c, l = key
    src = grads if grads is not None else m
    if kind == "bank":
        return src.banks[c][l]
    if kind == "fusion":
        return src.fusion[c]
    return src.classifier


def _set(m, key, value):
    kind, c, l = key
    if kind == "bank":
        m.banks[c][l] = value
    elif kind == "fusion":
        m.fusion[c] = value
    else:
        m.classifier = value


def train(dataset, arch: ArchConfig, cfg: OptimConfig, callback=None) -> TrainReport:
    """Jointly learn filters, features, fusion transforms and classifier.

    Parameters
    ----------
    dataset : (S, y)
        ``S`` has shape (C, K, D); ``y`` holds K class indices.
    arch : ArchConfig
        Its ``mu``/``lam`` are replaced by those of ``cfg``.
    cfg : OptimConfig
    callback : callable, optional
        Called as ``callback(epoch, step, model, vars)`` after every step.

    Returns
    -------
    TrainReport
        ``loss_curve[e]`` is the full-data objective after epoch ``e + 1``.
    """
    arch = dataclasses.replace(arch, mu=cfg.mu, lam=cfg.lam)
    S, y = _check_dataset(dataset, arch)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = sdcf.init_model(arch, rng)
    vars = sdcf.forward_features(model, S, prox=True)
    N = len(y)
    B = min(cfg.batch_size, N)
    strict = cfg.strict

    initial = sdcf.joint_objective(model, vars, S, y, strict=strict)
    _check_loss(0, initial, initial)

    keys = _shared_blocks(model)
    shared = {k: AdamState.zeros_like(_get(model, k)) for k in keys}
    x_states = [AdamState.zeros_like(x, per_row=True) for x in vars.X]
    z_state = AdamState.zeros_like(vars.Z, per_row=True)

    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for step, lo in enumerate(range(0, N, B)):
            rows = np.sort(order[lo : lo + B])
            _, grads = sdcf.value_and_grad(
                model,
                vars.rows(rows),
                S[:, rows],
                y[rows],
                strict=strict,
                data_weight=1.0 / len(rows),
                reg_weight=1.0 / N,
            )
            for k in keys:
                new, _ = adam_step(shared[k], _get(model, k), _get(model, k, grads), cfg)
                _set(model, k, new)
            for c, (xs, gx) in enumerate(zip(x_states, grads.X)):
                adam_step_rows(xs, vars.X[c], gx, rows, cfg)
                vars.X[c][rows] = project_nonneg(vars.X[c][rows])
            adam_step_rows(z_state, vars.Z, grads.Z, rows, cfg)
            vars.Z[rows] = project_nonneg(vars.Z[rows])
            if callback is not None:
                callback(epoch, step, model, vars)
        loss = sdcf.joint_objective(model, vars, S, y, strict=strict)
        _check_loss(epoch + 1, loss, initial)
        curve.append(loss)
        logger.debug("epoch %d loss %.6g", epoch + 1, loss)

    return TrainReport(
        np.array(curve, dtype=np.float64), model, vars, initial, time.perf_counter() - start
    )


def train_cnn_baseline(dataset, arch: ArchConfig, cfg: OptimConfig, callback=None) -> TrainReport:
    """Train the same network as a plain CNN: cross-entropy only, no penalties.

    Features are the forward pass with ReLU at the sites where the explicit
    feature variables would sit. The report's ``vars`` holds those features.
    """
    arch = dataclasses.replace(arch, mu=0.0, lam=0.0)
    S, y = _check_dataset(dataset, arch)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = sdcf.init_model(arch, rng)
    N = len(y)
    B = min(cfg.batch_size, N)

    initial = sdcf.cnn_value_and_grad(model, S, y, with_grad=False)[0]
    _check_loss(0, initial, initial)
    keys = _shared_blocks(model)
    shared = {k: AdamState.zeros_like(_get(model, k)) for k in keys}

    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for step, lo in enumerate(range(0, N, B)):
            rows = np.sort(order[lo : lo + B])
            _, grads = sdcf.cnn_value_and_grad(
                model, S[:, rows], y[rows], data_weight=1.0 / len(rows)
            )
            for k in keys:
                new, _ = adam_step(shared[k], _get(model, k), _get(model, k, grads), cfg)
                _set(model, k, new)
            if callback is not None:
                callback(epoch, step, model, None)
        loss = sdcf.cnn_value_and_grad(model, S, y, with_grad=False)[0]
        _check_loss(epoch + 1, loss, initial)
        curve.append(loss)

    vars = sdcf.forward_features(model, S, prox=True)
    return TrainReport(
        np.array(curve, dtype=np.float64), model, vars, initial, time.perf_counter() - start
    )


def write_loss_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(curve, start=1):
            w.writerow([e, format(float(loss), ".17g")])
