"""Supervised multi-channel convolutional transform learning model.

Each input channel runs through its own stack of 1-D convolution layers
(filter bank). The last layer has no activation: its output is matched to a
free, non-negative feature matrix ``X_c``. The per-channel features are
fused by linear transforms into a shared non-negative feature matrix ``Z``,
which feeds a softmax classifier ``theta``.

The training objective is

    J = sum_c F_conv(T^c, X_c | S_c) + F_fusion(Tf, Z, X) + F_CE(theta, Z | y)

with

    F_conv   = 1/2 ||forward_c(S_c) - X_c||^2 + sum_l (mu ||T_l||^2 - lam logdet T_l)
    F_fusion = 1/2 ||Z - sum_c X_c Tf_c||^2   + sum_c (mu ||Tf_c||^2 - lam logdet Tf_c)
    F_CE     = sum_k log sum_v exp(z_k . (theta_v - theta_{y_k}))

The non-negativity indicators on ``X`` and ``Z`` are handled by projection in
the optimizer and contribute zero here. Gradients are derived by hand
(reverse mode) and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import linops
from .errors import ConfigError
from .linops import Activation, ConvSpec


@dataclass(frozen=True)
class LayerSpec:
    conv: ConvSpec
    activation: Activation = Activation.IDENTITY
    pool: bool = False


@dataclass(frozen=True)
class ArchConfig:
    """Architecture of a model and the weights of its regularizers.

    ``window`` is the number of time steps ``D`` per sample and channel.
    ``fusion_out`` is the width ``O`` of the fused features.
    """

    num_channels: int
    window: int
    layers: tuple[LayerSpec, ...]
    fusion_out: int
    num_classes: int = 3
    mu: float = 1e-4
    lam: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.num_channels < 1:
            raise ConfigError("num_channels must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.layers:
            raise ConfigError("at least one convolution layer is required")
        if self.mu < 0 or self.lam < 0:
            raise ConfigError("mu and lam must be non-negative")
        if self.layers[0].conv.in_channels != 1:
            raise ConfigError("first layer must take a single input plane")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.conv.in_channels != prev.conv.out_channels:
                raise ConfigError(
                    f"layer in_channels {nxt.conv.in_channels} != previous out_channels "
                    f"{prev.conv.out_channels}"
                )
        if Activation(self.layers[-1].activation) is not Activation.IDENTITY:
            raise ConfigError("the last convolution layer must not have an activation")
        length = self.window
        for i, layer in enumerate(self.layers):
            if length < 1:
                raise ConfigError(f"window {self.window} collapses to length 0 before layer {i + 1}")
            if layer.pool:
                if length < 2:
                    raise ConfigError(
                        f"window {self.window} too short to pool after layer {i + 1}"
                    )
                length //= 2
        if not 1 <= self.fusion_out <= self.feature_dim * self.num_channels:
            raise ConfigError(
                f"fusion_out must be in [1, {self.feature_dim * self.num_channels}], "
                f"got {self.fusion_out}"
            )

    @property
    def lengths(self) -> list[int]:
        """Sequence length entering each layer, plus the final output length."""
        out = [self.window]
        for layer in self.layers:
            out.append(out[-1] // 2 if layer.pool else out[-1])
        return out

    @property
    def feature_dim(self) -> int:
        """Flattened per-channel feature width ``I = D_L * M_L``."""
        return self.lengths[-1] * self.layers[-1].conv.out_channels

    def to_dict(self) -> dict:
        return {
            "num_channels": self.num_channels,
            "window": self.window,
            "layers": [
                {
                    "in_channels": l.conv.in_channels,
                    "out_channels": l.conv.out_channels,
                    "kernel_size": l.conv.kernel_size,
                    "stride": l.conv.stride,
                    "padding": l.conv.padding,
                    "activation": Activation(l.activation).value,
                    "pool": l.pool,
                }
                for l in self.layers
            ],
            "fusion_out": self.fusion_out,
            "num_classes": self.num_classes,
            "mu": self.mu,
            "lam": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        layers = tuple(
            LayerSpec(
                ConvSpec(l["in_channels"], l["out_channels"], l["kernel_size"]),
                Activation(l["activation"]),
                bool(l["pool"]),
            )
            for l in d["layers"]
        )
        return cls(
            num_channels=d["num_channels"],
            window=d["window"],
            layers=layers,
            fusion_out=d["fusion_out"],
            num_classes=d["num_classes"],
            mu=d["mu"],
            lam=d["lam"],
        )


@dataclass
class SdcfModel:
    arch: ArchConfig
    banks: list[list[np.ndarray]]  # banks[c][l]: (P_l * in_l, M_l)
    fusion: list[np.ndarray]  # fusion[c]: (I, O)
    classifier: np.ndarray  # (O, V)

    def copy(self) -> "SdcfModel":
        return SdcfModel(
            self.arch,
            [[w.copy() for w in bank] for bank in self.banks],
            [f.copy() for f in self.fusion],
            self.classifier.copy(),
        )


@dataclass
class FeatureVars:
    X: list[np.ndarray]  # X[c]: (K, I)
    Z: np.ndarray  # (K, O)

    def copy(self) -> "FeatureVars":
        return FeatureVars([x.copy() for x in self.X], self.Z.copy())

    def rows(self, idx) -> "FeatureVars":
        return FeatureVars([x[idx] for x in self.X], self.Z[idx])


@dataclass
class Gradients:
    banks: list[list[np.ndarray]]
    X: list[np.ndarray]
    fusion: list[np.ndarray]
    Z: np.ndarray
    classifier: np.ndarray


def init_model(arch: ArchConfig, rng: np.random.Generator) -> SdcfModel:
    """Uniform(-a, a) initialization with ``a = 1/sqrt(fan_in)`` for every block."""

    def uniform(shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    banks = []
    for _ in range(arch.num_channels):
        banks.append([uniform(l.conv.weight_shape, l.conv.weight_shape[0]) for l in arch.layers])
    I, O, C = arch.feature_dim, arch.fusion_out, arch.num_channels
    fusion = [uniform((I, O), I * C) for _ in range(C)]
    classifier = uniform((O, arch.num_classes), O)
    return SdcfModel(arch, banks, fusion, classifier)


def _as_channels(S, arch: ArchConfig) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 3 or S.shape[0] != arch.num_channels or S.shape[2] != arch.window:
        raise ValueError(
            f"expected channel data of shape ({arch.num_channels}, K, {arch.window}), got {S.shape}"
        )
    return S


# --------------------------------------------------------------------------
# forward / backward through one channel pipeline


def _channel_forward_cached(bank, S_c, arch):
    S_c = np.asarray(S_c, dtype=np.float64)
    if S_c.ndim != 2 or S_c.shape[1] != arch.window:
        raise ValueError(f"channel data must be (K, {arch.window}), got {S_c.shape}")
    if len(bank) != len(arch.layers):
        raise ValueError(f"filter bank has {len(bank)} layers, arch has {len(arch.layers)}")
    x = S_c[:, None, :]
    cache = []
    for W, layer in zip(bank, arch.layers):
        if W.shape != layer.conv.weight_shape:
            raise ValueError(f"weight shape {W.shape} != {layer.conv.weight_shape}")
        pre, cols = linops.conv_forward(x, W, layer.conv.kernel_size)
        act = linops.activate(layer.activation, pre)
        entry = {"x_shape": x.shape, "cols": cols, "pre": pre}
        if layer.pool:
            act, idx = linops.maxpool_forward(act)
            entry["pool_idx"] = idx
            entry["pool_len"] = pre.shape[-1]
        cache.append(entry)
        x = act
    return x.reshape(x.shape[0], -1), cache


def _channel_backward(dflat, bank, arch, cache):
    """Gradient w.r.t. each layer weight given d(loss)/d(flattened output)."""
    K = dflat.shape[0]
    M_L = arch.layers[-1].conv.out_channels
    d = dflat.reshape(K, M_L, -1)
    grads = [None] * len(bank)
    for l in range(len(bank) - 1, -1, -1):
        layer, entry = arch.layers[l], cache[l]
        if layer.pool:
            d = linops.maxpool_backward(d, entry["pool_idx"], entry["pool_len"])
        d = d * linops.activation_grad(layer.activation, entry["pre"])
        d, grads[l] = linops.conv_backward(
            d, entry["cols"], bank[l], entry["x_shape"], layer.conv.kernel_size
        )
    return grads


def channel_forward(bank, S_c, arch: ArchConfig) -> np.ndarray:
    """Run one channel's convolution stack; returns flattened features (K, I)."""
    return _channel_forward_cached(bank, S_c, arch)[0]


# --------------------------------------------------------------------------
# objective terms


def _penalty(W, mu, lam, strict, where):
    value = mu * linops.frobenius_sq(W)
    if lam:
        value -= lam * linops.logdet_rect(W, strict=strict, where=where)
    return value


def _penalty_grad(W, mu, lam, strict, where):
    g = 2.0 * mu * W
    if lam:
        g = g - lam * linops.logdet_grad(W, strict=strict, where=where)
    return g


def f_conv(bank, X_c, S_c, arch: ArchConfig, mu=None, lam=None, strict=True) -> float:
    mu = arch.mu if mu is None else mu
    lam = arch.lam if lam is None else lam
    R = channel_forward(bank, S_c, arch) - X_c
    value = 0.5 * float(np.sum(R * R))
    for l, W in enumerate(bank):
        value += _penalty(W, mu, lam, strict, f"conv layer {l + 1}")
    return value


def fused_input(fusion, X) -> np.ndarray:
    """``sum_c X_c @ Tf_c``."""
    return sum(x @ t for x, t in zip(X, fusion))


def f_fusion(fusion, Z, X, mu=0.0, lam=0.0, strict=True) -> float:
    E = Z - fused_input(fusion, X)
    value = 0.5 * float(np.sum(E * E))
    for c, T in enumerate(fusion):
        value += _penalty(T, mu, lam, strict, f"fusion transform {c + 1}")
    return value


def _log_softmax(logits):
    shift = logits - logits.max(axis=1, keepdims=True)
    return shift - np.log(np.sum(np.exp(shift), axis=1, keepdims=True))


def softmax(logits):
    shift = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    return e / e.sum(axis=1, keepdims=True)


def f_ce(theta, Z, y) -> float:
    """Summed cross-entropy ``sum_k log sum_v exp(z_k . (theta_v - theta_{y_k}))``."""
    y = np.asarray(y, dtype=np.intp)
    V = theta.shape[1]
    if y.size and (y.min() < 0 or y.max() >= V):
        raise ValueError(f"labels must lie in [0, {V})")
    logits = Z @ theta
    rel = logits - logits[np.arange(len(y)), y][:, None]
    m = rel.max(axis=1, keepdims=True)
    return float(np.sum(m[:, 0] + np.log(np.sum(np.exp(rel - m), axis=1))))


def joint_objective(
    model: SdcfModel, vars: FeatureVars, S, y, strict=True, data_weight=1.0, reg_weight=1.0
) -> float:
    """Full objective J. ``data_weight`` scales the per-sample terms, ``reg_weight`` the penalties."""
    return value_and_grad(
        model, vars, S, y, strict=strict, data_weight=data_weight, reg_weight=reg_weight,
        with_grad=False,
    )[0]


def value_and_grad(
    model: SdcfModel,
    vars: FeatureVars,
    S,
    y,
    strict=True,
    data_weight=1.0,
    reg_weight=1.0,
    with_grad=True,
):
    """Evaluate J and (optionally) its gradient with respect to every block."""
    arch = model.arch
    S = _as_channels(S, arch)
    y = np.asarray(y, dtype=np.intp)
    mu, lam = arch.mu, arch.lam
    wd, wr = data_weight, reg_weight
    C = arch.num_channels

    value = 0.0
    residuals, caches = [], []
    for c in range(C):
        out, cache = _channel_forward_cached(model.banks[c], S[c], arch)
        R = out - vars.X[c]
        value += wd * 0.5 * float(np.sum(R * R))
        for l, W in enumerate(model.banks[c]):
            value += wr * _penalty(W, mu, lam, strict, f"channel {c + 1} conv layer {l + 1}")
        residuals.append(R)
        caches.append(cache)

    E = vars.Z - fused_input(model.fusion, vars.X)
    value += wd * 0.5 * float(np.sum(E * E))
    for c, T in enumerate(model.fusion):
        value += wr * _penalty(T, mu, lam, strict, f"fusion transform {c + 1}")
    value += wd * f_ce(model.classifier, vars.Z, y)

    if not with_grad:
        return value, None

    probs = softmax(vars.Z @ model.classifier)
    probs[np.arange(len(y)), y] -= 1.0
    d_theta = wd * (vars.Z.T @ probs)
    d_Z = wd * (E + probs @ model.classifier.T)

    d_banks, d_X, d_fusion = [], [], []
    for c in range(C):
        T = model.fusion[c]
        d_fusion.append(
            -wd * (vars.X[c].T @ E)
            + wr * _penalty_grad(T, mu, lam, strict, f"fusion transform {c + 1}")
        )
        d_X.append(-wd * (residuals[c] + E @ T.T))
        conv_grads = _channel_backward(wd * residuals[c], model.banks[c], arch, caches[c])
        d_banks.append(
            [
                g + wr * _penalty_grad(W, mu, lam, strict, f"channel {c + 1} conv layer {l + 1}")
                for l, (g, W) in enumerate(zip(conv_grads, model.banks[c]))
            ]
        )
    return value, Gradients(d_banks, d_X, d_fusion, d_Z, d_theta)


def grad_joint(model: SdcfModel, vars: FeatureVars, S, y, **kwargs) -> Gradients:
    return value_and_grad(model, vars, S, y, **kwargs)[1]


# --------------------------------------------------------------------------
# closed-form features and inference


def forward_features(model: SdcfModel, S, prox=True):
    """Closed-form features at the two sites where an activation was removed."""
    S = _as_channels(S, model.arch)
    site = linops.nonneg_prox if prox else (lambda a: a)
    X = [site(channel_forward(model.banks[c], S[c], model.arch)) for c in range(len(S))]
    Z = site(fused_input(model.fusion, X))
    return FeatureVars(X, Z)


def infer(model: SdcfModel, S, prox=True) -> np.ndarray:
    """Class probabilities, shape (K, V)."""
    Z = forward_features(model, S, prox=prox).Z
    return softmax(Z @ model.classifier)


def predict(model: SdcfModel, S, prox=True) -> np.ndarray:
    return np.argmax(infer(model, S, prox=prox), axis=1)


def cnn_value_and_grad(model: SdcfModel, S, y, data_weight=1.0, with_grad=True):
    """CE loss of the plain network (features from the forward pass) and its gradient.

    This is the baseline: the same architecture trained end to end by
    backpropagation, ReLU at the two removed sites, no explicit features and
    no transform penalties.
    """
    arch = model.arch
    S = _as_channels(S, arch)
    y = np.asarray(y, dtype=np.intp)
    outs, caches, X = [], [], []
    for c in range(arch.num_channels):
        out, cache = _channel_forward_cached(model.banks[c], S[c], arch)
        outs.append(out)
        caches.append(cache)
        X.append(linops.nonneg_prox(out))
    Zpre = fused_input(model.fusion, X)
    Z = linops.nonneg_prox(Zpre)
    value = data_weight * f_ce(model.classifier, Z, y)
    if not with_grad:
        return value, None

    probs = softmax(Z @ model.classifier)
    probs[np.arange(len(y)), y] -= 1.0
    probs *= data_weight
    d_theta = Z.T @ probs
    d_Zpre = (probs @ model.classifier.T) * (Zpre > 0)
    d_banks, d_fusion = [], []
    for c in range(arch.num_channels):
        d_fusion.append(X[c].T @ d_Zpre)
        d_out = (d_Zpre @ model.fusion[c].T) * (outs[c] > 0)
        d_banks.append(_channel_backward(d_out, model.banks[c], arch, caches[c]))
    return value, Gradients(d_banks, [], d_fusion, None, d_theta)


# --------------------------------------------------------------------------
# serialization


def _dump(obj) -> str:
    # json with floats written at 17 significant digits
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, int, np.integer)):
        return json.dumps(obj if not isinstance(obj, np.integer) else int(obj))
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError("cannot serialize non-finite weight")
        return format(float(obj), ".17g")
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def model_to_json(model: SdcfModel) -> str:
    doc = {
        "arch": model.arch.to_dict(),
        "banks": [[W for W in bank] for bank in model.banks],
        "fusion": list(model.fusion),
        "classifier": model.classifier,
    }
    return _dump(doc) + "\n"


def model_from_json(text: str) -> SdcfModel:
    doc = json.loads(text)
    arch = ArchConfig.from_dict(doc["arch"])

    def mat(rows, shape):
        a = np.array(rows, dtype=np.float64).reshape(shape)
        return a

    banks = [
        [mat(W, l.conv.weight_shape) for W, l in zip(bank, arch.layers)] for bank in doc["banks"]
    ]
    I, O = arch.feature_dim, arch.fusion_out
    fusion = [mat(T, (I, O)) for T in doc["fusion"]]
    classifier = mat(doc["classifier"], (O, arch.num_classes))
    if len(banks) != arch.num_channels or len(fusion) != arch.num_channels:
        raise ValueError("channel count in document does not match arch")
    return SdcfModel(arch, banks, fusion, classifier)
