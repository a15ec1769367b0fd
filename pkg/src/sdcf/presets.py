"""Named architectures (SDCF 1L-4L and the plain CNN baseline)."""

from __future__ import annotations

from .errors import ConfigError
from .linops import Activation, ConvSpec
from .model import ArchConfig, LayerSpec

SELU = Activation.SELU
IDENT = Activation.IDENTITY

# (in, out, kernel, activation, pool); padding is always kernel // 2
_TABLE = {
    "sdcf1l": [(1, 16, 3, IDENT, True)],
    "sdcf2l": [(1, 8, 3, SELU, True), (8, 16, 3, IDENT, True)],
    "sdcf3l": [(1, 4, 11, SELU, True), (4, 8, 7, SELU, True), (8, 16, 3, IDENT, True)],
    "sdcf4l": [
        (1, 4, 13, SELU, True),
        (4, 8, 11, SELU, True),
        (8, 16, 9, SELU, True),
        (16, 32, 5, IDENT, False),
    ],
    # same depth/widths as sdcf3l, kernels 11/9/7
    "cnn-baseline": [(1, 4, 11, SELU, True), (4, 8, 9, SELU, True), (8, 16, 7, IDENT, True)],
}

PRESETS = tuple(_TABLE)
BASELINE_PRESETS = frozenset({"cnn-baseline"})
DEFAULT_MU = 1e-4
DEFAULT_LAM = 1e-2


def preset_layers(name: str) -> tuple[LayerSpec, ...]:
    try:
        rows = _TABLE[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return tuple(LayerSpec(ConvSpec(i, o, k), act, pool) for i, o, k, act, pool in rows)


def preset_arch(
    name: str,
    window: int,
    num_channels: int = 5,
    num_classes: int = 3,
    fusion_out: int | None = None,
    mu: float = DEFAULT_MU,
    lam: float = DEFAULT_LAM,
) -> ArchConfig:
    """Build the :class:`ArchConfig` for a preset.

    ``fusion_out`` defaults to the per-channel feature width ``I``.
    """
    layers = preset_layers(name)
    if fusion_out is None:
        # build once with a placeholder width to learn I
        probe = ArchConfig(num_channels, window, layers, 1, num_classes, mu, lam)
        fusion_out = probe.feature_dim
    return ArchConfig(num_channels, window, layers, fusion_out, num_classes, mu, lam)
