"""Small float64 tensor engine: reverse-mode tape, layer blocks, Adam and spectral norms."""
from .autodiff import Tape, Tensor
from .layers import LayerSpec, ParameterStore, Sequential, format_layers, parse_layers
from .optim import adam_step, apply_adam
from .spectral import SpectralNorm, spectral_norm

__all__ = [
    "Tape", "Tensor", "LayerSpec", "ParameterStore", "Sequential", "parse_layers", "format_layers",
    "adam_step", "apply_adam", "spectral_norm", "SpectralNorm",
]
