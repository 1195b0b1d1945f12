from .checkpoint import load, save
from .network import (
    PRESETS,
    GatedConvRecognizer,
    LayerSpec,
    NetworkConfig,
    build,
    gated_block,
    glorot_bound,
)

__all__ = [
    "PRESETS", "GatedConvRecognizer", "LayerSpec", "NetworkConfig", "build",
    "gated_block", "glorot_bound", "load", "save",
]
