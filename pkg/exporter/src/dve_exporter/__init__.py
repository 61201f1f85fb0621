"""Activation export from pretrained torch networks into the DVEB embedding
layout consumed by the deep Vecchia pipeline."""

from .export import (
    ExportError,
    ExportManifest,
    MissingLayerError,
    TrainModeError,
    VerifyReport,
    capture_activations,
    export,
    model_fingerprint,
    verify,
)

__version__ = "0.1.0"
