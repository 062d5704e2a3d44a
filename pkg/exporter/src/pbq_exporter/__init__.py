"""Bridge from pretrained transformers to the PBTC container format.

Dumps each linear layer's weight matrix as [d_out, d_in] float32 and
captures the inputs each layer multiplies during a few calibration forward
passes as [d_in, n] columns, so the quantization toolkit can calibrate on
real weights without knowing anything about checkpoints or tokenizers.
"""

from .capture import MAX_COLUMNS, ActivationCapture, linear_modules, weight_matrix
from .container import container_bytes, entry_bytes
from .export import (
    ExportManifest,
    LayerRecord,
    calibration_ids,
    export_model,
    load_model,
    write_atomic,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationCapture",
    "ExportManifest",
    "LayerRecord",
    "MAX_COLUMNS",
    "calibration_ids",
    "container_bytes",
    "entry_bytes",
    "export_model",
    "linear_modules",
    "load_model",
    "weight_matrix",
    "write_atomic",
]
