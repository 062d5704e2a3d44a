"""Partially binarized weight quantization.

Most weights collapse to one bit (a sign against an analytic per-group
scale); a small salient fraction keeps an 8-bit code; a bitmap tells the two
apart. The pbgptq module adds Hessian-guided error compensation on top, qat
adds a training-time layer with frozen salient weights, and tensorio defines
the container format.
"""

from .binarize import binarization_error, optimal_alpha, sign_binarize, ste_backward
from .config import QuantConfig
from .estimators import PartiallyBinarizedQuantizer
from .hessian import FactorizationError, HessianState, accumulate, finalize
from .pbgptq import QuantReport, evaluate, pbgptq_quantize, rtn_quantize
from .pbmatrix import (
    BitBudget,
    PBMatrix,
    assemble,
    bit_budget,
    dequantize,
    pack,
    pb_matvec,
    unpack,
)
from .qat import (
    PBLinearLayer,
    TrainRecord,
    pb_backward,
    pb_forward,
    train_demo,
    zero_shot_capacity_probe,
)
from .saliency import (
    MaskStats,
    SaliencyMask,
    detect_hessian,
    detect_magnitude,
    mask_stats,
)
from .tensorio import (
    ContainerFormatError,
    TensorContainer,
    dense_matmul,
    read_container,
    write_container,
)

__version__ = "0.1.0"

__all__ = [
    "BitBudget",
    "ContainerFormatError",
    "FactorizationError",
    "HessianState",
    "MaskStats",
    "PBLinearLayer",
    "PBMatrix",
    "PartiallyBinarizedQuantizer",
    "QuantConfig",
    "QuantReport",
    "SaliencyMask",
    "TensorContainer",
    "TrainRecord",
    "accumulate",
    "assemble",
    "binarization_error",
    "bit_budget",
    "dense_matmul",
    "dequantize",
    "detect_hessian",
    "detect_magnitude",
    "evaluate",
    "finalize",
    "mask_stats",
    "optimal_alpha",
    "pack",
    "pb_backward",
    "pb_forward",
    "pb_matvec",
    "pbgptq_quantize",
    "read_container",
    "rtn_quantize",
    "sign_binarize",
    "ste_backward",
    "train_demo",
    "unpack",
    "write_container",
    "zero_shot_capacity_probe",
]
