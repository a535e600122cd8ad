"""Adaptive shape convolution and large kernel shift convolution, with
reference oracles, C2f block variants, cost accounting and mAP@50."""

__version__ = "0.1.0"

from .errors import InputError, NumericError, ShapeError, SpecError, VerificationError
from .rng import SplitMix64
from .tensor import (
    BatchNorm,
    ConvParams,
    ConvSpec,
    GradCheckReport,
    bilinear_sample,
    bilinear_sample_grad,
    conv2d_backward,
    conv2d_direct,
    finite_diff_grad,
    grad_check,
    shift2d,
)
from .asc import AscFields, AscParams, AscSpec, asc_backward, asc_block_forward, asc_forward, asc_generate_fields
from .lksc import (
    LkscPlan,
    LkscSpec,
    TileShift,
    lksc_backward,
    lksc_forward,
    lksc_linear,
    plan_lksc,
    random_plan,
    shift_conv_forward,
)
from .c2f import (
    C2fConfig,
    C2fParams,
    CostReport,
    ascm_c2f_forward,
    block_forward,
    c2f_forward,
    count_params_flops,
    init_c2f,
    lkscm_c2f_forward,
)
from .metrics import ApResult, Box, Detection, GroundTruth, average_precision_50, iou, map50
