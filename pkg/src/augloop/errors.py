"""Exception hierarchy and the frozen error-string table.

Execution error strings are model-visible (they get re-injected into the
chat history inside <output> blocks), so their wording is frozen here and
versioned with the package. Do not reword casually.
"""

from __future__ import annotations

ERROR_TABLE_VERSION = "1"

# code -> human-readable template re-injected as e^k text.
ERROR_STRINGS: dict[str, str] = {
    "out_of_bounds": "Error: crop box ({x0}, {y0}, {x1}, {y1}) exceeds the image bounds {width}x{height}.",
    "degenerate_region": "Error: crop box ({x0}, {y0}, {x1}, {y1}) has zero area.",
    "factor_out_of_range": "Error: resize factor {factor} is outside the allowed range [0.125, 8].",
    "kernel_invalid": "Error: kernel_size {kernel_size} is invalid; it must be an odd integer >= 3.",
    "resolution_cap_exceeded": "Error: the requested result ({width}x{height}) exceeds the maximum pixel budget of {max_pixels} pixels.",
    "param_invalid": "Error: invalid parameters for {name}: {detail}",
    "unknown_operation": "Error: unknown operation '{name}'. Available operations: crop, resize, rotate, flip, denoise, edge.",
    "syntax_malformed": "Error: could not parse the API call: {detail}",
}


def error_text(code: str, **slots) -> str:
    return ERROR_STRINGS[code].format(**slots)


class AugLoopError(Exception):
    """Base class for all package errors."""

    code = "internal"
    exit_code = 1


class OpError(AugLoopError):
    """Augmentation execution failure; converted to an ErrorMessage value."""

    exit_code = 3

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class OutOfBounds(OpError):
    code = "out_of_bounds"


class DegenerateRegion(OpError):
    code = "degenerate_region"


class FactorOutOfRange(OpError):
    code = "factor_out_of_range"


class KernelInvalid(OpError):
    code = "kernel_invalid"


class ResolutionCapExceeded(OpError):
    code = "resolution_cap_exceeded"


class ParamInvalidError(OpError):
    code = "param_invalid"


class ImageUndecodable(AugLoopError):
    code = "image_undecodable"
    exit_code = 3


class StructureInvalid(AugLoopError):
    code = "structure_invalid"
    exit_code = 3


class GroupTooSmall(AugLoopError):
    code = "group_too_small"
    exit_code = 3


class LengthMismatch(AugLoopError):
    code = "length_mismatch"
    exit_code = 3


class ConfigInvalid(AugLoopError):
    code = "config_invalid"
    exit_code = 6


class TemplateUnknown(AugLoopError):
    code = "template_unknown"
    exit_code = 3


class BackendUnavailable(AugLoopError):
    code = "backend_unavailable"
    exit_code = 4


class JudgeUnavailable(AugLoopError):
    code = "judge_unavailable"
    exit_code = 5


class BindFailure(AugLoopError):
    code = "bind_failure"
    exit_code = 4
