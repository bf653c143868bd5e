"""Deterministic augmentation execution.

Every operation is a pure function: same inputs give bit-identical outputs,
inputs are never mutated. Malformed parameters become structured error
values (never exceptions escaping apply_op), because the error text is
re-injected into the conversation and the loop must keep going.

Fixed numeric conventions (the source material leaves these open, so they
are pinned here for reproducibility):
  - resampling is bilinear (Pillow's BILINEAR filter) for every resize,
    except the recall path which copies straight from the original image;
  - gaussian sigma = kernel_size / 6;
  - bilateral sigma_color = 25, sigma_space = kernel_size / 2;
  - edge = 3x3 Sobel magnitude on the luma channel, scaled to [0, 255];
  - rotation is clockwise and restricted to {90, 180, 270} (lossless).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    DegenerateRegion,
    FactorOutOfRange,
    KernelInvalid,
    OpError,
    OutOfBounds,
    ParamInvalidError,
    ResolutionCapExceeded,
    error_text,
)
from .image import ImageBuffer

OP_KINDS = ("crop", "resize_up", "resize_down", "rotate", "flip", "denoise", "edge")
DENOISE_METHODS = ("gaussian", "median", "bilateral")
FLIP_AXES = ("horizontal", "vertical")
ROTATE_DEGREES = (90, 180, 270)
FACTOR_MIN = 0.125
FACTOR_MAX = 8.0
DEFAULT_MAX_PIXELS = 4_194_304
MIN_DIMENSION = 28  # images at or below this per side are never shrunk further

_PARAM_KEYS = {
    "crop": ("x0", "y0", "x1", "y1"),
    "resize_up": ("factor",),
    "resize_down": ("factor",),
    "rotate": ("degrees",),
    "flip": ("axis",),
    "denoise": ("method", "kernel_size"),
    "edge": (),
}


@dataclass(frozen=True)
class AugmentationOp:
    """One validated augmentation request: a kind plus its typed parameters.

    Construction checks structure (known kind, right parameter names and
    types); domain checks that need no image (odd kernel, factor range,
    rotation angle) live in validate() so both the parser and the executor
    can report them as classified errors instead of crashes.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        expected = _PARAM_KEYS[self.kind]
        if tuple(sorted(self.params)) != tuple(sorted(expected)):
            raise ValueError(
                f"{self.kind} expects parameters {expected}, got {tuple(sorted(self.params))}"
            )
        if self.kind == "crop":
            if not all(isinstance(self.params[k], int) for k in expected):
                raise ValueError("crop coordinates must be integers")
        elif self.kind in ("resize_up", "resize_down"):
            f = self.params["factor"]
            if not isinstance(f, (int, float)) or isinstance(f, bool) or f <= 0:
                raise ValueError("resize factor must be a positive number")
            object.__setattr__(self, "params", {"factor": float(f)})
        elif self.kind == "rotate":
            if not isinstance(self.params["degrees"], int):
                raise ValueError("rotate degrees must be an integer")
        elif self.kind == "flip":
            if not isinstance(self.params["axis"], str):
                raise ValueError("flip axis must be a string")
        elif self.kind == "denoise":
            if not isinstance(self.params["method"], str):
                raise ValueError("denoise method must be a string")
            if not isinstance(self.params["kernel_size"], int):
                raise ValueError("denoise kernel_size must be an integer")

    def validate(self) -> None:
        """Image-independent domain checks; raises an OpError subclass."""
        if self.kind in ("resize_up", "resize_down"):
            f = self.params["factor"]
            if not (FACTOR_MIN <= f <= FACTOR_MAX):
                raise FactorOutOfRange(error_text("factor_out_of_range", factor=f))
            if self.kind == "resize_down" and f > 1.0:
                raise ParamInvalidError(
                    error_text("param_invalid", name="resize_down", detail=f"factor {f} must be <= 1")
                )
        elif self.kind == "rotate":
            if self.params["degrees"] not in ROTATE_DEGREES:
                raise ParamInvalidError(
                    error_text(
                        "param_invalid",
                        name="rotate",
                        detail=f"degrees must be one of {ROTATE_DEGREES}, got {self.params['degrees']}",
                    )
                )
        elif self.kind == "flip":
            if self.params["axis"] not in FLIP_AXES:
                raise ParamInvalidError(
                    error_text(
                        "param_invalid",
                        name="flip",
                        detail=f"axis must be one of {FLIP_AXES}, got {self.params['axis']!r}",
                    )
                )
        elif self.kind == "denoise":
            if self.params["method"] not in DENOISE_METHODS:
                raise ParamInvalidError(
                    error_text(
                        "param_invalid",
                        name="denoise",
                        detail=f"method must be one of {DENOISE_METHODS}, got {self.params['method']!r}",
                    )
                )
            ks = self.params["kernel_size"]
            if ks < 3 or ks % 2 == 0:
                raise KernelInvalid(error_text("kernel_invalid", kernel_size=ks))
        elif self.kind == "crop":
            x0, y0, x1, y1 = (self.params[k] for k in ("x0", "y0", "x1", "y1"))
            if x0 == x1 or y0 == y1:
                raise DegenerateRegion(
                    error_text("degenerate_region", x0=x0, y0=y0, x1=x1, y1=y1)
                )


# Convenience constructors, mainly for tests and demos.
def crop(x0: int, y0: int, x1: int, y1: int) -> AugmentationOp:
    return AugmentationOp("crop", {"x0": x0, "y0": y0, "x1": x1, "y1": y1})


def resize_up(factor: float) -> AugmentationOp:
    return AugmentationOp("resize_up", {"factor": factor})


def resize_down(factor: float) -> AugmentationOp:
    return AugmentationOp("resize_down", {"factor": factor})


def rotate(degrees: int) -> AugmentationOp:
    return AugmentationOp("rotate", {"degrees": degrees})


def flip(axis: str) -> AugmentationOp:
    return AugmentationOp("flip", {"axis": axis})


def denoise(method: str = "median", kernel_size: int = 3) -> AugmentationOp:
    return AugmentationOp("denoise", {"method": method, "kernel_size": kernel_size})


def edge() -> AugmentationOp:
    return AugmentationOp("edge", {})


@dataclass(frozen=True)
class ErrorMessage:
    code: str
    human_text: str


@dataclass(frozen=True)
class ExecOutcome:
    """Result of one augmentation: exactly one of image / error is set."""

    op: AugmentationOp
    image: Optional[ImageBuffer] = None
    error: Optional[ErrorMessage] = None
    source_generation: int = 0

    def __post_init__(self):
        if (self.image is None) == (self.error is None):
            raise ValueError("exactly one of image/error must be set")

    @property
    def ok(self) -> bool:
        return self.image is not None


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


def _bilinear(image: ImageBuffer, width: int, height: int) -> ImageBuffer:
    if (width, height) == (image.width, image.height):
        return ImageBuffer(image.data)
    resized = image.to_pil().resize((width, height), Image.BILINEAR)
    return ImageBuffer.from_pil(resized)


def _exec_crop(image: ImageBuffer, op: AugmentationOp) -> ImageBuffer:
    x0, y0, x1, y1 = (op.params[k] for k in ("x0", "y0", "x1", "y1"))
    if not (0 <= x0 < x1 <= image.width and 0 <= y0 < y1 <= image.height):
        raise OutOfBounds(
            error_text("out_of_bounds", x0=x0, y0=y0, x1=x1, y1=y1,
                       width=image.width, height=image.height)
        )
    return ImageBuffer(image.data[y0:y1, x0:x1, :])


def _exec_resize(image: ImageBuffer, op: AugmentationOp, original: ImageBuffer,
                 max_pixels: int) -> ImageBuffer:
    factor = op.params["factor"]
    target_w = max(1, _round_half_up(image.width * factor))
    target_h = max(1, _round_half_up(image.height * factor))
    if target_w * target_h > max_pixels:
        raise ResolutionCapExceeded(
            error_text("resolution_cap_exceeded", width=target_w, height=target_h,
                       max_pixels=max_pixels)
        )
    source = image
    if op.kind == "resize_up" and target_w <= original.width and target_h <= original.height:
        # Recall semantics: an upscale whose target still fits inside the
        # original resolution is resolved against the original image, not by
        # interpolating a previously downsampled copy.
        source = original
    return _bilinear(source, target_w, target_h)


def _exec_rotate(image: ImageBuffer, op: AugmentationOp) -> ImageBuffer:
    k = (-op.params["degrees"] // 90) % 4  # np.rot90 is counter-clockwise
    return ImageBuffer(np.rot90(image.data, k=k))


def _exec_flip(image: ImageBuffer, op: AugmentationOp) -> ImageBuffer:
    axis = 1 if op.params["axis"] == "horizontal" else 0
    return ImageBuffer(np.flip(image.data, axis=axis))


def _exec_denoise(image: ImageBuffer, op: AugmentationOp) -> ImageBuffer:
    method = op.params["method"]
    ks = op.params["kernel_size"]
    if method == "median":
        out = np.empty_like(image.data)
        for c in range(image.channels):
            out[:, :, c] = ndimage.median_filter(image.data[:, :, c], size=ks, mode="reflect")
        return ImageBuffer(out)
    arr = image.data.astype(np.float64)
    if method == "gaussian":
        sigma = ks / 6.0
        offsets = np.arange(ks) - ks // 2
        kernel = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
        kernel /= kernel.sum()
        smoothed = ndimage.convolve1d(arr, kernel, axis=0, mode="reflect")
        smoothed = ndimage.convolve1d(smoothed, kernel, axis=1, mode="reflect")
        return ImageBuffer(np.clip(np.rint(smoothed), 0, 255).astype(np.uint8))
    # bilateral
    sigma_color = 25.0
    sigma_space = ks / 2.0
    r = ks // 2
    h, w, _ = arr.shape
    padded = np.pad(arr, ((r, r), (r, r), (0, 0)), mode="symmetric")
    num = np.zeros_like(arr)
    den = np.zeros_like(arr)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            spatial = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_space ** 2))
            shifted = padded[r + dy:r + dy + h, r + dx:r + dx + w, :]
            weight = spatial * np.exp(-((shifted - arr) ** 2) / (2.0 * sigma_color ** 2))
            num += weight * shifted
            den += weight
    return ImageBuffer(np.clip(np.rint(num / den), 0, 255).astype(np.uint8))


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def _exec_edge(image: ImageBuffer) -> ImageBuffer:
    if image.channels == 3:
        rgb = image.data.astype(np.float64)
        luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    else:
        luma = image.data[:, :, 0].astype(np.float64)
    gx = ndimage.convolve(luma, _SOBEL_X, mode="reflect")
    gy = ndimage.convolve(luma, _SOBEL_X.T, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        out = np.rint(mag * (255.0 / peak)).astype(np.uint8)
    else:
        out = np.zeros_like(mag, dtype=np.uint8)
    return ImageBuffer(out[:, :, None])


def apply_op(image: ImageBuffer, op: AugmentationOp, original: ImageBuffer,
             max_pixels: int = DEFAULT_MAX_PIXELS, source_generation: int = 0) -> ExecOutcome:
    """Apply one augmentation, returning either the new image or a structured error.

    `original` is the generation-0 query image; it only matters for the
    resize_up recall path. Inputs are never mutated.
    """
    try:
        op.validate()
        if op.kind == "crop":
            result = _exec_crop(image, op)
        elif op.kind in ("resize_up", "resize_down"):
            result = _exec_resize(image, op, original, max_pixels)
        elif op.kind == "rotate":
            result = _exec_rotate(image, op)
        elif op.kind == "flip":
            result = _exec_flip(image, op)
        elif op.kind == "denoise":
            result = _exec_denoise(image, op)
        else:
            result = _exec_edge(image)
        if result.pixel_count > max_pixels:
            raise ResolutionCapExceeded(
                error_text("resolution_cap_exceeded", width=result.width,
                           height=result.height, max_pixels=max_pixels)
            )
    except OpError as exc:
        return ExecOutcome(op=op, error=ErrorMessage(exc.code, exc.message),
                           source_generation=source_generation)
    return ExecOutcome(op=op, image=result, source_generation=source_generation)


def downsample_for_compression(image: ImageBuffer, rate: float) -> ImageBuffer:
    """Scale both dimensions by `rate`, never shrinking a side below 28 px.

    Images already at or below the minimum on both sides pass through
    unchanged; rate must lie in (0, 1].
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"compression rate must be in (0, 1], got {rate}")
    if rate == 1.0 or (image.width <= MIN_DIMENSION and image.height <= MIN_DIMENSION):
        return ImageBuffer(image.data)
    new_w = image.width if image.width <= MIN_DIMENSION else max(
        MIN_DIMENSION, _round_half_up(image.width * rate))
    new_h = image.height if image.height <= MIN_DIMENSION else max(
        MIN_DIMENSION, _round_half_up(image.height * rate))
    return _bilinear(image, new_w, new_h)
