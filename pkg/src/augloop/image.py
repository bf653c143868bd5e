"""8-bit image buffer with lossless PNG round-trips.

PNG is the interchange format because the involution and recall invariants
are asserted bit-exactly; JPEG is accepted on ingest only. Encoding uses
Pillow defaults with optimize disabled, which is deterministic for a given
Pillow version.
"""

from __future__ import annotations

import base64
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageUndecodable


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable row-major 8-bit image, 1 (gray) or 3 (color) channels."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected HxWx{{1,3}} array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("width and height must be >= 1")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def to_pil(self) -> Image.Image:
        if self.channels == 1:
            return Image.fromarray(self.data[:, :, 0], mode="L")
        return Image.fromarray(self.data, mode="RGB")

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG", optimize=False)
        return buf.getvalue()

    def to_png_base64(self) -> str:
        return base64.b64encode(self.to_png_bytes()).decode("ascii")

    def sha256(self) -> str:
        return hashlib.sha256(self.data.tobytes() + str(self.data.shape).encode()).hexdigest()

    @classmethod
    def from_pil(cls, img: Image.Image) -> "ImageBuffer":
        if img.mode == "L":
            return cls(np.asarray(img, dtype=np.uint8))
        return cls(np.asarray(img.convert("RGB"), dtype=np.uint8))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ImageBuffer":
        """Decode PNG or JPEG bytes; anything undecodable raises ImageUndecodable."""
        try:
            img = Image.open(io.BytesIO(raw))
            img.load()
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ImageUndecodable(f"cannot decode image: {exc}") from exc
        return cls.from_pil(img)

    @classmethod
    def from_png_base64(cls, encoded: str) -> "ImageBuffer":
        try:
            raw = base64.b64decode(encoded, validate=True)
        except Exception as exc:
            raise ImageUndecodable(f"invalid base64 image payload: {exc}") from exc
        return cls.from_bytes(raw)

    @classmethod
    def load(cls, path) -> "ImageBuffer":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_png_bytes())
