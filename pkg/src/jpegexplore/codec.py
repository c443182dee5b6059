"""Quantized-coefficient containers and the compression/decompression pipeline.

The encoder divides each (level-shifted) channel into 8x8 blocks, transforms,
divides entrywise by the quantization table and rounds; the decoder reverses
the lossless steps and reconstructs pixels from the quantized coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dct
from .errors import DimensionMismatchError, InvalidParameterError

SAMPLING_420 = "4:2:0"
SAMPLING_444 = "4:4:4"


@dataclass
class QuantizedPlane:
    """One channel's grid of quantized 8x8 coefficient blocks plus its table."""

    blocks: np.ndarray  # (m, n, 8, 8) integer coefficients
    table: np.ndarray   # (8, 8) positive integers
    channel: str = "Y"  # Y | Cb | Cr

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.int32)
        self.table = np.asarray(self.table, dtype=np.int64)
        if self.blocks.ndim != 4 or self.blocks.shape[2:] != (8, 8):
            raise InvalidParameterError(f"blocks must be (m, n, 8, 8), got {self.blocks.shape}")
        if self.table.shape != (8, 8) or np.any(self.table < 1):
            raise InvalidParameterError("quantization table must be 8x8 with entries >= 1")

    @property
    def grid(self) -> tuple[int, int]:
        return self.blocks.shape[0], self.blocks.shape[1]

    def dequantize(self) -> np.ndarray:
        """DCT-domain coefficients X_Q * M as float64, shape (m, n, 8, 8)."""
        return self.blocks.astype(np.float64) * self.table.astype(np.float64)

    def copy(self) -> "QuantizedPlane":
        return QuantizedPlane(self.blocks.copy(), self.table.copy(), self.channel)


@dataclass
class CompressedImage:
    """Everything stored in (or destined for) a baseline JPEG file."""

    luma: QuantizedPlane
    cb: Optional[QuantizedPlane]
    cr: Optional[QuantizedPlane]
    width: int
    height: int
    sampling: str = SAMPLING_420
    restart_interval: int = 0

    def __post_init__(self):
        if self.sampling not in (SAMPLING_420, SAMPLING_444):
            raise InvalidParameterError(f"unsupported sampling {self.sampling!r}")
        if (self.cb is None) != (self.cr is None):
            raise InvalidParameterError("chroma planes must be both present or both absent")
        if self.cb is not None and self.sampling == SAMPLING_420:
            lm, ln = self.luma.grid
            want = ((lm + 1) // 2, (ln + 1) // 2)
            for plane in (self.cb, self.cr):
                if plane.grid != want:
                    raise DimensionMismatchError(
                        f"4:2:0 chroma grid {plane.grid} does not match luma grid {self.luma.grid}")

    @property
    def is_color(self) -> bool:
        return self.cb is not None

    def planes(self) -> list[QuantizedPlane]:
        return [self.luma] if not self.is_color else [self.luma, self.cb, self.cr]

    def copy(self) -> "CompressedImage":
        return CompressedImage(
            self.luma.copy(),
            self.cb.copy() if self.cb is not None else None,
            self.cr.copy() if self.cr is not None else None,
            self.width, self.height, self.sampling, self.restart_interval)


def _quantize_plane(plane: np.ndarray, table: np.ndarray, channel: str) -> QuantizedPlane:
    blocks = dct.split_blocks(plane - 128.0, 8)
    coeffs = dct.forward_dct8(blocks)
    quant = dct.round_half_away(coeffs / table.astype(np.float64))
    return QuantizedPlane(quant.astype(np.int32), table, channel)


def box_downsample2(plane: np.ndarray) -> np.ndarray:
    """2x2 box average; plane dimensions must be even."""
    h, w = plane.shape
    if h % 2 or w % 2:
        raise InvalidParameterError("plane dimensions must be even for 2x subsampling")
    return 0.25 * (plane[0::2, 0::2] + plane[1::2, 0::2] + plane[0::2, 1::2] + plane[1::2, 1::2])


def nearest_upsample2(plane: np.ndarray) -> np.ndarray:
    """2x nearest-neighbor replication in both axes."""
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def encode_pipeline(image: np.ndarray, qf: int,
                    sampling: str = SAMPLING_420) -> CompressedImage:
    """Compress an uncompressed image into quantized coefficient planes.

    Planes are edge-replicated to the MCU multiple (16 px for 4:2:0 so the
    luma 8x8 grid and the 16x16 chroma footprints align, 8 px otherwise);
    the original pixel dimensions are kept for cropping on decode.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise InvalidParameterError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")
    height, width = image.shape[:2]
    if height < 1 or width < 1:
        raise InvalidParameterError("degenerate image dimensions")

    luma_table = dct.qf_to_quant_table(qf, dct.BASELINE_LUMA_TABLE)
    if image.ndim == 2:
        plane = dct.pad_to_multiple(image, 8)
        return CompressedImage(_quantize_plane(plane, luma_table, "Y"),
                               None, None, width, height, SAMPLING_444)

    multiple = 16 if sampling == SAMPLING_420 else 8
    chroma_table = dct.qf_to_quant_table(qf, dct.BASELINE_CHROMA_TABLE)
    ycc = dct.rgb_to_ycbcr(image)
    y = dct.pad_to_multiple(ycc[:, :, 0], multiple)
    cb = dct.pad_to_multiple(ycc[:, :, 1], multiple)
    cr = dct.pad_to_multiple(ycc[:, :, 2], multiple)
    if sampling == SAMPLING_420:
        cb = box_downsample2(cb)
        cr = box_downsample2(cr)
    return CompressedImage(
        _quantize_plane(y, luma_table, "Y"),
        _quantize_plane(cb, chroma_table, "Cb"),
        _quantize_plane(cr, chroma_table, "Cr"),
        width, height, sampling)


def _reconstruct_plane(plane: QuantizedPlane) -> np.ndarray:
    return dct.merge_blocks(dct.inverse_dct8(plane.dequantize())) + 128.0


def merge_ycbcr_planes(y: np.ndarray, cb, cr, sampling: str,
                       height: int, width: int, clamp_samples: bool = True) -> np.ndarray:
    """Assemble decoded planes into a cropped pixel image.

    `clamp_samples` applies the baseline-decoder convention of limiting each
    Y/Cb/Cr sample to [0, 255] before color conversion (reference decoders do
    this; the exact-arithmetic reconstruction path turns it off).
    """
    if cb is None:
        plane = np.clip(y, 0, 255) if clamp_samples else y
        return plane[:height, :width]
    if sampling == SAMPLING_420:
        cb = nearest_upsample2(cb)
        cr = nearest_upsample2(cr)
    ycc = np.stack([y, cb[:y.shape[0], :y.shape[1]], cr[:y.shape[0], :y.shape[1]]], axis=-1)
    if clamp_samples:
        ycc = np.clip(ycc, 0, 255)
    rgb = dct.ycbcr_to_rgb(ycc)
    if clamp_samples:
        rgb = np.clip(rgb, 0, 255)
    return rgb[:height, :width]


def decode_standard(code: CompressedImage) -> np.ndarray:
    """Reference decode: dequantize, inverse DCT, upsample chroma by
    replication, convert color, clamp and crop. Float64 samples in [0, 255]."""
    y = _reconstruct_plane(code.luma)
    cb = _reconstruct_plane(code.cb) if code.is_color else None
    cr = _reconstruct_plane(code.cr) if code.is_color else None
    return merge_ycbcr_planes(y, cb, cr, code.sampling, code.height, code.width)
