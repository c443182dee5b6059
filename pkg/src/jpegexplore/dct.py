"""Exact DCT kernels, color conversion and quantization-table derivation.

All transforms are orthonormal type-II DCTs computed in double precision,
so forward and inverse are mutual adjoints: the optimizer relies on
``forward == adjoint(inverse)`` when chaining gradients back to DCT space.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

# Example quantization tables from the JPEG standard (Annex K).
BASELINE_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

BASELINE_CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    t = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    t[0] /= np.sqrt(2.0)
    return t


_T8 = _dct_matrix(8)
_T16 = _dct_matrix(16)


def _forward(blocks: np.ndarray, t: np.ndarray) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    return np.einsum("ij,...jk,lk->...il", t, blocks, t)


def _inverse(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return np.einsum("ji,...jk,kl->...il", t, coeffs, t)


def forward_dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT of one or a batch of 8x8 blocks."""
    return _forward(block, _T8)


def inverse_dct8(coeffs: np.ndarray) -> np.ndarray:
    return _inverse(coeffs, _T8)


def forward_dct16(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT of one or a batch of 16x16 blocks."""
    return _forward(block, _T16)


def inverse_dct16(coeffs: np.ndarray) -> np.ndarray:
    return _inverse(coeffs, _T16)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round with halves going away from zero (the codec's rounding rule).

    ``np.round`` rounds halves to even, which would disagree with the
    quantizer used when the code was produced. Implemented via exact
    floor/compare steps: the tempting ``trunc(x + 0.5)`` misrounds values one
    ulp below a half-integer because the addition itself rounds up.
    """
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    base = np.floor(ax)
    rounded = np.where(ax - base >= 0.5, base + 1.0, base)
    return np.copysign(rounded, x)


def qf_to_quant_table(qf: int, baseline: np.ndarray) -> np.ndarray:
    """Scale a baseline table by the scalar quality factor.

    qf < 50 scales by 5000/qf (coarser steps), qf >= 50 by 200 - 2*qf.
    Entries are clamped to [1, 255] so the result stays baseline-encodable.
    """
    if not 1 <= int(qf) <= 99:
        raise InvalidParameterError(f"quality factor must be in [1, 99], got {qf}")
    qf = int(qf)
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    table = (np.asarray(baseline, dtype=np.int64) * scale + 50) // 100
    return np.clip(table, 1, 255)


# Full-range BT.601 (JFIF) color primaries.
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735892, -0.331264108, 0.5],
    [0.5, -0.418687589, -0.081312411],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def rgb_to_ycbcr(image: np.ndarray) -> np.ndarray:
    """Full-range JFIF conversion; image is (..., 3) with samples in [0, 255]."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-1] != 3:
        raise InvalidParameterError("rgb_to_ycbcr expects a 3-channel image")
    ycc = image @ _RGB_TO_YCC.T
    ycc[..., 1] += 128.0
    ycc[..., 2] += 128.0
    return ycc


def ycbcr_to_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-1] != 3:
        raise InvalidParameterError("ycbcr_to_rgb expects a 3-channel image")
    ycc = image.copy()
    ycc[..., 1] -= 128.0
    ycc[..., 2] -= 128.0
    return ycc @ _YCC_TO_RGB.T


def color_adjoint(grad_rgb: np.ndarray) -> np.ndarray:
    """Adjoint of ycbcr_to_rgb: maps RGB-space gradients to YCbCr space."""
    return np.asarray(grad_rgb, dtype=np.float64) @ _YCC_TO_RGB


def split_blocks(plane: np.ndarray, size: int) -> np.ndarray:
    """(H, W) plane -> (H/size, W/size, size, size) block grid."""
    h, w = plane.shape
    if h % size or w % size:
        raise InvalidParameterError(f"plane {plane.shape} not divisible into {size}x{size} blocks")
    return plane.reshape(h // size, size, w // size, size).transpose(0, 2, 1, 3)


def merge_blocks(blocks: np.ndarray) -> np.ndarray:
    """Inverse of split_blocks."""
    m, n, size, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(m * size, n * size)


def tensorize_blocks(blocks: np.ndarray) -> np.ndarray:
    """Block grid (m, n, s, s) -> (m, n, s*s) with each block flattened row-major."""
    m, n, s, s2 = blocks.shape
    if s != s2:
        raise InvalidParameterError("blocks must be square")
    return np.asarray(blocks).reshape(m, n, s * s)


def untensorize_blocks(tensor: np.ndarray) -> np.ndarray:
    """(m, n, s*s) -> (m, n, s, s); depth must be a perfect square."""
    m, n, d = tensor.shape
    s = int(round(np.sqrt(d)))
    if s * s != d:
        raise InvalidParameterError(f"depth {d} is not a square block size")
    return np.asarray(tensor).reshape(m, n, s, s)


def pad_to_multiple(plane: np.ndarray, multiple: int) -> np.ndarray:
    """Edge-replicate a 2-D plane up to the next multiple of `multiple`."""
    h, w = plane.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return plane
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (plane.ndim - 2)
    return np.pad(plane, pad, mode="edge")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; inf when the inputs are identical."""
    err = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = np.mean(err * err)
    if mse == 0.0:
        return float("inf")
    return float(20.0 * np.log10(peak) - 10.0 * np.log10(mse))
