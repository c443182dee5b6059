"""The consistent set and everything that moves inside it.

A stored quantized coefficient q pins the true normalized coefficient to the
box [q - 1/2, q + 1/2): every image whose blockwise DCT lands inside all the
boxes re-compresses to the identical code. This module parameterizes that set
with an unbounded latent field (a shifted sigmoid keeps each offset strictly
inside its box, so consistency holds by construction), projects arbitrary
images onto the set, verifies membership, and validates the 16x16 chroma
model used for subsampled channels.

Chroma in 4:2:0 mode is handled in the DCT domain of the *full-resolution*
plane: each stored 8x8 block is scaled by 2 and embedded as the low-frequency
quadrant of a 16x16 block (high frequencies zero), then inverse-transformed
at size 16. The factor 2 compensates the orthonormal normalization mismatch
between the 8- and 16-point transforms; without it a constant chroma plane
would come back at half amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dct
from .codec import (SAMPLING_420, CompressedImage, box_downsample2,
                    merge_ycbcr_planes)
from .errors import DimensionMismatchError, InvalidParameterError

SIGMOID_GAIN = 4.0  # d(residual)/d(latent) = 1 at the neutral point
CHROMA_EMBED_SCALE = 2.0


_HALF_OPEN = np.nextafter(0.5, 0.0)  # largest double strictly below 1/2


def residual_from_latent(u: np.ndarray, gain: float = SIGMOID_GAIN) -> np.ndarray:
    """Map unbounded latents to residuals in the open interval (-1/2, 1/2).

    sigmoid(gain*u) - 1/2; zero latent gives zero residual, so the neutral
    field reproduces the standard dequantization exactly. Saturated latents
    are pinned one ulp inside the interval so the boundary is never attained
    even in floating point.
    """
    x = gain * np.asarray(u, dtype=np.float64)
    with np.errstate(over="ignore"):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return np.clip(sig - 0.5, -_HALF_OPEN, _HALF_OPEN)


def residual_derivative(u: np.ndarray, gain: float = SIGMOID_GAIN) -> np.ndarray:
    """d residual / d latent, used by the optimizer's chain rule."""
    s = 1.0 / (1.0 + np.exp(-gain * np.asarray(u, dtype=np.float64)))
    return gain * s * (1.0 - s)


@dataclass
class LatentField:
    """One unbounded real per stored quantized coefficient."""

    luma: np.ndarray                      # (m, n, 64)
    cb: Optional[np.ndarray] = None       # chroma grids match the stored planes
    cr: Optional[np.ndarray] = None

    def __post_init__(self):
        self.luma = np.asarray(self.luma, dtype=np.float64)
        if self.cb is not None:
            self.cb = np.asarray(self.cb, dtype=np.float64)
            self.cr = np.asarray(self.cr, dtype=np.float64)
        for arr in self.arrays():
            if arr.ndim != 3 or arr.shape[2] != 64:
                raise InvalidParameterError(f"latent plane must be (m, n, 64), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError("latent field contains non-finite values")

    def arrays(self) -> list[np.ndarray]:
        return [self.luma] if self.cb is None else [self.luma, self.cb, self.cr]

    @classmethod
    def neutral(cls, code: CompressedImage) -> "LatentField":
        """All-zero field: reconstruct() equals the plain dequantized decode."""
        mk = lambda plane: np.zeros(plane.grid + (64,), dtype=np.float64)
        if not code.is_color:
            return cls(mk(code.luma))
        return cls(mk(code.luma), mk(code.cb), mk(code.cr))

    def matches(self, code: CompressedImage) -> bool:
        if self.luma.shape[:2] != code.luma.grid:
            return False
        if code.is_color != (self.cb is not None):
            return False
        if code.is_color:
            return (self.cb.shape[:2] == code.cb.grid and self.cr.shape[:2] == code.cr.grid)
        return True

    def copy(self) -> "LatentField":
        return LatentField(self.luma.copy(),
                           None if self.cb is None else self.cb.copy(),
                           None if self.cr is None else self.cr.copy())


def _chroma_plane_from_normalized(xn_blocks: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Full-resolution chroma plane from normalized 8x8 blocks via the 16x16
    zero-padded model."""
    coeffs = xn_blocks * table.astype(np.float64)
    m, n = coeffs.shape[:2]
    padded = np.zeros((m, n, 16, 16), dtype=np.float64)
    padded[:, :, :8, :8] = CHROMA_EMBED_SCALE * coeffs
    return dct.merge_blocks(dct.inverse_dct16(padded)) + 128.0


def _luma_plane_from_normalized(xn_blocks: np.ndarray, table: np.ndarray) -> np.ndarray:
    coeffs = xn_blocks * table.astype(np.float64)
    return dct.merge_blocks(dct.inverse_dct8(coeffs)) + 128.0


class ConsistentImage:
    """A point of the consistent set: normalized DCT coefficients per channel,
    guaranteed to round back to the stored code, plus derived pixel views.

    The normalized coefficients are the authoritative representation; pixel
    views are computed on demand. `pixels()` follows the same clamping
    conventions as the standard decoder so a neutral reconstruction is
    pixel-identical to it; `pixels(clamp=False)` is the exact linear view the
    optimizer differentiates through.
    """

    def __init__(self, code: CompressedImage, xn_luma: np.ndarray,
                 xn_cb: Optional[np.ndarray] = None, xn_cr: Optional[np.ndarray] = None,
                 latent: Optional[LatentField] = None):
        self.code = code
        self.xn = {"Y": np.asarray(xn_luma, dtype=np.float64)}
        if xn_cb is not None:
            self.xn["Cb"] = np.asarray(xn_cb, dtype=np.float64)
            self.xn["Cr"] = np.asarray(xn_cr, dtype=np.float64)
        self.latent = latent
        self._planes = None

    def ycbcr_planes(self) -> dict:
        """Full-resolution float planes (padded size), keyed by channel."""
        if self._planes is None:
            code = self.code
            planes = {"Y": _luma_plane_from_normalized(self.xn["Y"], code.luma.table)}
            if code.is_color:
                if code.sampling == SAMPLING_420:
                    planes["Cb"] = _chroma_plane_from_normalized(self.xn["Cb"], code.cb.table)
                    planes["Cr"] = _chroma_plane_from_normalized(self.xn["Cr"], code.cr.table)
                else:
                    planes["Cb"] = _luma_plane_from_normalized(self.xn["Cb"], code.cb.table)
                    planes["Cr"] = _luma_plane_from_normalized(self.xn["Cr"], code.cr.table)
            self._planes = planes
        return self._planes

    def pixels(self, clamp: bool = True) -> np.ndarray:
        """Cropped pixel image; float64, RGB for color codes."""
        planes = self.ycbcr_planes()
        code = self.code
        y = planes["Y"]
        if not code.is_color:
            return merge_ycbcr_planes(y, None, None, code.sampling,
                                      code.height, code.width, clamp_samples=clamp)
        # chroma is already full resolution here, so merge as 4:4:4
        return merge_ycbcr_planes(y, planes["Cb"], planes["Cr"], "4:4:4",
                                  code.height, code.width, clamp_samples=clamp)

    def to_uint8(self) -> np.ndarray:
        from .image_io import to_uint8
        return to_uint8(self.pixels())


def reconstruct(code: CompressedImage, latent: LatentField) -> ConsistentImage:
    """Decode with a latent field steering each coefficient inside its box."""
    if not latent.matches(code):
        raise DimensionMismatchError("latent field shape does not match code")
    deltas = [residual_from_latent(u) for u in latent.arrays()]
    planes = code.planes()
    xns = []
    for plane, delta in zip(planes, deltas):
        xn = plane.blocks.astype(np.float64) + dct.untensorize_blocks(delta)
        # the addition can absorb a saturated residual into the boundary
        # exactly (e.g. 3 + (0.5 - ulp) == 3.5); pin such entries back inside
        xns.append(_clip_to_box(xn, plane.blocks))
    if not code.is_color:
        return ConsistentImage(code, xns[0], latent=latent)
    return ConsistentImage(code, xns[0], xns[1], xns[2], latent=latent)


@dataclass
class ChannelReport:
    channel: str
    consistent_blocks: int
    violating_blocks: int
    worst_deviation: float
    flagged: list = field(default_factory=list)  # (row, col) of violating blocks


@dataclass
class ConsistencyReport:
    mode: str
    channels: list

    @property
    def total_violations(self) -> int:
        return sum(c.violating_blocks for c in self.channels)

    @property
    def consistent(self) -> bool:
        return self.total_violations == 0

    @property
    def worst_deviation(self) -> float:
        return max(c.worst_deviation for c in self.channels)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "consistent": self.consistent,
            "total_violations": self.total_violations,
            "worst_deviation": self.worst_deviation,
            "channels": [{
                "channel": c.channel,
                "consistent_blocks": c.consistent_blocks,
                "violating_blocks": c.violating_blocks,
                "worst_deviation": c.worst_deviation,
                "flagged": [list(rc) for rc in c.flagged[:64]],
            } for c in self.channels],
        }

    def to_text(self) -> str:
        lines = [f"mode: {self.mode}",
                 f"consistent: {'yes' if self.consistent else 'no'}",
                 f"worst |X_N - X_Q|: {self.worst_deviation:.6f}"]
        for c in self.channels:
            line = (f"{c.channel}: {c.consistent_blocks} consistent, "
                    f"{c.violating_blocks} violating")
            if c.flagged:
                shown = ", ".join(f"({r},{co})" for r, co in c.flagged[:8])
                more = "" if len(c.flagged) <= 8 else f" (+{len(c.flagged) - 8} more)"
                line += f" [{shown}{more}]"
            lines.append(line)
        return "\n".join(lines)


def _normalized_from_pixels(pixels: np.ndarray, code: CompressedImage) -> list[np.ndarray]:
    """Recompute per-channel normalized DCT coefficients from a pixel image,
    using the 16x16 model for subsampled chroma. Returns [Y(, Cb, Cr)]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3 and not code.is_color:
        raise DimensionMismatchError("color image offered against a grayscale code")
    if pixels.ndim == 2 and code.is_color:
        raise DimensionMismatchError("grayscale image offered against a color code")
    if pixels.shape[:2] != (code.height, code.width):
        raise DimensionMismatchError(
            f"image is {pixels.shape[:2]}, code is {(code.height, code.width)}")

    pad_h = code.luma.grid[0] * 8
    pad_w = code.luma.grid[1] * 8
    if code.is_color:
        ycc = dct.rgb_to_ycbcr(pixels)
        planes = [ycc[:, :, 0], ycc[:, :, 1], ycc[:, :, 2]]
    else:
        planes = [pixels]
    padded = []
    for p in planes:
        p = np.pad(p, ((0, pad_h - p.shape[0]), (0, pad_w - p.shape[1])), mode="edge")
        padded.append(p - 128.0)

    out = [dct.forward_dct8(dct.split_blocks(padded[0], 8)) / code.luma.table.astype(np.float64)]
    if code.is_color:
        for p, plane in zip(padded[1:], (code.cb, code.cr)):
            if code.sampling == SAMPLING_420:
                c16 = dct.forward_dct16(dct.split_blocks(p, 16))
                xn = (c16[:, :, :8, :8] / CHROMA_EMBED_SCALE) / plane.table.astype(np.float64)
            else:
                xn = dct.forward_dct8(dct.split_blocks(p, 8)) / plane.table.astype(np.float64)
            out.append(xn)
    return out


def verify_consistency(candidate, code: CompressedImage,
                       mode: str = "dct-exact") -> ConsistencyReport:
    """Check whether a candidate re-quantizes to the stored code.

    "dct-exact" consumes the pre-rounding representation: a ConsistentImage's
    stored coefficients directly, or, for a plain array, the coefficients of
    its float samples as given (no display rounding applied). "pixel" mode
    first forces the candidate into 8-bit display form and re-derives the
    coefficients from that, so quantization-boundary coefficients may flip;
    it exists for diagnosing files and screenshots, not for the guarantee.
    """
    if mode not in ("dct-exact", "pixel"):
        raise InvalidParameterError(f"unknown verification mode {mode!r}")
    if mode == "dct-exact" and isinstance(candidate, ConsistentImage):
        xns = [candidate.xn[p.channel] for p in code.planes()]
    else:
        from .image_io import to_uint8
        pixels = candidate.pixels() if isinstance(candidate, ConsistentImage) else candidate
        if mode == "pixel":
            pixels = to_uint8(pixels).astype(np.float64)
        xns = _normalized_from_pixels(pixels, code)

    channels = []
    for xn, plane in zip(xns, code.planes()):
        if xn.shape != plane.blocks.shape:
            raise DimensionMismatchError(
                f"normalized plane {xn.shape} vs code plane {plane.blocks.shape}")
        requant = dct.round_half_away(xn)
        bad = np.any(requant != plane.blocks, axis=(2, 3))
        flagged = [tuple(int(v) for v in rc) for rc in np.argwhere(bad)]
        worst = float(np.max(np.abs(xn - plane.blocks)))
        channels.append(ChannelReport(plane.channel,
                                      int((~bad).sum()), int(bad.sum()), worst, flagged))
    return ConsistencyReport(mode, channels)


def _clip_to_box(xn: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Clip normalized coefficients to the closed box around the stored values,
    then nudge any entry whose rounding would still change inward by one ulp
    (the closed upper boundary away from zero is not actually in the set)."""
    q = blocks.astype(np.float64)
    clipped = np.clip(xn, q - 0.5, q + 0.5)
    rounds = dct.round_half_away(clipped)
    bad = rounds != q
    if np.any(bad):
        clipped = np.where(bad, np.nextafter(clipped, q), clipped)
    return clipped


def project_to_consistent(desired, code: CompressedImage) -> ConsistentImage:
    """Nearest consistent image in DCT coordinates: per coefficient, clip the
    normalized deviation from the stored value to [-1/2, 1/2].

    A ConsistentImage input is clipped on its stored coefficients directly,
    which makes the projection exactly idempotent and exactly the identity on
    anything already in the set.
    """
    if isinstance(desired, ConsistentImage):
        xns = [desired.xn[p.channel] for p in code.planes()]
    else:
        xns = _normalized_from_pixels(desired, code)
    planes = code.planes()
    clipped = [_clip_to_box(xn, p.blocks) for xn, p in zip(xns, planes)]
    if not code.is_color:
        return ConsistentImage(code, clipped[0])
    return ConsistentImage(code, clipped[0], clipped[1], clipped[2])


def _design_halfband(ntaps: int = 28, pass_edge: float = 7 / 16,
                     stop_edge: float = 9 / 16) -> np.ndarray:
    """Least-squares linear-phase half-band filter on the half-sample grid:
    flat through the seventh of eight retained block frequencies, strong
    rejection above the fold. Used only by the model-validation comparison."""
    t = np.arange(-ntaps + 0.5, ntaps, 1.0)
    m = t[t > 0]
    grid = np.linspace(0, np.pi, 4096)
    desired = np.where(grid <= pass_edge * np.pi, 1.0,
                       np.where(grid >= stop_edge * np.pi, 0.0, np.nan))
    keep = ~np.isnan(desired)
    a = 2 * np.cos(np.outer(grid[keep], m))
    coef, *_ = np.linalg.lstsq(a, desired[keep], rcond=None)
    h = np.concatenate([coef[::-1], coef])
    return h / h.sum()


_HALFBAND = _design_halfband()


def halfband_downsample2(plane: np.ndarray) -> np.ndarray:
    """Anti-aliased 2x downsampling (both axes) with the validation filter;
    output samples sit between input pairs, like the 2x2 box average."""
    out = np.asarray(plane, dtype=np.float64)
    for axis in (0, 1):
        h = _HALFBAND
        half = len(h) // 2
        p = np.moveaxis(out, axis, 0)
        pad = np.pad(p, [(half - 1, half)] + [(0, 0)] * (p.ndim - 1), mode="reflect")
        idx = (2 * np.arange(p.shape[0] // 2))[:, None] + np.arange(len(h))[None, :]
        out = np.moveaxis(np.einsum("k,nk...->n...", h, pad[idx]), 0, axis)
    return out


def _subsampled_path(chroma: np.ndarray, subsample) -> np.ndarray:
    sub = subsample(chroma)
    c8 = dct.forward_dct8(dct.split_blocks(sub, 8))
    m, n = c8.shape[:2]
    padded = np.zeros((m, n, 16, 16), dtype=np.float64)
    padded[:, :, :8, :8] = CHROMA_EMBED_SCALE * c8
    return dct.merge_blocks(dct.inverse_dct16(padded))


def _truncated_path(chroma: np.ndarray) -> np.ndarray:
    c16 = dct.forward_dct16(dct.split_blocks(chroma, 16))
    kept = np.zeros_like(c16)
    kept[:, :, :8, :8] = c16[:, :, :8, :8]
    return dct.merge_blocks(dct.inverse_dct16(kept))


def chroma_pipeline_compare(image: np.ndarray, subsample: str = "halfband") -> float:
    """PSNR between the two chroma renderings of one image: the subsampled
    pipeline (downsample 2x, 8x8 DCT, zero-pad to 16x16, inverse) versus the
    alternative model (16x16 DCT, keep the low quadrant, inverse). No
    quantization in either path; compared in RGB with the shared luma.

    "halfband" isolates the modeling difference with a near-ideal antialias
    filter; "box" uses the encoder's own 2x2 average (its gentle rolloff
    lowers the score on any image with visible chroma detail).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidParameterError("chroma comparison needs a 3-channel image")
    sub = {"halfband": halfband_downsample2, "box": box_downsample2}.get(subsample)
    if sub is None:
        raise InvalidParameterError(f"unknown subsample filter {subsample!r}")
    h, w = image.shape[:2]
    ycc = dct.rgb_to_ycbcr(image)
    y = dct.pad_to_multiple(ycc[:, :, 0], 16)
    rendered = []
    for ch in (1, 2):
        c = dct.pad_to_multiple(ycc[:, :, ch], 16)
        rendered.append((_subsampled_path(c, sub), _truncated_path(c)))
    rgb_a = dct.ycbcr_to_rgb(np.stack([y, rendered[0][0], rendered[1][0]], axis=-1))[:h, :w]
    rgb_b = dct.ycbcr_to_rgb(np.stack([y, rendered[0][1], rendered[1][1]], axis=-1))[:h, :w]
    mse = np.mean((rgb_a - rgb_b) ** 2)
    if mse < 1e-18:  # identical up to floating-point dust
        return float("inf")
    return dct.psnr(rgb_a, rgb_b)


def chroma_energy_ratio(image: np.ndarray) -> float:
    """Mean over 16x16 chroma blocks of the energy fraction living in the
    low-frequency 8x8 quadrant (level-shifted samples; empty blocks count as
    fully concentrated)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidParameterError("chroma energy ratio needs a 3-channel image")
    ycc = dct.rgb_to_ycbcr(image)
    ratios = []
    for ch in (1, 2):
        c = dct.pad_to_multiple(ycc[:, :, ch], 16) - 128.0
        c16 = dct.forward_dct16(dct.split_blocks(c, 16))
        total = np.sum(c16 * c16, axis=(2, 3))
        low = np.sum(c16[:, :, :8, :8] ** 2, axis=(2, 3))
        ratios.append(float(np.mean(np.where(total > 0, low / np.maximum(total, 1e-300), 1.0))))
    return float(np.mean(ratios))
