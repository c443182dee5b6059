"""Adam-driven movement inside the consistent set, plus imprint placement.

Objectives supply pixel-space gradients; the chain back to the latent field
is exact because every decode step is linear (inverse DCT adjoint = forward
DCT by orthonormality, color adjoint = transposed matrix) except the final
sigmoid, whose derivative is closed-form. Only latent coefficients of blocks
touching the region mask (dilated by one block ring) are ever updated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from . import dct
from .codec import SAMPLING_420, CompressedImage
from .consistency import (CHROMA_EMBED_SCALE, ConsistentImage, LatentField,
                          reconstruct, residual_derivative)
from .errors import InvalidParameterError, JpegExploreError


class OptimizationError(JpegExploreError):
    """Non-finite gradient or other mid-run failure; carries diagnostics."""


@dataclass
class OptimizeConfig:
    # learning rate tuned on the efficacy fixtures: large enough to cross the
    # quantization boxes in a 200-step budget, small enough that the warmup
    # steps stay inside the smoothed-L1 curvature radius on fine tables
    steps: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    early_stop_tolerance: float = 1e-6
    early_stop_window: int = 20

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParameterError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidParameterError("learning rate must be positive")


@dataclass
class OptimizeTrace:
    values: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_value(self) -> float:
        return self.values[-1] if self.values else float("nan")

    @property
    def steps_taken(self) -> int:
        return len(self.values)

    def to_csv(self) -> str:
        lines = ["step,value"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.values)]
        return "\n".join(lines) + "\n"


def pad_mask(mask: np.ndarray, code: CompressedImage) -> np.ndarray:
    """Zero-extend a cropped-image mask to the padded plane size."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (code.height, code.width):
        raise InvalidParameterError(
            f"mask {mask.shape} does not match image {(code.height, code.width)}")
    ph = code.luma.grid[0] * 8 - code.height
    pw = code.luma.grid[1] * 8 - code.width
    return np.pad(mask, ((0, ph), (0, pw)))


def trainable_blocks(code: CompressedImage, mask: np.ndarray) -> dict:
    """Per-plane boolean grids of blocks whose pixel footprint meets the mask,
    dilated by one block ring so edits can blend across block seams."""
    padded = pad_mask(mask, code)
    result = {}
    structure = np.ones((3, 3), dtype=bool)

    def blockwise_any(m, size):
        h, w = m.shape
        grid = (m > 0).reshape(h // size, size, w // size, size).any(axis=(1, 3))
        return ndimage.binary_dilation(grid, structure=structure)

    result["Y"] = blockwise_any(padded, 8)
    if code.is_color:
        size = 16 if code.sampling == SAMPLING_420 else 8
        result["Cb"] = result["Cr"] = blockwise_any(padded, size)
    if not any(g.any() for g in result.values()):
        raise InvalidParameterError("mask does not touch any coefficient block")
    return result


def latent_gradient(code: CompressedImage, latent: LatentField,
                    pixel_grad: np.ndarray) -> list[np.ndarray]:
    """Chain a gradient w.r.t. the cropped output pixels back to the latent
    planes. Returns arrays shaped like latent.arrays()."""
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    pad_h = code.luma.grid[0] * 8
    pad_w = code.luma.grid[1] * 8
    if code.is_color:
        g = np.zeros((pad_h, pad_w, 3))
        g[:code.height, :code.width] = pixel_grad
        g_ycc = dct.color_adjoint(g)
        channel_grads = [g_ycc[:, :, 0], g_ycc[:, :, 1], g_ycc[:, :, 2]]
    else:
        g = np.zeros((pad_h, pad_w))
        g[:code.height, :code.width] = pixel_grad
        channel_grads = [g]

    out = []
    for plane, u, g_plane in zip(code.planes(), latent.arrays(), channel_grads):
        chroma_model = plane.channel != "Y" and code.sampling == SAMPLING_420
        if chroma_model:
            g16 = dct.forward_dct16(dct.split_blocks(g_plane, 16))
            g_xd = CHROMA_EMBED_SCALE * g16[:, :, :8, :8]
        else:
            g_xd = dct.forward_dct8(dct.split_blocks(g_plane, 8))
        g_xn = g_xd * plane.table.astype(np.float64)
        g_u = dct.tensorize_blocks(g_xn) * residual_derivative(u)
        out.append(g_u)
    return out


class _Adam:
    def __init__(self, shapes, config: OptimizeConfig):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.cfg = config

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** self.t)
            v_hat = v / (1 - cfg.beta2 ** self.t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def _plane_masks(code: CompressedImage, mask: np.ndarray) -> list[np.ndarray]:
    """Trainable-coefficient multipliers (m, n, 1) per latent plane."""
    blocks = trainable_blocks(code, mask)
    order = ["Y", "Cb", "Cr"] if code.is_color else ["Y"]
    return [blocks[ch][:, :, None].astype(np.float64) for ch in order]


def _should_stop(values: list, cfg: OptimizeConfig) -> bool:
    if cfg.early_stop_tolerance <= 0:  # disabled
        return False
    w = cfg.early_stop_window
    if len(values) <= w:
        return False
    prev, cur = values[-w - 1], values[-1]
    return (prev - cur) < cfg.early_stop_tolerance * max(abs(prev), 1e-12)


def optimize(code: CompressedImage, latent: LatentField, objectives,
             mask: np.ndarray, config: Optional[OptimizeConfig] = None,
             callback: Optional[Callable] = None):
    """Minimize a weighted sum of objectives over the latent field.

    `objectives` is a list of (weight, fn) where fn(pixels) -> (value, grad)
    on the cropped unclamped output. Returns (new latent, trace). `callback`
    is invoked per step with (step, value, current ConsistentImage) and may
    return False to cancel (the partial latent is still returned).
    """
    config = config or OptimizeConfig()
    if not latent.matches(code):
        raise InvalidParameterError("latent field does not match code")
    multipliers = _plane_masks(code, mask)
    work = latent.copy()
    params = work.arrays()
    adam = _Adam([p.shape for p in params], config)
    trace = OptimizeTrace()
    start = time.perf_counter()

    for step in range(config.steps):
        image = reconstruct(code, work)
        pixels = image.pixels(clamp=False)
        total = 0.0
        grad = np.zeros_like(pixels)
        for weight, fn in objectives:
            if weight == 0:
                continue
            value, g = fn(pixels)
            total += weight * value
            grad += weight * np.asarray(g)
        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            raise OptimizationError(
                f"non-finite objective or gradient at step {step} (value={total})")
        trace.values.append(float(total))
        plane_grads = latent_gradient(code, work, grad)
        plane_grads = [g * m for g, m in zip(plane_grads, multipliers)]
        adam.step(params, plane_grads)
        if callback is not None and callback(step, float(total), image) is False:
            break
        if _should_stop(trace.values, config):
            break
    trace.wall_time = time.perf_counter() - start
    return work, trace


def composite(base: np.ndarray, content: np.ndarray, top: int, left: int) -> np.ndarray:
    """Paste content onto a copy of base at (top, left), clipping at borders."""
    out = np.asarray(base, dtype=np.float64).copy()
    h, w = content.shape[:2]
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + h, out.shape[0]), min(left + w, out.shape[1])
    if r0 >= r1 or c0 >= c1:
        raise InvalidParameterError("content placed entirely outside the image")
    out[r0:r1, c0:c1] = content[r0 - top:r1 - top, c0 - left:c1 - left]
    return out


def transform_content(content: np.ndarray, scale: float = 1.0,
                      rotation_deg: float = 0.0) -> np.ndarray:
    """Bilinear resize then rotate (expanding the canvas), sample range kept."""
    out = np.asarray(content, dtype=np.float64)
    if scale <= 0:
        raise InvalidParameterError("scale must be positive")
    if scale != 1.0:
        factors = (scale, scale) + (1,) * (out.ndim - 2)
        out = ndimage.zoom(out, factors, order=1, mode="nearest")
    if rotation_deg % 360.0 != 0.0:
        out = ndimage.rotate(out, rotation_deg, axes=(0, 1), reshape=True,
                             order=1, mode="nearest")
    return np.clip(out, 0, 255)


@dataclass
class ImprintSpec:
    content: np.ndarray
    top: int
    left: int
    translate: tuple = (0, 0)
    scale: float = 1.0
    rotation_deg: float = 0.0


def apply_imprint(code: CompressedImage, latent: LatentField, spec: ImprintSpec):
    """Phase one of imprinting: composite the (transformed) content onto the
    current output and project onto the consistent set. Returns the projected
    preview and the desired (pre-projection) image; the caller completes the
    edit by optimizing an L1 objective toward the preview."""
    from .consistency import project_to_consistent
    base = reconstruct(code, latent).pixels(clamp=False)
    content = transform_content(spec.content, spec.scale, spec.rotation_deg)
    top = spec.top + int(spec.translate[0])
    left = spec.left + int(spec.translate[1])
    desired = composite(base, content, top, left)
    return project_to_consistent(desired, code), desired


@dataclass
class ShiftResult:
    dy: int
    dx: int
    residual: float
    residuals: np.ndarray  # full 8x8 grid, indexed [dy, dx]


def imprint_shift_search(content: np.ndarray, code: CompressedImage,
                         base: np.ndarray, top: int, left: int) -> ShiftResult:
    """Try all 64 sub-block placements of the content and keep the one whose
    projection onto the consistent set changes it least (L2). Ties go to the
    smallest dy, then dx."""
    from .consistency import project_to_consistent
    if not (0 <= top < code.height and 0 <= left < code.width):
        raise InvalidParameterError("target rectangle outside the image")
    residuals = np.zeros((8, 8))
    for dy in range(8):
        for dx in range(8):
            desired = composite(base, content, top + dy, left + dx)
            projected = project_to_consistent(desired, code).pixels(clamp=False)
            residuals[dy, dx] = np.sqrt(np.sum((projected - desired) ** 2))
    best = int(np.argmin(residuals))  # C order: dy-major, matching the tie rule
    dy, dx = divmod(best, 8)
    return ShiftResult(dy, dx, float(residuals[dy, dx]), residuals)


def explore_classes(code: CompressedImage, latent: LatentField, mask: np.ndarray,
                    hook, classes, config: Optional[OptimizeConfig] = None):
    """Optimize the latent separately toward each class of the hook; every run
    starts from the same latent. Returns [(class, ConsistentImage, score)]."""
    from .objectives import eval_classifier, get_hook
    if isinstance(hook, str):
        hook = get_hook(hook)
    results = []
    for d in sorted(int(c) for c in classes):
        fn = lambda px, d=d: eval_classifier(px, mask, hook, d)
        new_latent, trace = optimize(code, latent, [(1.0, fn)], mask, config)
        out = reconstruct(code, new_latent)
        results.append((d, out, -trace.final_value))
    return results


def diverse_alternatives(code: CompressedImage, latent: LatentField,
                         mask: np.ndarray, count: int,
                         proximity_weight: float = 0.0,
                         config: Optional[OptimizeConfig] = None):
    """Jointly optimize `count` latent copies to spread apart in masked L1
    (optionally staying near the current output). Returns ConsistentImages."""
    from .objectives import eval_diversity
    if count < 2:
        raise InvalidParameterError("need at least two alternatives")
    config = config or OptimizeConfig()
    x0 = reconstruct(code, latent).pixels(clamp=False)
    multipliers = _plane_masks(code, mask)

    latents = []
    for i in range(count):
        rng = np.random.default_rng(config.seed + i)
        copy = latent.copy()
        for arr in copy.arrays():
            arr += rng.uniform(-0.01, 0.01, arr.shape)
        latents.append(copy)

    all_params = [arr for lat in latents for arr in lat.arrays()]
    adam = _Adam([p.shape for p in all_params], config)
    values = []
    for step in range(config.steps):
        images = [reconstruct(code, lat) for lat in latents]
        outputs = [im.pixels(clamp=False) for im in images]
        value, grads = eval_diversity(outputs, x0, mask, proximity_weight)
        if not np.isfinite(value):
            raise OptimizationError(f"non-finite diversity value at step {step}")
        values.append(float(value))
        all_grads = []
        for lat, g in zip(latents, grads):
            plane_grads = latent_gradient(code, lat, g)
            all_grads.extend(pg * m for pg, m in zip(plane_grads, multipliers))
        adam.step(all_params, all_grads)
        if _should_stop(values, config):
            break
    return [reconstruct(code, lat) for lat in latents]
