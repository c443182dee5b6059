"""Tool request schema shared by the HTTP service and the CLI.

One pydantic model per editing tool; jobs carry a weighted list of them. The
builder turns validated tool specs into objective closures for the optimizer,
resolving mask/image references through a caller-supplied context.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import InvalidParameterError


class _Tool(BaseModel):
    weight: float = Field(default=1.0, ge=0.0)


class VarianceTool(_Tool):
    type: Literal["variance"] = "variance"
    delta: float = Field(default=0.0, ge=0.0)
    direction: Literal["increase", "decrease"] = "increase"
    absolute_target: Optional[float] = None


class TvTool(_Tool):
    type: Literal["tv"] = "tv"


class L1TargetTool(_Tool):
    type: Literal["l1_target"] = "l1_target"
    target: str  # uploaded target id (service) or image path (CLI)


class MagnitudeTool(_Tool):
    type: Literal["magnitude"] = "magnitude"
    delta: float = Field(default=0.0, ge=0.0)
    direction: Literal["increase", "decrease"] = "increase"


class PatchDictTool(_Tool):
    type: Literal["patch_dict"] = "patch_dict"
    source_mask: str
    source_image: Optional[str] = None  # defaults to the current output
    ignore_variance: bool = False


class PeriodicityTool(_Tool):
    type: Literal["periodicity"] = "periodicity"
    directions: Optional[list[tuple[int, int]]] = None
    auto_axis: Optional[Literal[0, 1]] = None

    @field_validator("directions")
    @classmethod
    def _check_directions(cls, v):
        if v is not None:
            if not 1 <= len(v) <= 2 or any(tuple(d) == (0, 0) for d in v):
                raise ValueError("need 1-2 nonzero period vectors")
        return v


class RangeTool(_Tool):
    type: Literal["range"] = "range"
    lo: float = 16.0
    hi: float = 235.0


class HsvTool(_Tool):
    type: Literal["hsv"] = "hsv"
    attribute: Literal["hue", "saturation", "value"]
    amount: float


class ClassifierTool(_Tool):
    type: Literal["classifier"] = "classifier"
    hook: str = "toy"
    class_index: int = Field(ge=0)


class DiversityTool(_Tool):
    type: Literal["diversity"] = "diversity"
    count: int = Field(default=3, ge=2)
    proximity_weight: float = Field(default=0.0, ge=0.0)


class ExploreClassesTool(_Tool):
    type: Literal["explore_classes"] = "explore_classes"
    hook: str = "toy"
    classes: list[int] = Field(min_length=1)


ToolObjective = Annotated[
    Union[VarianceTool, TvTool, L1TargetTool, MagnitudeTool, PatchDictTool,
          PeriodicityTool, RangeTool, HsvTool, ClassifierTool, DiversityTool,
          ExploreClassesTool],
    Field(discriminator="type"),
]

GALLERY_TYPES = ("diversity", "explore_classes")


class OptimizeSettings(BaseModel):
    steps: int = Field(default=200, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    seed: int = 0
    early_stop_tolerance: float = 1e-6

    def to_config(self):
        from .optimizer import OptimizeConfig
        return OptimizeConfig(steps=self.steps, learning_rate=self.learning_rate,
                              seed=self.seed,
                              early_stop_tolerance=self.early_stop_tolerance)


class JobRequest(BaseModel):
    objectives: list[ToolObjective] = Field(min_length=1)
    mask: Optional[str] = None  # stored mask name; None = whole image
    config: OptimizeSettings = OptimizeSettings()

    @field_validator("objectives")
    @classmethod
    def _gallery_tools_run_alone(cls, v):
        if len(v) > 1 and any(t.type in GALLERY_TYPES for t in v):
            raise ValueError("diversity/explore_classes must be the only tool in a job")
        return v


def build_objectives(tools, code, x0: np.ndarray, mask: np.ndarray,
                     resolve_image, resolve_mask):
    """Weighted (weight, fn) closures for `optimize` from validated tools.

    `x0` is the current (pre-edit) output; `resolve_image(ref)` and
    `resolve_mask(ref)` map string references to arrays. Two-phase tools
    (l1_target, hsv) project their desired image here so the optimizer only
    ever chases consistent targets.
    """
    from . import objectives as obj
    from .consistency import project_to_consistent

    built = []
    for tool in tools:
        if tool.type == "variance":
            fn = (lambda px, t=tool: obj.eval_variance(
                px, x0, mask, t.delta, t.direction, t.absolute_target))
        elif tool.type == "tv":
            fn = lambda px: obj.eval_tv(px, mask)
        elif tool.type == "l1_target":
            desired = np.asarray(resolve_image(tool.target), dtype=np.float64)
            target = project_to_consistent(desired, code).pixels(clamp=False)
            fn = lambda px, t=target: obj.eval_l1_target(px, t, mask)
        elif tool.type == "magnitude":
            fn = (lambda px, t=tool: obj.eval_magnitude(
                px, x0, mask, t.delta, t.direction))
        elif tool.type == "patch_dict":
            src_img = x0 if tool.source_image is None else \
                np.asarray(resolve_image(tool.source_image), dtype=np.float64)
            src_mask = resolve_mask(tool.source_mask)
            source = obj.build_patch_set(src_img, src_mask, (2, 2))
            fn = (lambda px, s=source, t=tool: obj.eval_patch_dict(
                px, x0, s, mask, t.ignore_variance))
        elif tool.type == "periodicity":
            directions = tool.directions
            if directions is None:
                if tool.auto_axis is None:
                    raise InvalidParameterError(
                        "periodicity needs directions or auto_axis")
                period, _ = obj.auto_period(x0, mask, tool.auto_axis)
                directions = [(period, 0) if tool.auto_axis == 0 else (0, period)]
            fn = (lambda px, d=directions: obj.eval_periodicity(px, mask, d))
        elif tool.type == "range":
            fn = (lambda px, t=tool: obj.eval_range(px, mask, t.lo, t.hi))
        elif tool.type == "hsv":
            desired = obj.build_hsv_target(np.clip(x0, 0, 255), mask,
                                           tool.attribute, tool.amount)
            target = project_to_consistent(desired, code).pixels(clamp=False)
            fn = lambda px, t=target: obj.eval_l1_target(px, t, mask)
        elif tool.type == "classifier":
            hook = obj.get_hook(tool.hook)
            fn = (lambda px, h=hook, t=tool: obj.eval_classifier(
                px, mask, h, t.class_index))
        else:
            raise InvalidParameterError(
                f"tool {tool.type!r} is not a pointwise objective")
        built.append((tool.weight, fn))
    return built
