"""Deterministic decomposition of an image plane into overlapping square
patches and equal-weight (coverage mean) reassembly. Extraction and
aggregation are exact linear adjoints of each other up to the coverage
scaling, so backward passes reuse the same index arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


class SizingError(ValueError):
    pass


@dataclass
class PatchPlan:
    """Anchor grid and per-pixel coverage for one image plane."""

    height: int
    width: int
    side: int = 26
    stride: int = 22
    anchors: List[Tuple[int, int]] = field(init=False)
    coverage: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.height < self.side or self.width < self.side:
            raise SizingError(
                f"image {self.height}x{self.width} smaller than patch side {self.side}"
            )
        rows = _axis_anchors(self.height, self.side, self.stride)
        cols = _axis_anchors(self.width, self.side, self.stride)
        self.anchors = [(r, c) for r in rows for c in cols]
        cov = np.zeros((self.height, self.width))
        for r, c in self.anchors:
            cov[r : r + self.side, c : c + self.side] += 1.0
        self.coverage = cov

    @property
    def num_patches(self) -> int:
        return len(self.anchors)


def _axis_anchors(extent: int, side: int, stride: int) -> List[int]:
    anchors = list(range(0, extent - side + 1, stride))
    if anchors[-1] != extent - side:
        anchors.append(extent - side)  # clamp the final patch inside the image
    return anchors


def plan_patches(height: int, width: int, side: int = 26,
                 stride: int = 22) -> PatchPlan:
    return PatchPlan(height=height, width=width, side=side, stride=stride)


def extract_patches(plane: np.ndarray, plan: PatchPlan) -> np.ndarray:
    """Row-major flattened s*s windows, one row per anchor; shape (K, m)."""
    if plane.shape != (plan.height, plan.width):
        raise SizingError(
            f"plane shape {plane.shape} does not match plan "
            f"({plan.height}, {plan.width})"
        )
    s = plan.side
    return np.stack([
        plane[r : r + s, c : c + s].reshape(-1) for r, c in plan.anchors
    ])


def aggregate_patches(patches: np.ndarray, plan: PatchPlan) -> np.ndarray:
    """Per-pixel mean of all covering patches (scatter-add / coverage)."""
    patches = np.asarray(patches, dtype=np.float64)
    s = plan.side
    if patches.shape != (plan.num_patches, s * s):
        raise SizingError(
            f"patch array shape {patches.shape} does not match plan "
            f"({plan.num_patches}, {s * s})"
        )
    plane = np.zeros((plan.height, plan.width))
    for (r, c), patch in zip(plan.anchors, patches):
        plane[r : r + s, c : c + s] += patch.reshape(s, s)
    return plane / plan.coverage


def scatter_patch_grads(patch_grads: np.ndarray, plan: PatchPlan) -> np.ndarray:
    """Adjoint of extract_patches: scatter-add patch gradients to the plane."""
    s = plan.side
    plane = np.zeros((plan.height, plan.width))
    for (r, c), g in zip(plan.anchors, patch_grads):
        plane[r : r + s, c : c + s] += g.reshape(s, s)
    return plane
