"""Per-class contextual feature maps and activity-box relevance scores.

Every activity box becomes a confidence-scaled separable Gaussian bump on
the (window, feature) grid. Bumps of boxes sharing a fatigue class are
summed into that class's map, which is then normalized by its own maximum.
Two scores rate a box: one over its own bump, one over the normalized class
map; both divide the rectangle sum by (2*sigma_x^2 * 2*sigma_y^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import DEFAULT_LAYOUT, FeatureSequence, WINDOWS_PER_SEGMENT
from .har import ActivityBox

GRID_H = WINDOWS_PER_SEGMENT  # window axis
GRID_W = DEFAULT_LAYOUT.dim   # feature axis

_ACC_CENTER = (DEFAULT_LAYOUT.acc_band[0] + DEFAULT_LAYOUT.acc_band[1] - 1) / 2.0


def box_sigmas(box: ActivityBox, grid_w: int = GRID_W) -> tuple[float, float]:
    sigma_x = max((box.t1 - box.t0 + 1) / 2.0, 0.5)
    sigma_y = grid_w / 4.0
    return sigma_x, sigma_y


@dataclass
class BoxHeatmap:
    """Gaussian relevance bump of one activity box on the segment grid."""

    box: ActivityBox
    mu_x: float
    sigma_x: float
    mu_y: float
    sigma_y: float
    grid: np.ndarray  # (grid_h, grid_w), entries in [0, p_b]


@dataclass
class ContextTensor:
    """Stack of per-fatigue-class normalized maps plus per-box scores."""

    maps: np.ndarray  # (grid_h, grid_w, num_classes)
    per_box_scores: list[tuple[ActivityBox, float, float]] = field(default_factory=list)


def build_heatmap(
    box: ActivityBox,
    stage1_probs: np.ndarray,
    grid_h: int = GRID_H,
    grid_w: int = GRID_W,
    mu_y: float = _ACC_CENTER,
) -> BoxHeatmap:
    """Gaussian bump centered on the box; assigns the box's fatigue class.

    The class is the argmax of the mean stage-1 fatigue probability over the
    box's windows, stored on the box itself.
    """
    mu_x = (box.t0 + box.t1) / 2.0
    sigma_x, sigma_y = box_sigmas(box, grid_w)
    xs = np.arange(grid_h, dtype=np.float64)
    ys = np.arange(grid_w, dtype=np.float64)
    gx = np.exp(-((xs - mu_x) ** 2) / (2.0 * sigma_x**2))
    gy = np.exp(-((ys - mu_y) ** 2) / (2.0 * sigma_y**2))
    grid = box.confidence * np.outer(gx, gy)
    box.fatigue_class = int(np.argmax(stage1_probs[box.t0 : box.t1 + 1].mean(axis=0)))
    return BoxHeatmap(box=box, mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, grid=grid)


def build_cfm(heatmaps: list[BoxHeatmap], num_classes: int, grid_h: int = GRID_H, grid_w: int = GRID_W) -> ContextTensor:
    """Sum bumps per fatigue class and normalize each class map by its maximum.

    Class slices with no contributing boxes stay all-zero; every nonempty
    slice has maximum exactly 1.
    """
    maps = np.zeros((grid_h, grid_w, num_classes))
    for hm in heatmaps:
        if hm.box.fatigue_class is None:
            raise ValueError("heatmap box has no fatigue class assigned")
        maps[:, :, hm.box.fatigue_class] += hm.grid
    for c in range(num_classes):
        top = maps[:, :, c].max()
        if top > 0:
            maps[:, :, c] /= top
    return ContextTensor(maps=maps)


def score_individual(fm: BoxHeatmap) -> float:
    """Rectangle sum of the box's own bump over (2*sigma_x^2 * 2*sigma_y^2)."""
    rect = fm.grid[fm.box.t0 : fm.box.t1 + 1, :]
    return float(rect.sum()) / (2.0 * fm.sigma_x**2 * 2.0 * fm.sigma_y**2)


def score_cumulative(ct: ContextTensor, box: ActivityBox) -> float:
    """Rectangle sum of the box's class map over (2*sigma_x^2 * 2*sigma_y^2)."""
    if box.fatigue_class is None:
        raise ValueError("box has no fatigue class assigned")
    sigma_x, sigma_y = box_sigmas(box, ct.maps.shape[1])
    rect = ct.maps[box.t0 : box.t1 + 1, :, box.fatigue_class]
    return float(rect.sum()) / (2.0 * sigma_x**2 * 2.0 * sigma_y**2)


def build_context(
    segment: FeatureSequence,
    boxes: list[ActivityBox],
    stage1_probs: np.ndarray,
    num_classes: int,
) -> ContextTensor:
    """Heatmaps, class maps, and both scores for every box of one segment."""
    grid_h, grid_w = stage1_probs.shape[0], segment.matrix.shape[1]
    heatmaps = [build_heatmap(b, stage1_probs, grid_h, grid_w) for b in boxes]
    ct = build_cfm(heatmaps, num_classes, grid_h, grid_w)
    ct.per_box_scores = [
        (hm.box, score_individual(hm), score_cumulative(ct, hm.box)) for hm in heatmaps
    ]
    return ct


def assemble_stage2_input(segment: FeatureSequence, ct: ContextTensor, boxes: list[ActivityBox]) -> np.ndarray:
    """Per-window stage-2 features: base vector, per-class map means, box scores.

    Columns: the segment's D features, the mean over the feature axis of each
    class map at that window (C columns), then the cumulative score of the
    gestural and postural box covering the window (0 where uncovered).
    """
    base = segment.matrix
    t_dim, num_classes = base.shape[0], ct.maps.shape[2]
    cfm_cols = ct.maps.mean(axis=1)
    score_cols = np.zeros((t_dim, 2))
    score_by_box = {id(b): s2 for b, _, s2 in ct.per_box_scores}
    for box in boxes:
        col = 0 if box.kind == "gestural" else 1
        s2 = score_by_box.get(id(box))
        if s2 is None:
            s2 = score_cumulative(ct, box)
        score_cols[box.t0 : box.t1 + 1, col] = s2
    return np.hstack([base, cfm_cols, score_cols])
