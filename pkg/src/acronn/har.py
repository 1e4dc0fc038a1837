"""Stage-1 activity recognition: per-window gesture/posture classification
merged into activity boxes.

Two independent sequence classifiers consume only the accelerometer band of
the feature matrix; consecutive windows with the same predicted class merge
into one box whose confidence is the mean winning-class probability.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .features import DEFAULT_LAYOUT, FeatureLayout, FeatureSequence

N_GESTURE_CLASSES = 8
N_POSTURE_CLASSES = 4

MIN_BOX_CONFIDENCE = 0.5


@dataclass
class ActivityBox:
    """A contiguous span of windows carrying one activity class."""

    kind: str  # "gestural" | "postural"
    activity_class: int
    t0: int
    t1: int
    confidence: float
    fatigue_class: int | None = None

    def covers(self, t: int) -> bool:
        return self.t0 <= t <= self.t1


def boxes_from_steps(kind: str, per_step: np.ndarray, min_confidence: float = MIN_BOX_CONFIDENCE) -> list[ActivityBox]:
    """Run-length merge per-window argmax predictions into confidence-filtered boxes."""
    classes = per_step.argmax(axis=1)
    win_probs = per_step[np.arange(len(classes)), classes]
    boxes = []
    start = 0
    for t in range(1, len(classes) + 1):
        if t == len(classes) or classes[t] != classes[start]:
            conf = float(win_probs[start:t].mean())
            if conf >= min_confidence:
                boxes.append(
                    ActivityBox(
                        kind=kind,
                        activity_class=int(classes[start]),
                        t0=start,
                        t1=t - 1,
                        confidence=conf,
                    )
                )
            start = t
    return boxes


def detect_activities(
    model_g: nn.LstmCsaModel,
    model_p: nn.LstmCsaModel,
    segment: FeatureSequence,
    layout: FeatureLayout = DEFAULT_LAYOUT,
    min_confidence: float = MIN_BOX_CONFIDENCE,
) -> list[ActivityBox]:
    """Detect gestural and postural boxes on one segment.

    Both models see only the accelerometer band, so detections are invariant
    to every other feature column.
    """
    acc = segment.matrix[:, layout.acc_slice]
    out: list[ActivityBox] = []
    for kind, model in (("gestural", model_g), ("postural", model_p)):
        result = nn.forward(model, acc)
        out.extend(boxes_from_steps(kind, result.per_step, min_confidence))
    return out


def training_runs(segments: list[FeatureSequence], which: str, layout: FeatureLayout = DEFAULT_LAYOUT):
    """Cut segments into runs of constant activity label for classifier training.

    Returns (sequence, label) pairs over the accelerometer band; windows with
    unknown labels (-1) are skipped.
    """
    pairs = []
    for seg in segments:
        ids = seg.gesture_ids if which == "gestural" else seg.posture_ids
        if ids is None:
            continue
        acc = seg.matrix[:, layout.acc_slice]
        start = 0
        for t in range(1, len(ids) + 1):
            if t == len(ids) or ids[t] != ids[start]:
                if ids[start] >= 0:
                    pairs.append((acc[start:t], int(ids[start])))
                start = t
    return pairs
