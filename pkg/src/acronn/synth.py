"""Synthetic labeled wearable recordings for desk-scale training and evaluation.

The generator encodes the working hypothesis of the pipeline: a given
activity class injects the *same* artifact waveform into the physiological
channels for every subject (up to a per-subject scale factor), while fatigue
modulates the physiology itself (tonic level up, skin-conductance responses
and heart-rate variability down). Activity artifacts deliberately mimic
fatigue signatures so context-blind classifiers are misled during movement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp
from .ingest import LabelSpan, RawRecording, UniformSeries, save_recording

EPOCH_MIDNIGHT_MS = 1_700_000_000_000 - (1_700_000_000_000 % 86_400_000)


@dataclass
class SynthConfig:
    seed: int = 0
    n_subjects: int = 12
    hours_per_subject: float = 1.25
    # rates
    acc_rate_hz: float = 32.0
    eda_rate_hz: float = 4.0
    bvp_rate_hz: float = 64.0
    # activity schedule: gestures arrive in bouts, so some spans are heavily
    # covered by movement and others are still
    gesture_rate_per_min: float = 1.0  # density multiplier; 0 disables gestures
    gesture_duration_s: tuple[float, float] = (12.0, 26.0)
    bout_len_s: tuple[float, float] = (90.0, 210.0)
    bout_idle_mean_s: float = 240.0
    posture_dwell_s: tuple[float, float] = (150.0, 400.0)
    posture_classes: tuple[int, ...] = (0, 1, 2, 3)
    # sleepiness schedule
    sss_block_s: tuple[float, float] = (360.0, 720.0)
    alert_sss: tuple[int, ...] = (2, 3)
    fatigued_sss: tuple[int, ...] = (5, 6)
    # fatigue physiology (effect size at maximum fatigue)
    fatigue_dynamics: bool = True
    tonic_rise_us: float = 0.8
    scr_rate_drop: float = 0.55
    rmssd_drop: float = 0.45
    hr_drop_bpm: float = 3.0
    # behavioral fatigue: movement bouts thin out and shorten when sleepy
    bout_idle_fatigue_gain: float = 3.2
    bout_len_fatigue_drop: float = 0.55
    # baseline physiology; bases vary per subject so absolute levels transfer poorly
    tonic_base_us: tuple[float, float] = (1.9, 2.3)
    tonic_drift_us: float = 0.3
    scr_rate_per_min: float = 3.0
    scr_amp_us: tuple[float, float] = (0.12, 0.45)
    base_hr_bpm: tuple[float, float] = (68.0, 76.0)
    rsa_depth: float = 0.05  # per-subject jitter applied at generation
    # activity artifacts (identical template per class, subject-scaled)
    artifact_subject_range: tuple[float, float] = (0.5, 2.0)
    eda_artifact_us: float = 2.2
    bvp_artifact: float = 1.1
    artifact_dur_s: float = 18.0
    # noise and gaps
    acc_noise_g: float = 0.01
    eda_noise_us: float = 0.02
    bvp_noise: float = 0.05
    missing_fraction: float = 0.0


@dataclass
class TrueBox:
    start_ms: float
    end_ms: float
    kind: str
    activity_class: int


@dataclass
class SynthSubject:
    recording: RawRecording
    true_boxes: list[TrueBox] = field(default_factory=list)


def eda_artifact_template(kind: str, cls: int, rate_hz: float, dur_s: float) -> np.ndarray:
    """Smooth conductance rise shared by every subject performing this class.

    Motion pushes the skin-conductance level up in a slow bump that is
    indistinguishable from a genuine tonic rise within the EDA channel
    itself; only the activity context can tell the two apart.
    """
    t = np.arange(int(round(dur_s * rate_hz))) / rate_hz
    if kind == "gestural":
        amp = 0.55 + 0.07 * cls
    else:
        amp = 0.45 + 0.08 * cls
    return amp * np.sin(math.pi * np.minimum(t / dur_s, 1.0)) ** 2


def bvp_artifact_template(kind: str, cls: int, rate_hz: float, dur_s: float) -> np.ndarray:
    t = np.arange(int(round(dur_s * rate_hz))) / rate_hz
    freq = (2.2 + 0.35 * cls) if kind == "gestural" else (1.6 + 0.3 * cls)
    tau = 1.6 if kind == "gestural" else 2.4
    return np.exp(-t / tau) * np.sin(2.0 * math.pi * freq * t)


def _blocks(rng, total_s: float, dwell: tuple[float, float], choices, forbid_repeat=True):
    """Piecewise-constant schedule as (start_s, end_s, value) triples."""
    out = []
    t = 0.0
    prev = None
    while t < total_s:
        dur = rng.uniform(*dwell)
        value = choices[rng.integers(len(choices))]
        if forbid_repeat and prev is not None and len(choices) > 1:
            while value == prev:
                value = choices[rng.integers(len(choices))]
        if out and value == prev:
            out[-1] = (out[-1][0], min(t + dur, total_s), value)
        else:
            out.append((t, min(t + dur, total_s), value))
        prev = value
        t += dur
    return out


def _value_at(blocks, t_s: float):
    for b0, b1, v in blocks:
        if b0 <= t_s < b1:
            return v
    return blocks[-1][2]


def _add_at(signal: np.ndarray, start_idx: int, template: np.ndarray) -> None:
    stop = min(len(signal), start_idx + len(template))
    if stop > start_idx >= 0:
        signal[start_idx:stop] += template[: stop - start_idx]


def _gesture_events(rng, cfg: SynthConfig, total_s: float, fatigue_at=lambda t: 0.0):
    events = []
    if cfg.gesture_rate_per_min <= 0:
        return events
    t = rng.uniform(10.0, 60.0)
    while t < total_s - cfg.gesture_duration_s[0]:
        level = fatigue_at(t)
        bout_len = rng.uniform(*cfg.bout_len_s) * (1.0 - cfg.bout_len_fatigue_drop * level)
        bout_end = min(t + bout_len, total_s)
        while t < min(bout_end, total_s - cfg.gesture_duration_s[0]):
            dur = rng.uniform(*cfg.gesture_duration_s)
            cls = int(rng.integers(1, 8))
            events.append((t, min(t + dur, total_s), cls))
            t += dur + rng.uniform(2.0, 6.0)
        idle = cfg.bout_idle_mean_s / cfg.gesture_rate_per_min
        idle *= 1.0 + cfg.bout_idle_fatigue_gain * fatigue_at(bout_end)
        t = bout_end + rng.exponential(idle)
    return events


def _mask_bursts(rng, n: int, rate_hz: float, fraction: float) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if fraction <= 0:
        return mask
    target = int(fraction * n)
    while mask.sum() < target:
        dur = int(rng.uniform(2.0, 10.0) * rate_hz)
        start = int(rng.integers(0, max(1, n - dur)))
        mask[start : start + dur] = True
    return mask


def _generate_subject(cfg: SynthConfig, subject_id: str, rng: np.random.Generator) -> SynthSubject:
    total_s = cfg.hours_per_subject * 3600.0
    start_ms = float(EPOCH_MIDNIGHT_MS)
    subject_scale = rng.uniform(*cfg.artifact_subject_range)
    personal_response = rng.uniform(0.6, 1.4)
    tonic_base = rng.uniform(*cfg.tonic_base_us)
    base_hr = rng.uniform(*cfg.base_hr_bpm)
    rsa_depth = cfg.rsa_depth * rng.uniform(0.6, 1.5)
    drift_phase = rng.uniform(0.0, 2.0 * math.pi)

    sss_values = cfg.alert_sss + cfg.fatigued_sss
    sss_blocks = _blocks(rng, total_s, cfg.sss_block_s, sss_values)

    # smoothed fatigue intensity: physiology ramps over ~90 s at block changes
    grid_t = np.arange(int(total_s) + 1, dtype=np.float64)
    grid_phi = np.array([(_value_at(sss_blocks, t) - 1) / 6.0 for t in grid_t])
    ramp = np.ones(91) / 91.0
    grid_phi = np.convolve(np.pad(grid_phi, 45, mode="edge"), ramp, mode="valid")

    def fatigue_level(t_s):
        if not cfg.fatigue_dynamics:
            return 0.0
        return float(np.interp(t_s, grid_t, grid_phi))

    def fatigue_levels(t_arr):
        if not cfg.fatigue_dynamics:
            return np.zeros(len(t_arr))
        return np.interp(t_arr, grid_t, grid_phi)

    posture_blocks = _blocks(rng, total_s, cfg.posture_dwell_s, cfg.posture_classes)
    gestures = _gesture_events(rng, cfg, total_s, fatigue_at=fatigue_level)

    # accelerometer: posture sway + gesture oscillation + noise around gravity
    n_acc = int(total_s * cfg.acc_rate_hz)
    t_acc = np.arange(n_acc) / cfg.acc_rate_hz
    acc = np.zeros((n_acc, 3))
    gravity = {0: (0.0, 0.0, 1.0), 1: (0.20, 0.0, 0.98), 2: (0.98, 0.0, 0.20), 3: (0.0, 0.20, 0.98)}
    sway_amp = {0: 0.05, 1: 0.12, 2: 0.2, 3: 0.32}
    sway_freq = {0: 1.1, 1: 0.7, 2: 1.5, 3: 2.1}
    for b0, b1, p in posture_blocks:
        sel = (t_acc >= b0) & (t_acc < b1)
        acc[sel] += np.asarray(gravity[p])
        acc[sel, 1] += sway_amp[p] * np.sin(2.0 * math.pi * sway_freq[p] * t_acc[sel])
    for g0, g1, cls in gestures:
        sel = (t_acc >= g0) & (t_acc < g1)
        tt = t_acc[sel] - g0
        env = np.minimum(1.0, np.minimum(tt, (g1 - g0) - tt))
        osc = (0.17 + 0.025 * cls) * np.sin(2.0 * math.pi * (1.9 + 0.14 * cls) * tt) * env
        acc[sel, 0] += osc
        acc[sel, 1] += 0.5 * osc
    acc += rng.normal(0.0, cfg.acc_noise_g, acc.shape)

    # EDA: tonic level and drift, fatigue-modulated sparse responses, artifacts
    n_eda = int(total_s * cfg.eda_rate_hz)
    t_eda = np.arange(n_eda) / cfg.eda_rate_hz
    phi = fatigue_levels(t_eda)
    tonic = (
        tonic_base
        + cfg.tonic_drift_us * np.sin(2.0 * math.pi * t_eda / 1800.0 + drift_phase)
        + cfg.tonic_rise_us * personal_response * phi
    )
    driver = np.zeros(n_eda)
    rate_per_sample = cfg.scr_rate_per_min / 60.0 / cfg.eda_rate_hz
    hits = rng.random(n_eda) < rate_per_sample * (1.0 - cfg.scr_rate_drop * phi)
    driver[hits] = rng.uniform(*cfg.scr_amp_us, int(hits.sum())) * personal_response
    kernel = dsp.bateman_kernel(cfg.eda_rate_hz)
    eda = tonic + np.convolve(driver, kernel)[:n_eda]
    for g0, g1, cls in gestures:
        template = cfg.eda_artifact_us * eda_artifact_template("gestural", cls, cfg.eda_rate_hz, cfg.artifact_dur_s)
        _add_at(eda, int(round(g0 * cfg.eda_rate_hz)), subject_scale * template)
    for b0, b1, p in posture_blocks[1:]:
        template = cfg.eda_artifact_us * eda_artifact_template("postural", p, cfg.eda_rate_hz, cfg.artifact_dur_s)
        _add_at(eda, int(round(b0 * cfg.eda_rate_hz)), subject_scale * template)
    eda += rng.normal(0.0, cfg.eda_noise_us, n_eda)

    # BVP: pulses at fatigue-modulated rate and variability, artifacts, noise
    n_bvp = int(total_s * cfg.bvp_rate_hz)
    bvp = np.zeros(n_bvp)
    pulse = np.sin(math.pi * np.arange(int(0.35 * cfg.bvp_rate_hz)) / (0.35 * cfg.bvp_rate_hz)) ** 2
    t_beat = 0.0
    while t_beat < total_s:
        level = fatigue_level(t_beat)
        hr = base_hr - cfg.hr_drop_bpm * personal_response * level
        depth = rsa_depth * (1.0 - cfg.rmssd_drop * level)
        ibi = 60.0 / hr * (1.0 + depth * math.sin(2.0 * math.pi * 0.25 * t_beat) + rng.normal(0.0, depth * 0.4))
        ibi = max(ibi, 0.3)
        _add_at(bvp, int(round(t_beat * cfg.bvp_rate_hz)), pulse)
        t_beat += ibi
    for g0, g1, cls in gestures:
        template = cfg.bvp_artifact * bvp_artifact_template("gestural", cls, cfg.bvp_rate_hz, cfg.artifact_dur_s)
        _add_at(bvp, int(round(g0 * cfg.bvp_rate_hz)), subject_scale * template)
    bvp += rng.normal(0.0, cfg.bvp_noise, n_bvp)

    # labels: overlay of the three schedules
    cut_points = sorted(
        {0.0, total_s}
        | {b for b0, b1, _ in sss_blocks for b in (b0, b1)}
        | {b for b0, b1, _ in posture_blocks for b in (b0, b1)}
        | {b for g0, g1, _ in gestures for b in (g0, g1)}
    )
    labels = []
    for a, b in zip(cut_points[:-1], cut_points[1:]):
        if b - a <= 0:
            continue
        mid = (a + b) / 2.0
        gesture_id = 0
        for g0, g1, cls in gestures:
            if g0 <= mid < g1:
                gesture_id = cls
                break
        labels.append(
            LabelSpan(
                start_ms=start_ms + a * 1000.0,
                end_ms=start_ms + b * 1000.0,
                sss=int(_value_at(sss_blocks, mid)),
                gesture_id=gesture_id,
                posture_id=int(_value_at(posture_blocks, mid)),
            )
        )

    true_boxes = [
        TrueBox(start_ms + g0 * 1000.0, start_ms + g1 * 1000.0, "gestural", cls)
        for g0, g1, cls in gestures
    ] + [
        TrueBox(start_ms + b0 * 1000.0, start_ms + b1 * 1000.0, "postural", p)
        for b0, b1, p in posture_blocks
    ]

    channels = {
        "acc_x": UniformSeries(start_ms, cfg.acc_rate_hz, acc[:, 0]),
        "acc_y": UniformSeries(start_ms, cfg.acc_rate_hz, acc[:, 1]),
        "acc_z": UniformSeries(start_ms, cfg.acc_rate_hz, acc[:, 2]),
        "eda": UniformSeries(start_ms, cfg.eda_rate_hz, eda),
        "bvp": UniformSeries(start_ms, cfg.bvp_rate_hz, bvp),
    }
    if cfg.missing_fraction > 0:
        for cid, series in channels.items():
            mask = _mask_bursts(rng, len(series.values), series.rate_hz, cfg.missing_fraction)
            values = series.values.copy()
            values[mask] = np.nan
            channels[cid] = UniformSeries(series.start_ms, series.rate_hz, values)

    rec = RawRecording(subject_id=subject_id, channels=channels, labels=labels)
    return SynthSubject(recording=rec, true_boxes=true_boxes)


def generate_dataset(cfg: SynthConfig) -> list[SynthSubject]:
    """Deterministic per seed; each subject draws from its own spawned stream."""
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_subjects)
    return [
        _generate_subject(cfg, f"s{idx:02d}", np.random.default_rng(stream))
        for idx, stream in enumerate(streams)
    ]


def write_dataset(subjects: list[SynthSubject], out_dir) -> Path:
    """Write per-subject CSVs plus the ground-truth activity schedule."""
    out_dir = Path(out_dir)
    for subject in subjects:
        sub_dir = out_dir / subject.recording.subject_id
        save_recording(subject.recording, sub_dir)
        with open(sub_dir / "ground_truth_boxes.csv", "w") as fh:
            fh.write("start_ms,end_ms,kind,activity_class\n")
            for box in subject.true_boxes:
                fh.write(f"{box.start_ms},{box.end_ms},{box.kind},{box.activity_class}\n")
    return out_dir
