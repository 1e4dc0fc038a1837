"""Multimodal feature sequences: 10-s windows x 53 features, 23 windows per segment.

Feature bands: 8 statistics of 1-s activity counts, 12 skin-conductance
statistics over the tonic/phasic decomposition, and 33 heart-rate
variability features (time, geometric, frequency, nonlinear) computed over
the beats in the window plus 25 s of context on each side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks, lombscargle

from . import dsp
from .ingest import LabelSpan, RawRecording

WINDOWS_PER_SEGMENT = 23
WINDOW_S = 10.0
SEGMENT_S = WINDOWS_PER_SEGMENT * WINDOW_S

ACC_NAMES = [
    "acc_count_mean", "acc_count_median", "acc_count_std", "acc_count_var",
    "acc_count_min", "acc_count_max", "acc_count_skew", "acc_count_kurt",
]
EDA_NAMES = [
    "eda_tonic_mean", "eda_tonic_std", "eda_tonic_slope",
    "eda_phasic_mean", "eda_phasic_std", "eda_phasic_max", "eda_phasic_auc",
    "eda_scr_count", "eda_scr_amp_mean",
    "eda_raw_min", "eda_raw_max", "eda_raw_skew",
]
HRV_NAMES = [
    "hrv_mean_nn", "hrv_sdnn", "hrv_median_nn", "hrv_rmssd", "hrv_sdsd",
    "hrv_pnn20", "hrv_pnn50", "hrv_nn20", "hrv_nn50", "hrv_min_nn",
    "hrv_max_nn", "hrv_mean_hr",
    "hrv_tri_index", "hrv_tinn", "hrv_mode_nn",
    "hrv_vlf", "hrv_lf", "hrv_hf", "hrv_lf_hf", "hrv_lf_norm",
    "hrv_hf_norm", "hrv_total_power", "hrv_peak_hf",
    "hrv_sd1", "hrv_sd2", "hrv_sd1_sd2", "hrv_ellipse_area",
    "hrv_sampen", "hrv_apen", "hrv_dfa_a1", "hrv_csi", "hrv_cvi",
    "hrv_pnnx_slope",
]


@dataclass(frozen=True)
class FeatureLayout:
    """Band boundaries and names of the feature vector."""

    acc_band: tuple[int, int] = (0, 8)
    eda_band: tuple[int, int] = (8, 20)
    hrv_band: tuple[int, int] = (20, 53)
    names: tuple[str, ...] = tuple(ACC_NAMES + EDA_NAMES + HRV_NAMES)

    @property
    def dim(self) -> int:
        return self.hrv_band[1]

    @property
    def acc_slice(self) -> slice:
        return slice(*self.acc_band)

    def no_eda_indices(self) -> np.ndarray:
        """Column indices that drop the EDA band (the 41-feature projection)."""
        return np.array(
            list(range(*self.acc_band)) + list(range(*self.hrv_band)), dtype=int
        )


DEFAULT_LAYOUT = FeatureLayout()


@dataclass
class FeatureSequence:
    """One segment: a T x D feature matrix with its majority fatigue label."""

    segment_id: str
    start_ms: float
    matrix: np.ndarray
    window_s: float = WINDOW_S
    label: int | None = None
    gesture_ids: np.ndarray | None = None
    posture_ids: np.ndarray | None = None


# ---------------------------------------------------------------------------
# class mapping

SCHEMES = {"binary": 2, "three": 3, "seven": 7}


def scheme_classes(scheme: str) -> int:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown class scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    return SCHEMES[scheme]


def map_sss(sss: int, scheme: str = "binary") -> int:
    """Map a 1-7 sleepiness rating to a fatigue class; binary: fatigued iff >= 4."""
    scheme_classes(scheme)
    if scheme == "binary":
        return 1 if sss >= 4 else 0
    if scheme == "three":
        return 0 if sss <= 2 else (1 if sss <= 5 else 2)
    return sss - 1


# ---------------------------------------------------------------------------
# actigraphy counts

_DEADBAND_G = 0.068
_QUANTUM_G = 1.0 / 128.0


def actigraphy_counts(acc: np.ndarray, rate_hz: float, epoch_s: float) -> np.ndarray:
    """Epoch activity counts from a 3-axis acceleration array (n, 3) in g.

    Band-pass 0.25-2.5 Hz (2nd order, zero phase), rectify, zero below the
    0.068 g deadband, quantize to 1/128 g, sum per epoch per axis, then take
    the vector magnitude across axes.
    """
    if epoch_s not in (1, 5):
        raise ValueError("epoch_s must be 1 or 5")
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise ValueError("acc must have shape (n, 3)")
    if not np.all(np.isfinite(acc)):
        raise ValueError("acc contains missing samples")
    b, a = butter(2, [0.25, 2.5], btype="bandpass", fs=rate_hz)
    filtered = filtfilt(b, a, acc, axis=0)
    mag = np.abs(filtered)
    mag[mag < _DEADBAND_G] = 0.0
    quantized = np.floor(mag / _QUANTUM_G)
    per_epoch = int(round(epoch_s * rate_hz))
    n_epochs = len(quantized) // per_epoch
    trimmed = quantized[: n_epochs * per_epoch].reshape(n_epochs, per_epoch, 3)
    axis_sums = trimmed.sum(axis=1)
    return np.sqrt((axis_sums**2).sum(axis=1))


# ---------------------------------------------------------------------------
# HRV features

_NN_BIN_MS = 7.8125


def _skewness(x: np.ndarray) -> float:
    s = x.std()
    if s == 0:
        return 0.0
    z = (x - x.mean()) / s
    return float((z**3).mean())


def _kurtosis(x: np.ndarray) -> float:
    s = x.std()
    if s == 0:
        return 0.0
    z = (x - x.mean()) / s
    return float((z**4).mean() - 3.0)


def _triangular_features(nn: np.ndarray) -> tuple[float, float, float]:
    """(triangular index, TINN, histogram mode) on the standard 7.8125 ms bins."""
    lo = math.floor(nn.min() / _NN_BIN_MS)
    hi = math.floor(nn.max() / _NN_BIN_MS) + 1
    edges = np.arange(lo, hi + 1) * _NN_BIN_MS
    counts, _ = np.histogram(nn, bins=edges)
    peak = int(np.argmax(counts))
    tri = len(nn) / counts[peak]
    mode = (edges[peak] + edges[peak + 1]) / 2.0
    occupied = np.nonzero(counts)[0]
    best = math.inf
    best_w = 0.0
    for n_bin in range(max(occupied[0] - 1, peak - 64), peak + 1):
        for m_bin in range(peak, min(occupied[-1] + 2, peak + 64) + 1):
            tri_fit = np.zeros_like(counts, dtype=np.float64)
            if peak > n_bin:
                left = np.arange(n_bin, peak + 1)
                tri_fit[left] = counts[peak] * (left - n_bin) / (peak - n_bin)
            if m_bin > peak:
                right = np.arange(peak, m_bin + 1)
                right = right[right < len(counts)]
                tri_fit[right] = counts[peak] * (m_bin - right) / (m_bin - peak)
            tri_fit[peak] = counts[peak]
            err = float(((counts - tri_fit) ** 2).sum())
            if err < best:
                best = err
                best_w = (m_bin - n_bin) * _NN_BIN_MS
    return float(tri), best_w, float(mode)


def _band_powers(times_s: np.ndarray, nn: np.ndarray) -> list[float]:
    """Lomb-Scargle band powers: VLF, LF, HF, LF/HF, LFn, HFn, total, HF peak."""
    freqs = np.linspace(0.003, 0.4, 256)
    centered = nn - nn.mean()
    if np.allclose(centered, 0.0):
        return [0.0] * 8
    psd = lombscargle(times_s, centered, 2.0 * np.pi * freqs)
    bands = {"vlf": (0.003, 0.04), "lf": (0.04, 0.15), "hf": (0.15, 0.4)}
    power = {}
    for name, (lo, hi) in bands.items():
        sel = (freqs >= lo) & (freqs <= hi)
        power[name] = float(np.trapezoid(psd[sel], freqs[sel]))
    total = float(np.trapezoid(psd, freqs))
    lf, hf, vlf = power["lf"], power["hf"], power["vlf"]
    lf_hf = lf / hf if hf > 0 else 0.0
    denom = lf + hf
    lfn = lf / denom if denom > 0 else 0.0
    hfn = hf / denom if denom > 0 else 0.0
    hf_sel = (freqs >= 0.15) & (freqs <= 0.4)
    peak_hf = float(freqs[hf_sel][np.argmax(psd[hf_sel])])
    return [vlf, lf, hf, lf_hf, lfn, hfn, total, peak_hf]


def _sample_entropy(x: np.ndarray, m: int = 2, r: float | None = None) -> float:
    n = len(x)
    if n <= m + 1:
        return 0.0
    if r is None:
        r = 0.2 * x.std()
    def count_pairs(dim: int) -> int:
        emb = np.lib.stride_tricks.sliding_window_view(x, dim)
        d = np.abs(emb[:, None, :] - emb[None, :, :]).max(axis=2)
        return int((d[np.triu_indices(len(emb), k=1)] <= r).sum())
    b = count_pairs(m)
    a = count_pairs(m + 1)
    if a == 0 or b == 0:
        return 0.0
    return float(-np.log(a / b))


def _approximate_entropy(x: np.ndarray, m: int = 2, r: float | None = None) -> float:
    n = len(x)
    if n <= m + 1:
        return 0.0
    if r is None:
        r = 0.2 * x.std()
    def phi(dim: int) -> float:
        emb = np.lib.stride_tricks.sliding_window_view(x, dim)
        d = np.abs(emb[:, None, :] - emb[None, :, :]).max(axis=2)
        c = (d <= r).mean(axis=1)
        return float(np.log(c).mean())
    return phi(m) - phi(m + 1)


def _dfa_alpha1(x: np.ndarray) -> float:
    n = len(x)
    if n < 16:
        return 0.0
    y = np.cumsum(x - x.mean())
    scales = [s for s in (4, 6, 8, 11, 16) if s <= n // 4]
    if len(scales) < 2:
        return 0.0
    fluct = []
    for s in scales:
        n_boxes = n // s
        segs = y[: n_boxes * s].reshape(n_boxes, s)
        t = np.arange(s)
        res = 0.0
        for seg in segs:
            coef = np.polyfit(t, seg, 1)
            res += float(((seg - np.polyval(coef, t)) ** 2).sum())
        fluct.append(math.sqrt(res / (n_boxes * s)))
    fluct = np.asarray(fluct)
    if np.any(fluct <= 0):
        return 0.0
    slope = np.polyfit(np.log(scales), np.log(fluct), 1)[0]
    return float(slope)


def _hrv_features(beat_times_ms: np.ndarray) -> np.ndarray:
    out = np.zeros(len(HRV_NAMES))
    if len(beat_times_ms) < 4:
        return out
    nn = np.diff(beat_times_ms)
    d = np.diff(nn)
    # time domain
    out[0] = nn.mean()
    out[1] = nn.std(ddof=1)
    out[2] = np.median(nn)
    out[3] = math.sqrt(float((d**2).mean())) if len(d) else 0.0
    out[4] = d.std(ddof=1) if len(d) > 1 else 0.0
    nn20 = int((np.abs(d) > 20.0).sum())
    nn50 = int((np.abs(d) > 50.0).sum())
    out[5] = nn20 / len(d) if len(d) else 0.0
    out[6] = nn50 / len(d) if len(d) else 0.0
    out[7] = nn20
    out[8] = nn50
    out[9] = nn.min()
    out[10] = nn.max()
    out[11] = (60000.0 / nn).mean()
    # geometric
    out[12], out[13], out[14] = _triangular_features(nn)
    # frequency (Lomb-Scargle on irregular beat times)
    times_s = (beat_times_ms[1:] - beat_times_ms[0]) / 1000.0
    out[15:23] = _band_powers(times_s, nn)
    # nonlinear
    var_d = float(d.var()) if len(d) else 0.0
    sd1 = math.sqrt(var_d / 2.0)
    sd2_sq = 2.0 * float(nn.var()) - var_d / 2.0
    sd2 = math.sqrt(sd2_sq) if sd2_sq > 0 else 0.0
    out[23] = sd1
    out[24] = sd2
    out[25] = sd1 / sd2 if sd2 > 0 else 0.0
    out[26] = math.pi * sd1 * sd2
    out[27] = _sample_entropy(nn)
    out[28] = _approximate_entropy(nn)
    out[29] = _dfa_alpha1(nn)
    out[30] = sd2 / sd1 if sd1 > 0 else 0.0
    out[31] = math.log10(16.0 * sd1 * sd2) if sd1 > 0 and sd2 > 0 else 0.0
    if len(d):
        thresholds = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
        pnnx = np.array([(np.abs(d) > thr).mean() for thr in thresholds])
        out[32] = np.polyfit(thresholds, pnnx, 1)[0]
    return out


# ---------------------------------------------------------------------------
# window feature extraction


@dataclass
class SignalWindow:
    """Everything one 10-s window needs: counts, EDA slices, beats with context."""

    counts_1s: np.ndarray
    tonic: np.ndarray
    phasic: np.ndarray
    driver: np.ndarray
    raw_eda: np.ndarray
    beat_times_ms: np.ndarray
    eda_rate_hz: float = 4.0


def extract_window_features(win: SignalWindow, scr_threshold: float = 0.01) -> np.ndarray:
    """53-vector for one window; degenerate inputs produce defined zeros."""
    counts = np.asarray(win.counts_1s, dtype=np.float64)
    acc = np.array(
        [
            counts.mean(),
            np.median(counts),
            counts.std(),
            counts.var(),
            counts.min(),
            counts.max(),
            _skewness(counts),
            _kurtosis(counts),
        ]
    )
    tonic = np.asarray(win.tonic, dtype=np.float64)
    phasic = np.asarray(win.phasic, dtype=np.float64)
    driver = np.asarray(win.driver, dtype=np.float64)
    raw = np.asarray(win.raw_eda, dtype=np.float64)
    t = np.arange(len(tonic)) / win.eda_rate_hz
    slope = np.polyfit(t, tonic, 1)[0] if len(tonic) > 1 else 0.0
    peaks, props = find_peaks(driver, height=scr_threshold)
    scr_amp = float(props["peak_heights"].mean()) if len(peaks) else 0.0
    eda = np.array(
        [
            tonic.mean(),
            tonic.std(),
            slope,
            phasic.mean(),
            phasic.std(),
            phasic.max(),
            np.trapezoid(phasic, dx=1.0 / win.eda_rate_hz),
            float(len(peaks)),
            scr_amp,
            raw.min(),
            raw.max(),
            _skewness(raw),
        ]
    )
    hrv = _hrv_features(np.asarray(win.beat_times_ms, dtype=np.float64))
    out = np.concatenate([acc, eda, hrv])
    return np.where(np.isfinite(out), out, 0.0)


# ---------------------------------------------------------------------------
# recording preparation and segment assembly


@dataclass
class ProcessedRecording:
    """Denoised, decomposed channels aligned on a common span, ready to window."""

    subject_id: str
    start_ms: float
    end_ms: float
    counts_start_ms: float
    counts_1s: np.ndarray
    counts_5s: np.ndarray
    eda_start_ms: float
    eda_rate_hz: float
    eda: dsp.EdaDecomposition
    eda_denoised: np.ndarray
    beats: dsp.BeatSeries
    labels: list[LabelSpan] = field(default_factory=list)


def prepare_recording(rec: RawRecording, cfg: dsp.DspConfig | None = None) -> ProcessedRecording:
    """Run the per-channel conditioning chain on an imputed (gap-free) recording."""
    cfg = cfg or dsp.DspConfig()
    for cid in ("acc_x", "acc_y", "acc_z", "eda", "bvp"):
        if cid not in rec.channels:
            raise ValueError(f"recording is missing channel {cid!r}")
    ax, ay, az = (rec.channels[c] for c in ("acc_x", "acc_y", "acc_z"))
    acc = np.column_stack([ax.values, ay.values, az.values])
    counts_1s = actigraphy_counts(acc, ax.rate_hz, 1)
    counts_5s = actigraphy_counts(acc, ax.rate_hz, 5)

    eda_series = rec.channels["eda"]
    eda_raw = eda_series.values
    if cfg.eda_swt_first:
        eda_den = dsp.swt_denoise(eda_raw, cfg.swt_levels_eda, cfg.wavelet)
        decomp = dsp.cvxeda_decompose_chunked(
            eda_den,
            chunk_s=cfg.cvxeda_chunk_s,
            rate_hz=eda_series.rate_hz,
            alpha=cfg.cvxeda_alpha,
            lam=cfg.cvxeda_lambda,
            tol=cfg.cvxeda_tol,
            max_iter=cfg.cvxeda_max_iter,
        )
    else:
        decomp = dsp.cvxeda_decompose_chunked(
            eda_raw,
            chunk_s=cfg.cvxeda_chunk_s,
            rate_hz=eda_series.rate_hz,
            alpha=cfg.cvxeda_alpha,
            lam=cfg.cvxeda_lambda,
            tol=cfg.cvxeda_tol,
            max_iter=cfg.cvxeda_max_iter,
        )
        decomp.tonic = dsp.swt_denoise(decomp.tonic, cfg.swt_levels_eda, cfg.wavelet)
        decomp.phasic = dsp.swt_denoise(decomp.phasic, cfg.swt_levels_eda, cfg.wavelet)
        decomp.residual = eda_raw - decomp.tonic - decomp.phasic
        eda_den = decomp.tonic + decomp.phasic

    bvp_series = rec.channels["bvp"]
    bvp = dsp.swt_denoise(bvp_series.values, cfg.swt_levels_bvp, cfg.wavelet)
    bvp = dsp.pmaf_auto(bvp, bvp_series.rate_hz, block_s=cfg.pmaf_block_s, m=cfg.pmaf_m)
    beats = dsp.detect_beats(bvp, bvp_series.rate_hz)
    beats = dsp.BeatSeries(beats.beat_times_ms + bvp_series.start_ms, beats.ibi_ms)

    start = max(ax.start_ms, eda_series.start_ms, bvp_series.start_ms)
    end = min(ax.end_ms, eda_series.end_ms, bvp_series.end_ms)
    return ProcessedRecording(
        subject_id=rec.subject_id,
        start_ms=start,
        end_ms=end,
        counts_start_ms=ax.start_ms,
        counts_1s=counts_1s,
        counts_5s=counts_5s,
        eda_start_ms=eda_series.start_ms,
        eda_rate_hz=eda_series.rate_hz,
        eda=decomp,
        eda_denoised=eda_den,
        beats=beats,
        labels=list(rec.labels),
    )


def _majority_by_duration(spans, t0: float, t1: float, value_of) -> int | None:
    totals: dict[int, float] = {}
    for span in spans:
        value = value_of(span)
        if value is None:
            continue
        overlap = min(span.end_ms, t1) - max(span.start_ms, t0)
        if overlap > 0:
            totals[value] = totals.get(value, 0.0) + overlap
    if not totals:
        return None
    best = max(sorted(totals), key=lambda k: totals[k])
    return int(best)


def assemble_segments(
    proc: ProcessedRecording,
    scheme: str = "binary",
    hrv_context_s: float = 25.0,
    scr_threshold: float = 0.01,
) -> list[FeatureSequence]:
    """Tile the processed recording into non-overlapping 23-window segments.

    The fatigue label of a segment is the duration-majority mapped SSS class;
    unlabeled segments carry None and are skipped by training. Trailing
    partial segments are dropped.
    """
    duration_ms = proc.end_ms - proc.start_ms
    n_segments = int(duration_ms // (SEGMENT_S * 1000.0))
    window_ms = WINDOW_S * 1000.0
    eda_per_window = int(round(WINDOW_S * proc.eda_rate_hz))
    segments = []
    beats = proc.beats.beat_times_ms
    for s in range(n_segments):
        seg_start = proc.start_ms + s * SEGMENT_S * 1000.0
        matrix = np.empty((WINDOWS_PER_SEGMENT, DEFAULT_LAYOUT.dim))
        gestures = np.full(WINDOWS_PER_SEGMENT, -1, dtype=int)
        postures = np.full(WINDOWS_PER_SEGMENT, -1, dtype=int)
        for w in range(WINDOWS_PER_SEGMENT):
            w0 = seg_start + w * window_ms
            w1 = w0 + window_ms
            c0 = int(round((w0 - proc.counts_start_ms) / 1000.0))
            counts = proc.counts_1s[c0 : c0 + int(WINDOW_S)]
            e0 = int(round((w0 - proc.eda_start_ms) * proc.eda_rate_hz / 1000.0))
            sl = slice(e0, e0 + eda_per_window)
            ctx = (beats >= w0 - hrv_context_s * 1000.0) & (beats <= w1 + hrv_context_s * 1000.0)
            win = SignalWindow(
                counts_1s=counts,
                tonic=proc.eda.tonic[sl],
                phasic=proc.eda.phasic[sl],
                driver=proc.eda.driver[sl],
                raw_eda=proc.eda_denoised[sl],
                beat_times_ms=beats[ctx],
                eda_rate_hz=proc.eda_rate_hz,
            )
            matrix[w] = extract_window_features(win, scr_threshold=scr_threshold)
            g = _majority_by_duration(proc.labels, w0, w1, lambda sp: sp.gesture_id)
            p = _majority_by_duration(proc.labels, w0, w1, lambda sp: sp.posture_id)
            gestures[w] = -1 if g is None else g
            postures[w] = -1 if p is None else p
        label = _majority_by_duration(
            proc.labels, seg_start, seg_start + SEGMENT_S * 1000.0,
            lambda sp: map_sss(sp.sss, scheme),
        )
        segments.append(
            FeatureSequence(
                segment_id=f"{proc.subject_id}_{s:04d}",
                start_ms=seg_start,
                matrix=matrix,
                label=label,
                gesture_ids=gestures,
                posture_ids=postures,
            )
        )
    return segments
