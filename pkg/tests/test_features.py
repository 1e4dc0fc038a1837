import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acronn import dsp, features, ingest, synth


class TestLayout:
    def test_bands_cover_53(self):
        layout = features.DEFAULT_LAYOUT
        assert layout.acc_band == (0, 8)
        assert layout.eda_band == (8, 20)
        assert layout.hrv_band == (20, 53)
        assert len(layout.names) == 53
        assert layout.dim == 53

    def test_no_eda_projection_has_41(self):
        idx = features.DEFAULT_LAYOUT.no_eda_indices()
        assert len(idx) == 41
        assert not any(8 <= i < 20 for i in idx)


class TestActigraphyCounts:
    def test_stationary_gravity_zero(self):
        acc = np.tile([0.0, 0.0, 1.0], (32 * 60, 1))
        counts = features.actigraphy_counts(acc, 32.0, 5)
        assert counts.max(initial=0.0) == 0.0

    def test_sine_positive_and_uniform(self):
        t = np.arange(32 * 60) / 32.0
        acc = np.zeros((len(t), 3))
        acc[:, 0] = 0.5 * np.sin(2 * np.pi * 1.0 * t)
        acc[:, 2] = 1.0
        counts = features.actigraphy_counts(acc, 32.0, 5)
        interior = counts[1:-1]
        assert (interior > 0).all()
        assert interior.max() - interior.min() <= 0.05 * interior.mean()

    @given(st.lists(st.floats(min_value=0.1, max_value=1.0), min_size=10, max_size=10))
    @settings(max_examples=10, deadline=None)
    def test_counts_monotone_in_amplitude(self, amps):
        t = np.arange(32 * 20) / 32.0
        totals = []
        for amp in sorted(amps):
            acc = np.zeros((len(t), 3))
            acc[:, 0] = amp * np.sin(2 * np.pi * 1.0 * t)
            acc[:, 2] = 1.0
            totals.append(features.actigraphy_counts(acc, 32.0, 1).sum())
        assert all(b >= a for a, b in zip(totals, totals[1:]))

    def test_bad_epoch_rejected(self):
        with pytest.raises(ValueError):
            features.actigraphy_counts(np.zeros((64, 3)), 32.0, 2)


def constant_window(**overrides):
    base = dict(
        counts_1s=np.zeros(10),
        tonic=np.full(40, 2.0),
        phasic=np.zeros(40),
        driver=np.zeros(40),
        raw_eda=np.full(40, 2.0),
        beat_times_ms=np.empty(0),
    )
    base.update(overrides)
    return features.SignalWindow(**base)


class TestWindowFeatures:
    def test_dimension_and_finiteness(self):
        x = features.extract_window_features(constant_window())
        assert x.shape == (53,)
        assert np.isfinite(x).all()

    def test_constant_eda_band(self):
        x = features.extract_window_features(constant_window())
        np.testing.assert_allclose(
            x[8:20], [2, 0, 0, 0, 0, 0, 0, 0, 0, 2, 2, 0], atol=1e-12
        )

    def test_stationary_acc_band_zero(self):
        x = features.extract_window_features(constant_window())
        np.testing.assert_array_equal(x[0:8], np.zeros(8))

    def test_metronomic_beats(self):
        beats = np.arange(0.0, 60_000.0, 800.0)
        x = features.extract_window_features(constant_window(beat_times_ms=beats))
        names = features.DEFAULT_LAYOUT.names
        idx = {n: i for i, n in enumerate(names)}
        assert x[idx["hrv_mean_nn"]] == pytest.approx(800.0)
        assert x[idx["hrv_sdnn"]] == 0.0
        assert x[idx["hrv_rmssd"]] == 0.0

    def test_scr_counting(self):
        driver = np.zeros(40)
        driver[[10, 25]] = [0.5, 0.02]
        x = features.extract_window_features(constant_window(driver=driver))
        idx = {n: i for i, n in enumerate(features.DEFAULT_LAYOUT.names)}
        assert x[idx["eda_scr_count"]] == 2.0
        assert x[idx["eda_scr_amp_mean"]] == pytest.approx(0.26)
        # raising the threshold above the small bump drops it
        x2 = features.extract_window_features(constant_window(driver=driver), scr_threshold=0.1)
        assert x2[idx["eda_scr_count"]] == 1.0

    @given(st.integers(min_value=-3, max_value=6))
    @settings(max_examples=10, deadline=None)
    def test_power_of_two_scaling_exact(self, k):
        c = float(2.0**k)
        rng = np.random.default_rng(42)
        tonic = 2.0 + 0.1 * rng.random(40)
        driver = np.zeros(40)
        driver[12] = 0.4
        kernel = dsp.bateman_kernel(4.0)
        phasic = np.convolve(driver, kernel)[:40]
        base = constant_window(tonic=tonic, phasic=phasic, driver=driver, raw_eda=tonic + phasic)
        scaled = constant_window(
            tonic=c * tonic, phasic=c * phasic, driver=c * driver, raw_eda=c * (tonic + phasic)
        )
        x = features.extract_window_features(base)
        y = features.extract_window_features(scaled, scr_threshold=0.01 * c)
        idx = {n: i for i, n in enumerate(features.DEFAULT_LAYOUT.names)}
        for name in ("eda_tonic_mean", "eda_tonic_std", "eda_phasic_max", "eda_phasic_auc"):
            assert y[idx[name]] == c * x[idx[name]]
        assert y[idx["eda_scr_count"]] == x[idx["eda_scr_count"]]


def processed_recording(duration_s: float, labels=None) -> features.ProcessedRecording:
    """Minimal processed recording with flat channels and a steady pulse."""
    rate = 4.0
    n = int(duration_s * rate)
    beat_times = np.arange(0.0, duration_s * 1000.0, 800.0)
    decomp = dsp.EdaDecomposition(
        tonic=np.full(n, 2.0), phasic=np.zeros(n), driver=np.zeros(n), residual=np.zeros(n)
    )
    return features.ProcessedRecording(
        subject_id="s0",
        start_ms=0.0,
        end_ms=duration_s * 1000.0,
        counts_start_ms=0.0,
        counts_1s=np.zeros(int(duration_s)),
        counts_5s=np.zeros(int(duration_s / 5)),
        eda_start_ms=0.0,
        eda_rate_hz=rate,
        eda=decomp,
        eda_denoised=np.full(n, 2.0),
        beats=dsp.BeatSeries(beat_times, np.diff(beat_times)),
        labels=labels or [],
    )


class TestAssembleSegments:
    def test_460s_gives_two_segments(self):
        segs = features.assemble_segments(processed_recording(460.0))
        assert len(segs) == 2
        assert all(seg.matrix.shape == (23, 53) for seg in segs)

    def test_229s_gives_none(self):
        assert features.assemble_segments(processed_recording(229.0)) == []

    @given(st.floats(min_value=0.0, max_value=2000.0))
    @settings(max_examples=20, deadline=None)
    def test_count_is_floor_of_duration(self, duration):
        segs = features.assemble_segments(processed_recording(duration))
        assert len(segs) == int(duration // 230.0)

    def test_majority_duration_label(self):
        labels = [
            ingest.LabelSpan(0.0, 120_000.0, 2),        # alert for 120 s
            ingest.LabelSpan(120_000.0, 230_000.0, 6),  # fatigued for 110 s
        ]
        segs = features.assemble_segments(processed_recording(230.0, labels))
        assert segs[0].label == 0

    def test_unlabeled_segment_is_none(self):
        segs = features.assemble_segments(processed_recording(230.0))
        assert segs[0].label is None

    def test_every_entry_finite(self):
        segs = features.assemble_segments(processed_recording(460.0))
        for seg in segs:
            assert np.isfinite(seg.matrix).all()


class TestClassMap:
    def test_binary_boundary(self):
        assert features.map_sss(3) == 0
        assert features.map_sss(4) == 1

    def test_other_schemes(self):
        assert features.scheme_classes("three") == 3
        assert features.map_sss(1, "three") == 0
        assert features.map_sss(4, "three") == 1
        assert features.map_sss(7, "three") == 2
        assert features.scheme_classes("seven") == 7
        assert features.map_sss(5, "seven") == 4

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            features.scheme_classes("quaternary")


def test_prepare_recording_end_to_end():
    cfg = synth.SynthConfig(seed=2, n_subjects=1, hours_per_subject=0.2)
    rec = synth.generate_dataset(cfg)[0].recording
    rec = ingest.impute_gaps(ingest.exclude_low_coverage_days(rec))
    proc = features.prepare_recording(rec, dsp.DspConfig(cvxeda_alpha=8e-3))
    segs = features.assemble_segments(proc)
    assert len(segs) == int((proc.end_ms - proc.start_ms) // 230_000)
    for seg in segs:
        assert seg.matrix.shape == (23, 53)
        assert np.isfinite(seg.matrix).all()
        assert seg.label in (0, 1)
