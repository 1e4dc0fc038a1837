import numpy as np
import pytest

from acronn import features, ingest, synth


def small_cfg(**overrides):
    base = dict(seed=3, n_subjects=2, hours_per_subject=0.25)
    base.update(overrides)
    return synth.SynthConfig(**base)


class TestDeterminism:
    def test_same_seed_bitwise_identical(self):
        a = synth.generate_dataset(small_cfg())
        b = synth.generate_dataset(small_cfg())
        for sa, sb in zip(a, b):
            ra, rb = sa.recording, sb.recording
            assert ra.labels == rb.labels
            assert sa.true_boxes == sb.true_boxes
            for cid in ra.channels:
                assert np.array_equal(ra.channels[cid].values, rb.channels[cid].values, equal_nan=True)

    def test_seed_changes_output(self):
        a = synth.generate_dataset(small_cfg(seed=1))
        b = synth.generate_dataset(small_cfg(seed=2))
        assert not np.array_equal(
            a[0].recording.channels["eda"].values, b[0].recording.channels["eda"].values
        )


class TestHypothesisEncoding:
    def test_zero_density_no_motion_no_artifacts(self):
        cfg = small_cfg(
            seed=1, n_subjects=1, hours_per_subject=0.1,
            gesture_rate_per_min=0.0, posture_classes=(0,),
            scr_rate_per_min=0.0, eda_noise_us=0.0, acc_noise_g=0.0,
            tonic_drift_us=0.0, fatigue_dynamics=False, tonic_base_us=(2.0, 2.0),
        )
        rec = synth.generate_dataset(cfg)[0].recording
        acc = np.column_stack([rec.channels[c].values for c in ("acc_x", "acc_y", "acc_z")])
        counts = features.actigraphy_counts(acc, cfg.acc_rate_hz, 5)
        assert counts.max(initial=0.0) == 0.0
        np.testing.assert_allclose(rec.channels["eda"].values, 2.0, atol=1e-12)

    def test_same_class_artifact_shape_shared_across_subjects(self):
        cfg = small_cfg(
            seed=9, n_subjects=2, hours_per_subject=0.3,
            gesture_rate_per_min=0.4, bout_len_s=(40.0, 60.0), bout_idle_mean_s=400.0,
            scr_rate_per_min=0.0, eda_noise_us=0.0, tonic_drift_us=0.0,
            fatigue_dynamics=False, posture_classes=(0,), tonic_base_us=(2.0, 2.0),
            gesture_duration_s=(25.0, 30.0),
        )
        subjects = synth.generate_dataset(cfg)
        events = [
            {b.activity_class: b for b in s.true_boxes if b.kind == "gestural"} for s in subjects
        ]
        common = sorted(set(events[0]) & set(events[1]))
        assert common, "expected a shared gesture class between subjects"
        cls = common[0]
        shapes = []
        for subject, table in zip(subjects, events):
            series = subject.recording.channels["eda"]
            i0 = int(round((table[cls].start_ms - series.start_ms) / series.period_ms))
            window = series.values[i0 : i0 + int(cfg.artifact_dur_s * cfg.eda_rate_hz)] - 2.0
            shapes.append(window / np.abs(window).max())
        assert np.abs(shapes[0] - shapes[1]).max() < 1e-9

    def test_template_functions_deterministic_per_class(self):
        a = synth.eda_artifact_template("gestural", 3, 4.0, 8.0)
        b = synth.eda_artifact_template("gestural", 3, 4.0, 8.0)
        c = synth.eda_artifact_template("gestural", 4, 4.0, 8.0)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert (a >= 0).all()

    def test_fatigued_spans_have_higher_eda(self):
        subjects = synth.generate_dataset(small_cfg(seed=5, n_subjects=3, hours_per_subject=0.5))
        fatigued, alert = [], []
        for subject in subjects:
            series = subject.recording.channels["eda"]
            for span in subject.recording.labels:
                i0 = int((span.start_ms - series.start_ms) / series.period_ms)
                i1 = int((span.end_ms - series.start_ms) / series.period_ms)
                chunk = series.values[i0:i1]
                if len(chunk) == 0:
                    continue
                (fatigued if span.sss >= 4 else alert).append(float(np.nanmean(chunk)))
        assert np.mean(fatigued) > np.mean(alert)

    def test_fatigue_thins_gesture_bouts(self):
        cfg = small_cfg(seed=8, n_subjects=4, hours_per_subject=0.5)
        coverage = {0: [], 1: []}
        for subject in synth.generate_dataset(cfg):
            spans = subject.recording.labels
            for span in spans:
                dur = span.end_ms - span.start_ms
                label = 1 if span.sss >= 4 else 0
                coverage[label].append((span.gesture_id > 0) * dur)
        assert np.mean(coverage[0]) > np.mean(coverage[1])


class TestOutputs:
    def test_labels_tile_the_timeline(self):
        cfg = small_cfg(seed=2, n_subjects=1)
        rec = synth.generate_dataset(cfg)[0].recording
        spans = sorted(rec.labels, key=lambda s: s.start_ms)
        for a, b in zip(spans, spans[1:]):
            assert a.end_ms == pytest.approx(b.start_ms)
        assert all(1 <= s.sss <= 7 for s in spans)
        assert all(s.gesture_id is not None and s.posture_id is not None for s in spans)

    def test_missing_fraction_injected(self):
        cfg = small_cfg(seed=4, n_subjects=1, missing_fraction=0.05)
        rec = synth.generate_dataset(cfg)[0].recording
        for series in rec.channels.values():
            frac = np.isnan(series.values).mean()
            assert 0.03 <= frac <= 0.12

    def test_write_dataset_roundtrips_through_ingest(self, tmp_path):
        subjects = synth.generate_dataset(small_cfg(seed=6, n_subjects=1, hours_per_subject=0.05))
        synth.write_dataset(subjects, tmp_path)
        sub_dir = tmp_path / subjects[0].recording.subject_id
        assert (sub_dir / "ground_truth_boxes.csv").exists()
        back = ingest.load_recording(
            {k: sub_dir / f"{k}.csv" for k in ("acc", "eda", "bvp")},
            sub_dir / "labels.csv",
            subject_id="s00",
        )
        orig = subjects[0].recording
        for cid in orig.channels:
            assert np.array_equal(back.channels[cid].values, orig.channels[cid].values, equal_nan=True)
