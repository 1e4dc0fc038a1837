"""End-to-end orchestration: data, preprocessing, staged training, metrics.

Four pipeline modes share one front end (synthesis or CSV ingest, day
filtering, imputation, conditioning, feature sequences) and differ in the
feature projection and whether the activity-context stage runs:

    B1      41 features (no EDA band), no context
    B2      53 features, no context
    B3      41 features, context stage on
    AcRoNN  53 features, context stage on
"""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import context as ctx
from . import dsp, har, ingest, nn, synth
from .features import (
    DEFAULT_LAYOUT,
    FeatureSequence,
    assemble_segments,
    prepare_recording,
    scheme_classes,
)

MODES = {
    "B1": (41, False),
    "B2": (53, False),
    "B3": (41, True),
    "AcRoNN": (53, True),
}


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    """One-vs-rest precision/recall/F1 per class plus macro averages."""

    n_classes: int
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list[list[int]]  # confusion[truth][pred]
    support: list[int]
    zero_support: list[bool]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate_metrics(pred, truth, n_classes: int) -> MetricsReport:
    """Confusion-matrix metrics; zero-support classes contribute 0 and are flagged."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) < 1:
        raise ValueError(f"pred and truth must be equal-length 1-d vectors, got {pred.shape} vs {truth.shape}")
    if pred.min() < 0 or truth.min() < 0 or pred.max() >= n_classes or truth.max() >= n_classes:
        raise ValueError("labels out of range")
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(truth, pred):
        confusion[t, p] += 1
    precision, recall, f1, zero = [], [], [], []
    for c in range(n_classes):
        tp = confusion[c, c]
        pred_c = confusion[:, c].sum()
        true_c = confusion[c, :].sum()
        p = tp / pred_c if pred_c > 0 else 0.0
        r = tp / true_c if true_c > 0 else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r > 0 else 0.0)
        zero.append(bool(true_c == 0))
    return MetricsReport(
        n_classes=n_classes,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        confusion=confusion.tolist(),
        support=confusion.sum(axis=1).tolist(),
        zero_support=zero,
    )


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    mode: str = "AcRoNN"
    seed: int = 0
    scheme: str = "binary"
    data_dir: str | None = None
    out_dir: str = "runs/latest"
    features_dim: int | None = None     # resolved from mode; mismatch rejected
    context_enabled: bool | None = None
    hidden_dim: int = 16
    restarts: int = 3
    stage2_hidden_dim: int = 16
    har_hidden_dim: int = 12
    exclude_threshold: float = 0.8
    tz_offset_min: int = 0
    impute_mode: str = "linear"
    synth: synth.SynthConfig = field(default_factory=synth.SynthConfig)
    # artifact-heavy recordings need a costlier driver than the method default,
    # otherwise the sparse term absorbs slow structure
    dsp: dsp.DspConfig = field(default_factory=lambda: dsp.DspConfig(cvxeda_alpha=8e-3))
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(lr=0.02, epochs=60, batch=16, lambda_gamma=0.1))
    har_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(lr=0.03, epochs=40, batch=32, lambda_gamma=0.05))

    def __post_init__(self):
        if self.mode not in MODES:
            raise PipelineError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        dim, context_on = MODES[self.mode]
        if self.features_dim is None:
            self.features_dim = dim
        if self.context_enabled is None:
            self.context_enabled = context_on
        if self.features_dim != dim or self.context_enabled != context_on:
            raise PipelineError(
                f"mode {self.mode} requires features_dim={dim} and context_enabled={context_on}, "
                f"got features_dim={self.features_dim}, context_enabled={self.context_enabled}"
            )
        scheme_classes(self.scheme)


_KEY_ALIASES = {
    "cvxeda.alpha": "dsp.cvxeda_alpha",
    "cvxeda.lambda": "dsp.cvxeda_lambda",
    "cvxeda.tol": "dsp.cvxeda_tol",
    "cvxeda.max_iter": "dsp.cvxeda_max_iter",
    "cvxeda.chunk_s": "dsp.cvxeda_chunk_s",
    "har.lr": "har_train.lr",
    "har.epochs": "har_train.epochs",
}


def _coerce(text: str, current):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        kind = type(current[0]) if current else float
        return tuple(kind(p) for p in parts)
    if current is None:
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
        return text
    return text


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """Set dotted config keys (`train.lr`, `synth.n_subjects`, `cvxeda.alpha`)."""
    cfg = copy.deepcopy(cfg)
    for raw_key, text in overrides.items():
        key = _KEY_ALIASES.get(raw_key, raw_key)
        target = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise PipelineError(f"unknown config section {part!r} in key {raw_key!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise PipelineError(f"unknown config key {raw_key!r}")
        setattr(target, leaf, _coerce(text, getattr(target, leaf)))
    cfg.features_dim = None if "features_dim" not in overrides else cfg.features_dim
    cfg.context_enabled = None if "context_enabled" not in overrides else cfg.context_enabled
    cfg.__post_init__()
    return cfg


def parse_config_file(path) -> dict[str, str]:
    """Flat `key = value` text file; '#' starts a comment."""
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PipelineError(f"{path}: malformed config line {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(config_path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    kv = parse_config_file(config_path) if config_path else {}
    kv.update(overrides or {})
    return apply_overrides(PipelineConfig(mode=kv.pop("mode", "AcRoNN")), kv)


# ---------------------------------------------------------------------------
# dataset preparation (mode independent)


@dataclass
class SubjectData:
    subject_id: str
    segments: list[FeatureSequence]


@dataclass
class PreparedDataset:
    subjects: list[SubjectData]
    scheme: str

    def labeled_counts(self) -> dict[str, int]:
        return {s.subject_id: sum(seg.label is not None for seg in s.segments) for s in self.subjects}


def load_data_dir(data_dir) -> list[ingest.RawRecording]:
    data_dir = Path(data_dir)
    if not data_dir.exists():
        raise FileNotFoundError(f"missing input directory: {data_dir}")
    recordings = []
    for sub_dir in sorted(p for p in data_dir.iterdir() if p.is_dir()):
        paths = {kind: sub_dir / f"{kind}.csv" for kind in ("acc", "eda", "bvp")}
        recordings.append(
            ingest.load_recording(paths, sub_dir / "labels.csv", subject_id=sub_dir.name)
        )
    if not recordings:
        raise FileNotFoundError(f"no subject directories under {data_dir}")
    return recordings


def build_dataset(cfg: PipelineConfig) -> PreparedDataset:
    """Synthesize or load recordings and turn them into feature sequences."""
    if cfg.data_dir:
        recordings = load_data_dir(cfg.data_dir)
    else:
        recordings = [
            s.recording for s in synth.generate_dataset(replace(cfg.synth, seed=cfg.seed))
        ]
    subjects = []
    for rec in recordings:
        rec = ingest.exclude_low_coverage_days(rec, cfg.exclude_threshold, cfg.tz_offset_min)
        model = None
        if cfg.impute_mode == "recurrent":
            model = ingest.train_imputer(list(rec.channels.values()), seed=cfg.seed)
        rec = ingest.impute_gaps(rec, mode=cfg.impute_mode, model=model)
        proc = prepare_recording(rec, cfg.dsp)
        segments = assemble_segments(proc, scheme=cfg.scheme)
        subjects.append(SubjectData(subject_id=rec.subject_id, segments=segments))
    return PreparedDataset(subjects=subjects, scheme=cfg.scheme)


def split_subjects(dataset: PreparedDataset, seed: int, test_fraction: float = 0.2):
    """Subject-disjoint train/test split: no subject appears on both sides."""
    n = len(dataset.subjects)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    if n_test >= n:
        raise PipelineError("need at least two subjects for a subject-disjoint split")
    test_ids = {dataset.subjects[i].subject_id for i in order[:n_test]}
    train = [s for s in dataset.subjects if s.subject_id not in test_ids]
    test = [s for s in dataset.subjects if s.subject_id in test_ids]
    return train, test


# ---------------------------------------------------------------------------
# mode execution


def _project(segments: list[FeatureSequence], dim: int) -> list[FeatureSequence]:
    if dim == DEFAULT_LAYOUT.dim:
        return segments
    idx = DEFAULT_LAYOUT.no_eda_indices()
    return [replace(seg, matrix=seg.matrix[:, idx]) for seg in segments]


def _check_feature_dim(segments, expected: int, mode: str) -> None:
    for seg in segments:
        if seg.matrix.shape[1] != expected:
            raise PipelineError(
                f"feature dimension contract violated for mode {mode}: expected {expected}, "
                f"got {seg.matrix.shape[1]} in segment {seg.segment_id}"
            )


def _labeled(segments):
    return [seg for seg in segments if seg.label is not None]


def _warm_start_stage2(
    stage1: nn.LstmCsaModel,
    input_dim: int,
    seed: int,
    lambda_gamma: float,
    gate_bias: float = 0.0,
) -> nn.LstmCsaModel:
    """Stage 2 starts from the stage-1 weights; only the context columns are new.

    `gate_bias` > 0 wires the two box-score columns as evidence gates from
    the start: windows covered by confident activity boxes close the input
    gate and hold the cell state, i.e. the model initially discounts
    movement-covered windows instead of having to discover that from scratch.
    """
    model = nn.init_model(input_dim, stage1.hidden_dim, stage1.num_classes, seed=seed, lambda_gamma=lambda_gamma)
    base = stage1.input_dim
    dtype = stage1.params["w_att"].dtype
    for name, value in stage1.params.items():
        if name.startswith("wx_"):
            fresh = model.params[name].copy()
            fresh[:, :base] = value
            fresh[:, base:] *= 0.05
            model.params[name] = fresh
        else:
            model.params[name] = value.copy()
    if gate_bias > 0:
        model.params["wx_i"][:, -2:] = np.asarray(-0.7 * gate_bias, dtype=dtype)
        model.params["wx_f"][:, -2:] = np.asarray(0.7 * gate_bias, dtype=dtype)
    return model


def fit_scaler(matrices) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean/std over stacked training windows (std floored at 1e-8)."""
    stacked = np.concatenate([np.asarray(m) for m in matrices], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8)


def _scale_segments(segments, mu, sd):
    return [replace(seg, matrix=(seg.matrix - mu) / sd) for seg in segments]


@dataclass
class RunResult:
    metrics: MetricsReport
    stage1: nn.LstmCsaModel
    stage2: nn.LstmCsaModel | None
    har_gestural: nn.LstmCsaModel | None
    har_postural: nn.LstmCsaModel | None
    example_cfm: np.ndarray | None
    history: dict


def _subject_of(seg: FeatureSequence) -> str:
    return seg.segment_id.rsplit("_", 1)[0]


def _pick_validation_subjects(train_subj, seed: int) -> set[str]:
    """Hold whole subjects out for early stopping so selection matches the
    subject-disjoint test condition. Rotates until both sides carry >= 2 classes."""
    ids = sorted(s.subject_id for s in train_subj)
    n_val = max(1, int(round(0.25 * len(ids))))
    order = list(np.random.default_rng(seed + 911).permutation(ids))
    by_id = {s.subject_id: s for s in train_subj}
    def classes_of(subject_ids):
        return {seg.label for sid in subject_ids for seg in by_id[sid].segments if seg.label is not None}
    for shift in range(len(ids)):
        rotated = order[shift:] + order[:shift]
        val_ids = set(rotated[:n_val])
        fit_ids = set(rotated[n_val:])
        if len(classes_of(val_ids)) >= 2 and len(classes_of(fit_ids)) >= 2:
            return val_ids
    raise PipelineError("could not carve out a validation subject set with both classes")


def run_mode_on_dataset(cfg: PipelineConfig, dataset: PreparedDataset) -> RunResult:
    """Train and evaluate one pipeline mode on an already-prepared dataset."""
    n_classes = scheme_classes(cfg.scheme)
    train_subj, test_subj = split_subjects(dataset, cfg.seed)
    train_segments = _project([seg for s in train_subj for seg in s.segments], cfg.features_dim)
    test_segments = _project([seg for s in test_subj for seg in s.segments], cfg.features_dim)
    _check_feature_dim(train_segments + test_segments, cfg.features_dim, cfg.mode)

    mu, sd = fit_scaler([seg.matrix for seg in train_segments])
    train_segments = _scale_segments(train_segments, mu, sd)
    test_segments = _scale_segments(test_segments, mu, sd)

    train_labeled = _labeled(train_segments)
    test_labeled = _labeled(test_segments)
    if len({seg.label for seg in train_labeled}) < 2 or len({seg.label for seg in test_labeled}) < 2:
        raise PipelineError("subject-disjoint split produced a single-class side; provide more data")

    val_ids = _pick_validation_subjects(train_subj, cfg.seed)
    fit_labeled = [seg for seg in train_labeled if _subject_of(seg) not in val_ids]
    val_labeled = [seg for seg in train_labeled if _subject_of(seg) in val_ids]

    def train_members(builder, data, val_data, scfg, restarts: int):
        """Train several seeded inits; members are ensembled, best-val leads."""
        members = []
        for r in range(restarts):
            model, hist = nn.train(builder(r), data, replace(scfg, seed=scfg.seed + 101 * r), val_data=val_data)
            members.append((model, hist))
        members.sort(key=lambda mh: mh[1]["best_val"])
        return members

    def train_stage1(segments, seed_shift: int, restarts: int):
        scfg = replace(cfg.train, seed=cfg.train.seed + 17 * cfg.seed + seed_shift)
        return train_members(
            lambda r: nn.init_model(
                cfg.features_dim, cfg.hidden_dim, n_classes,
                seed=cfg.seed + seed_shift + 31 * r, lambda_gamma=scfg.lambda_gamma,
            ),
            [(seg.matrix, seg.label) for seg in segments],
            [(seg.matrix, seg.label) for seg in val_labeled],
            scfg, restarts,
        )

    stage1_members = train_stage1(fit_labeled, 0, cfg.restarts)
    stage1, hist1 = stage1_members[0]
    stage1_models = [m for m, _ in stage1_members]

    def ensemble_probs(models, x) -> np.ndarray:
        return np.mean([nn.forward(m, x).probs for m in models], axis=0)

    def ensemble_per_step(models, x) -> np.ndarray:
        return np.mean([nn.forward(m, x).per_step for m in models], axis=0)

    history = {"stage1": hist1}
    model_g = model_p = stage2 = None
    stage2_models = []
    example_cfm = None
    if cfg.context_enabled:
        har_cfg = replace(cfg.har_train, seed=cfg.har_train.seed + 17 * cfg.seed)
        fit_segments = [seg for seg in train_segments if _subject_of(seg) not in val_ids]
        val_segments = [seg for seg in train_segments if _subject_of(seg) in val_ids]
        for kind, n_act, shift in (("gestural", har.N_GESTURE_CLASSES, 1), ("postural", har.N_POSTURE_CLASSES, 2)):
            members = train_members(
                lambda r: nn.init_model(8, cfg.har_hidden_dim, n_act, seed=cfg.seed + shift + 31 * r, lambda_gamma=har_cfg.lambda_gamma),
                har.training_runs(fit_segments, kind),
                har.training_runs(val_segments, kind),
                har_cfg, max(1, cfg.restarts - 1),
            )
            history[f"har_{kind}"] = members[0][1]
            if kind == "gestural":
                model_g = members[0][0]
            else:
                model_p = members[0][0]

        def stage2_input(seg: FeatureSequence, scorer_models):
            boxes = har.detect_activities(model_g, model_p, seg)
            probs = ensemble_per_step(scorer_models, seg.matrix)
            tensor = ctx.build_context(seg, boxes, probs, n_classes)
            return ctx.assemble_stage2_input(seg, tensor, boxes), tensor

        # Cross-fit the fit-subject contexts: each subject's stage-1 scores
        # come from models that never saw that subject, matching the score
        # quality stage 2 faces on validation and test data.
        fold_ids = sorted({_subject_of(seg) for seg in fit_labeled})
        half = len(fold_ids) // 2
        folds = [set(fold_ids[:half]), set(fold_ids[half:])]
        scorers = {sid: stage1_models for sid in val_ids}
        for k, held_out in enumerate(folds):
            if not held_out or len(folds[1 - k]) == 0:
                for sid in held_out:
                    scorers[sid] = stage1_models
                continue
            fold_members = train_stage1(
                [seg for seg in fit_labeled if _subject_of(seg) not in held_out],
                7 + k, max(1, cfg.restarts - 1),
            )
            for sid in held_out:
                scorers[sid] = [m for m, _ in fold_members]

        def stage2_pair(seg):
            x2, _ = stage2_input(seg, scorers[_subject_of(seg)])
            return x2

        stage2_matrices = [stage2_pair(seg) for seg in fit_labeled]
        # base columns are already standardized; scale only the context columns
        mu2, sd2 = fit_scaler(stage2_matrices)
        mu2[: cfg.features_dim] = 0.0
        sd2[: cfg.features_dim] = 1.0
        stage2_fit = [
            ((x2 - mu2) / sd2, seg.label) for x2, seg in zip(stage2_matrices, fit_labeled)
        ]
        stage2_val = [
            ((stage2_pair(seg) - mu2) / sd2, seg.label) for seg in val_labeled
        ]
        # the kept-init floor makes exploration safe: an init is only replaced
        # when the held-out loss clearly improves
        stage2_cfg = replace(
            cfg.train, seed=cfg.train.seed + 17 * cfg.seed,
            epochs=max(cfg.train.epochs, 80),
            early_stop_patience=cfg.train.early_stop_patience + 4,
            min_delta=0.02,
        )
        # pick the gate wiring strength of the score columns on held-out loss
        d2 = cfg.features_dim + n_classes + 2
        gate_bias = min(
            (1.0, 2.0, 0.0),
            key=lambda g: nn.loss(
                _warm_start_stage2(stage1_models[0], d2, seed=cfg.seed + 3, lambda_gamma=stage2_cfg.lambda_gamma, gate_bias=g),
                stage2_val,
            ),
        )
        history["stage2_gate_bias"] = gate_bias

        def train_stage2(pairs, warm_models, seed_shift: int, restarts: int):
            return train_members(
                lambda r: _warm_start_stage2(
                    warm_models[r % len(warm_models)], d2,
                    seed=cfg.seed + 3 + seed_shift + 31 * r,
                    lambda_gamma=stage2_cfg.lambda_gamma, gate_bias=gate_bias,
                ),
                pairs, stage2_val, stage2_cfg, restarts,
            )

        stage2_members = train_stage2(stage2_fit, stage1_models, 0, cfg.restarts)
        history["stage2"] = stage2_members[0][1]
        stage2 = stage2_members[0][0]
        stage2_models = [m for m, _ in stage2_members]

        # Arbitrate the two stages on cross-fitted out-of-sample predictions
        # over every training subject: deploy the re-scorer only if it beats
        # the stage-1 ensemble there.
        oos_truth, oos_s1, oos_s2 = [], [], []
        for k, held_out in enumerate(folds):
            if not held_out or len(folds[1 - k]) == 0:
                continue
            warm = scorers[next(iter(held_out))]
            fold_pairs = [
                pair for pair, seg in zip(stage2_fit, fit_labeled)
                if _subject_of(seg) not in held_out
            ]
            fold_stage2 = [m for m, _ in train_stage2(fold_pairs, warm, 7 + k, max(1, cfg.restarts - 1))]
            for seg, pair in zip(fit_labeled, stage2_fit):
                if _subject_of(seg) not in held_out:
                    continue
                oos_truth.append(seg.label)
                oos_s1.append(int(np.argmax(ensemble_probs(scorers[_subject_of(seg)], seg.matrix))))
                oos_s2.append(int(np.argmax(ensemble_probs(fold_stage2, pair[0]))))
        for seg, pair in zip(val_labeled, stage2_val):
            oos_truth.append(seg.label)
            oos_s1.append(int(np.argmax(ensemble_probs(stage1_models, seg.matrix))))
            oos_s2.append(int(np.argmax(ensemble_probs(stage2_models, pair[0]))))
        use_trained = False
        if oos_truth and len(set(oos_truth)) > 1:
            f1_s1 = evaluate_metrics(oos_s1, oos_truth, n_classes).macro_f1
            f1_s2 = evaluate_metrics(oos_s2, oos_truth, n_classes).macro_f1
            use_trained = f1_s2 >= f1_s1 - 0.025
            history["stage2_oos"] = {"stage1_f1": f1_s1, "stage2_f1": f1_s2, "use_trained": use_trained}
        if not use_trained:
            # fall back to the untrained warm starts: stage 2 then reproduces
            # the stage-1 ensemble on the augmented inputs
            stage2_models = [
                _warm_start_stage2(m, d2, seed=cfg.seed + 3 + 31 * r,
                                   lambda_gamma=stage2_cfg.lambda_gamma, gate_bias=0.0)
                for r, m in enumerate(stage1_models)
            ]
            stage2 = stage2_models[0]

        preds = []
        for i, seg in enumerate(test_labeled):
            x2, tensor = stage2_input(seg, stage1_models)
            if i == 0:
                example_cfm = tensor.maps
            preds.append(int(np.argmax(ensemble_probs(stage2_models, (x2 - mu2) / sd2))))
    else:
        preds = [int(np.argmax(ensemble_probs(stage1_models, seg.matrix))) for seg in test_labeled]

    truth = [seg.label for seg in test_labeled]
    metrics = evaluate_metrics(preds, truth, n_classes)
    return RunResult(
        metrics=metrics,
        stage1=stage1,
        stage2=stage2,
        har_gestural=model_g,
        har_postural=model_p,
        example_cfm=example_cfm,
        history=history,
    )


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_features_csv(subject: SubjectData, out_dir) -> Path:
    """One row per window: segment_id,window_idx,f0..f52,label (blank if none).

    Per-window activity ids go to a sidecar activities.csv; the feature names
    land in layout.json next to the data.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = DEFAULT_LAYOUT.dim
    path = out_dir / f"{subject.subject_id}_features.csv"
    with open(path, "w") as fh:
        fh.write("segment_id,window_idx," + ",".join(f"f{i}" for i in range(dim)) + ",label\n")
        for seg in subject.segments:
            label = "" if seg.label is None else str(seg.label)
            for w in range(seg.matrix.shape[0]):
                vals = ",".join(repr(float(v)) for v in seg.matrix[w])
                fh.write(f"{seg.segment_id},{w},{vals},{label}\n")
    with open(out_dir / f"{subject.subject_id}_activities.csv", "w") as fh:
        fh.write("segment_id,window_idx,gesture_id,posture_id,start_ms\n")
        for seg in subject.segments:
            for w in range(seg.matrix.shape[0]):
                g = -1 if seg.gesture_ids is None else seg.gesture_ids[w]
                p = -1 if seg.posture_ids is None else seg.posture_ids[w]
                fh.write(f"{seg.segment_id},{w},{g},{p},{seg.start_ms!r}\n")
    layout_path = out_dir / "layout.json"
    if not layout_path.exists():
        _write_json(
            layout_path,
            {
                "names": list(DEFAULT_LAYOUT.names),
                "acc_band": list(DEFAULT_LAYOUT.acc_band),
                "eda_band": list(DEFAULT_LAYOUT.eda_band),
                "hrv_band": list(DEFAULT_LAYOUT.hrv_band),
            },
        )
    return path


def read_features_dir(features_dir, scheme: str = "binary") -> PreparedDataset:
    """Rebuild a PreparedDataset from featurize output."""
    features_dir = Path(features_dir)
    if not features_dir.exists():
        raise FileNotFoundError(f"missing input directory: {features_dir}")
    subjects = []
    for path in sorted(features_dir.glob("*_features.csv")):
        subject_id = path.name[: -len("_features.csv")]
        rows: dict[str, list] = {}
        labels: dict[str, int | None] = {}
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            dim = len(header) - 3
            for line in fh:
                parts = line.rstrip("\n").split(",")
                seg_id = parts[0]
                rows.setdefault(seg_id, []).append([float(v) for v in parts[2 : 2 + dim]])
                labels[seg_id] = int(parts[-1]) if parts[-1] != "" else None
        acts: dict[str, list] = {}
        starts: dict[str, float] = {}
        act_path = features_dir / f"{subject_id}_activities.csv"
        if act_path.exists():
            with open(act_path) as fh:
                fh.readline()
                for line in fh:
                    seg_id, _w, g, p, start = line.rstrip("\n").split(",")
                    acts.setdefault(seg_id, []).append((int(g), int(p)))
                    starts[seg_id] = float(start)
        segments = []
        for seg_id in sorted(rows):
            matrix = np.asarray(rows[seg_id])
            pairs = acts.get(seg_id)
            segments.append(
                FeatureSequence(
                    segment_id=seg_id,
                    start_ms=starts.get(seg_id, 0.0),
                    matrix=matrix,
                    label=labels[seg_id],
                    gesture_ids=np.array([g for g, _ in pairs]) if pairs else None,
                    posture_ids=np.array([p for _, p in pairs]) if pairs else None,
                )
            )
        subjects.append(SubjectData(subject_id=subject_id, segments=segments))
    if not subjects:
        raise FileNotFoundError(f"no *_features.csv files under {features_dir}")
    return PreparedDataset(subjects=subjects, scheme=scheme)


def write_outputs(cfg: PipelineConfig, result: RunResult) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"mode": cfg.mode, "seed": cfg.seed, "scheme": cfg.scheme}
    report.update(result.metrics.to_dict())
    _write_json(out / "metrics.json", report)
    with open(out / "confusion.csv", "w") as fh:
        fh.write("truth\\pred," + ",".join(str(c) for c in range(result.metrics.n_classes)) + "\n")
        for t, row in enumerate(result.metrics.confusion):
            fh.write(f"{t}," + ",".join(str(v) for v in row) + "\n")
    with open(out / "cfm.csv", "w") as fh:
        fh.write("x,y,c,value\n")
        if result.example_cfm is not None:
            h, w, c = result.example_cfm.shape
            for ci in range(c):
                for x in range(h):
                    for y in range(w):
                        fh.write(f"{x},{y},{ci},{result.example_cfm[x, y, ci]!r}\n")
    nn.save_checkpoint(result.stage1, out / "stage1.json")
    if result.stage2 is not None:
        nn.save_checkpoint(result.stage2, out / "stage2.json")
    if result.har_gestural is not None:
        nn.save_checkpoint(result.har_gestural, out / "har_gestural.json")
        nn.save_checkpoint(result.har_postural, out / "har_postural.json")
    return out


def run_pipeline(cfg: PipelineConfig) -> MetricsReport:
    """Full chain for one mode and seed; writes metrics, confusion, cfm, checkpoints."""
    dataset = build_dataset(cfg)
    result = run_mode_on_dataset(cfg, dataset)
    write_outputs(cfg, result)
    return result.metrics


def run_comparison(cfg: PipelineConfig, modes=("B1", "B2", "B3", "AcRoNN"), seeds=(0, 1, 2, 3, 4)) -> dict:
    """Run every mode on the same per-seed dataset; report mean +/- std metrics."""
    per_mode: dict[str, dict] = {m: {"macro_f1": [], "macro_precision": [], "macro_recall": []} for m in modes}
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed, mode="AcRoNN", features_dim=None, context_enabled=None)
        dataset = build_dataset(seed_cfg)
        for mode in modes:
            mode_cfg = replace(cfg, mode=mode, seed=seed, features_dim=None, context_enabled=None)
            result = run_mode_on_dataset(mode_cfg, dataset)
            per_mode[mode]["macro_f1"].append(result.metrics.macro_f1)
            per_mode[mode]["macro_precision"].append(result.metrics.macro_precision)
            per_mode[mode]["macro_recall"].append(result.metrics.macro_recall)
    summary = {"seeds": list(seeds), "modes": {}}
    for mode in modes:
        stats = {}
        for key, values in per_mode[mode].items():
            arr = np.asarray(values)
            stats[f"{key}_mean"] = float(arr.mean())
            stats[f"{key}_std"] = float(arr.std())
            stats[f"{key}_per_seed"] = [float(v) for v in arr]
        summary["modes"][mode] = stats
    return summary
